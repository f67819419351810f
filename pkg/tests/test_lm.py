import math

import numpy as np
import pytest

from latticegen.lm import (
    ModelError,
    NGramModel,
    SamplerConfig,
    TailDistribution,
    dists_by_tail,
    perplexity,
    plain_generate,
    quantize_logprob,
    sample,
    train,
)
from latticegen.rng import Rng


def toy_model(order=2, vocab_size=4, add_k=1.0, lambdas=None, corpus=((1, 2, 1, 2),)):
    return train(
        [list(seq) for seq in corpus],
        order=order,
        vocab_size=vocab_size,
        bos_id=0,
        add_k=add_k,
        lambdas=lambdas,
    )


class TestTraining:
    def test_bigram_add_one_hand_computed(self):
        # corpus "a b a b" with a=1, b=2; pure add-1 on the bigram table:
        # count(a b) = 2, count(a _) = 2, |V| = 4 -> (2+1)/(2+4) = 0.5
        model = toy_model(add_k=1.0, lambdas=[0.0, 1.0])
        assert model.full_dist((1,))[2] == pytest.approx(0.5)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ModelError):
            train([], order=2, vocab_size=4)

    def test_out_of_vocab_token_rejected(self):
        with pytest.raises(ModelError):
            train([[9]], order=2, vocab_size=4)

    def test_normalization_over_random_contexts(self, bigram_model):
        rng = Rng(31337)
        for _ in range(100):
            tail = (rng.randbelow(bigram_model.vocab_size),)
            assert bigram_model.full_dist(tail).sum() == pytest.approx(1.0, abs=1e-9)

    def test_unseen_context_backs_off(self):
        model = toy_model(lambdas=[1.0, 0.0])
        unigram = model.full_dist((3,))
        # all weight on the unigram order: any context gives the unigram dist
        assert np.allclose(unigram, model.full_dist((1,)))
        assert unigram.sum() == pytest.approx(1.0, abs=1e-12)

    def test_lambda_validation(self):
        with pytest.raises(ModelError):
            NGramModel(2, 4, lambdas=[0.5, 0.6])
        with pytest.raises(ModelError):
            NGramModel(2, 4, lambdas=[1.0])


class TestNextDist:
    def test_depends_only_on_tail(self, bigram_model):
        tail = (5,)
        a = bigram_model.next_dist([0, 1, 2, 3], tail)
        b = bigram_model.next_dist([9, 9, 9, 9, 9, 9], tail)
        assert a == b

    def test_top_entry_is_argmax(self, bigram_model):
        tail = (7,)
        dist = bigram_model.next_dist((), tail)
        full = bigram_model.full_dist(tail)
        assert dist.entries[0][0] == int(np.lexsort((np.arange(len(full)), -full))[0])

    def test_top_k_cap(self, bigram_model):
        for tail in [(3,), (11,), (200,)]:
            assert len(bigram_model.next_dist((), tail, k=50).entries) <= 50

    def test_truncation_is_a_prefix(self, bigram_model):
        full = bigram_model.next_dist((), (4,), k=None)
        top = bigram_model.next_dist((), (4,), k=10)
        assert top.entries == full.entries[:10]

    def test_tail_length_mismatch(self, bigram_model):
        with pytest.raises(ModelError):
            bigram_model.next_dist((), (1, 2))

    def test_entries_sorted_and_quantized(self, bigram_model):
        dist = bigram_model.next_dist((), (4,))
        lps = [lp for _, lp in dist.entries]
        assert lps == sorted(lps, reverse=True)
        for lp in lps:
            assert lp == quantize_logprob(lp)
            assert float(f"{lp:.9g}") == lp

    def test_distribution_invariants_enforced(self):
        with pytest.raises(ModelError):
            TailDistribution((1,), ((2, 0.5),))
        with pytest.raises(ModelError):
            TailDistribution((1,), ((2, -1.0), (2, -2.0)))
        with pytest.raises(ModelError):
            TailDistribution((1,), ((2, -3.0), (3, -1.0)))


class TestSampler:
    def dist(self):
        return TailDistribution(
            (0,),
            (
                (5, math.log(0.5)),
                (6, math.log(0.3)),
                (7, math.log(0.2)),
            ),
        )

    def test_k1_returns_argmax(self):
        cfg = SamplerConfig(k=1, temperature=1.0, repetition_penalty=1.0)
        assert sample(self.dist(), cfg, (), Rng(0)) == 5

    def test_low_temperature_matches_k1(self):
        cold = SamplerConfig(k=50, temperature=1e-9, repetition_penalty=1.0)
        for seed in range(10):
            assert sample(self.dist(), cold, (), Rng(seed)) == 5

    def test_repetition_penalty_flips_argmax(self):
        close = TailDistribution((0,), ((5, math.log(0.5)), (6, math.log(0.49))))
        cfg = SamplerConfig(k=1, temperature=1.0, repetition_penalty=1.05)
        assert sample(close, cfg, (5,), Rng(0)) == 6
        no_pen = SamplerConfig(k=1, temperature=1.0, repetition_penalty=1.0)
        assert sample(close, no_pen, (5,), Rng(0)) == 5

    def test_determinism(self):
        cfg = SamplerConfig(k=3, temperature=0.7, repetition_penalty=1.05)
        tokens = {sample(self.dist(), cfg, (6,), Rng(99)) for _ in range(5)}
        assert len(tokens) == 1

    def test_empirical_frequencies(self):
        cfg = SamplerConfig(k=3, temperature=1.0, repetition_penalty=1.0)
        rng = Rng(4)
        hits = sum(sample(self.dist(), cfg, (), rng) == 5 for _ in range(4000))
        assert abs(hits / 4000 - 0.5) < 0.03

    def test_empty_distribution_rejected(self):
        with pytest.raises(ModelError):
            sample(TailDistribution((0,), ()), SamplerConfig(), (), Rng(0))


class TestPerplexity:
    def test_uniform_model(self):
        # one occurrence of every token, unigram only, no smoothing: P = 1/64
        model = train(
            [list(range(64))], order=1, vocab_size=64, add_k=0.0, lambdas=[1.0]
        )
        assert perplexity(model, [5, 9, 63]) == pytest.approx(64.0, abs=1e-6)

    def test_deterministic_model(self):
        model = train(
            [[1, 2, 1, 2]], order=2, vocab_size=3, add_k=0.0, lambdas=[0.0, 1.0]
        )
        assert perplexity(model, [1, 2, 1, 2]) == pytest.approx(1.0, abs=1e-12)

    def test_matches_reference_implementation(self, bigram_model):
        text = [4, 7, 9, 11, 2, 4]
        # ten-line independent scorer, straight from the definition
        logs = []
        prev = bigram_model.bos_id
        for tok in text:
            logs.append(math.log(bigram_model.full_dist((prev,))[tok]))
            prev = tok
        expected = math.exp(-sum(logs) / len(logs))
        assert perplexity(bigram_model, text) == pytest.approx(expected, rel=1e-12)

    def test_empty_text_rejected(self, bigram_model):
        with pytest.raises(ModelError):
            perplexity(bigram_model, [])


class TestPlainGeneration:
    def test_deterministic(self, bigram_model):
        a = plain_generate(bigram_model, (), 20, SamplerConfig(), Rng(8))
        b = plain_generate(bigram_model, (), 20, SamplerConfig(), Rng(8))
        assert a == b and len(a) == 20

    def test_prompt_is_copied(self, bigram_model):
        out = plain_generate(bigram_model, (9, 4, 7), 10, SamplerConfig(), Rng(8))
        assert out[:3] == [9, 4, 7]

    def test_eot_padding_consumes_no_randomness(self):
        # after <eot> (id 2) the output is padded without further draws
        model = train(
            [[1, 2]] * 3, order=2, vocab_size=3, add_k=0.0, lambdas=[0.0, 1.0]
        )
        out = plain_generate(
            model, (), 6, SamplerConfig(k=1), Rng(0), eot_id=2
        )
        assert out == [1, 2, 2, 2, 2, 2]


class TestModelIo:
    def test_save_load_round_trip(self, tmp_path, bigram_model):
        path = tmp_path / "model.bin"
        bigram_model.save(path)
        loaded = NGramModel.load(path)
        for tail in [(3,), (17,), (400,)]:
            assert loaded.next_dist((), tail) == bigram_model.next_dist((), tail)
        assert loaded.order == bigram_model.order
        assert loaded.lambdas == bigram_model.lambdas

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ModelError):
            NGramModel.load(path)


def test_dists_by_tail_collapses_duplicates():
    d1 = TailDistribution((1,), ((2, -1.0),))
    d2 = TailDistribution((1,), ((3, -1.0),))
    out = dists_by_tail([d1, d2])
    assert out[(1,)] is d1
