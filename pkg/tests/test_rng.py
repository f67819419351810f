import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticegen.rng import Rng, derive_seed, splitmix64

# Reference outputs of the splitmix64 mixing function for state 0, as
# published with the original algorithm.
SPLITMIX64_SEED0 = [
    0xE220A8397B1DCDAF,
    0x6E789E6AA1B965F4,
    0x06C45D188009454F,
    0xF88BB8A8724C81EC,
    0x1B39896A51A8749B,
]


def test_splitmix64_reference_vector():
    state = 0
    outs = []
    for _ in range(5):
        state, out = splitmix64(state)
        outs.append(out)
    assert outs == SPLITMIX64_SEED0


def test_same_seed_same_stream():
    a, b = Rng(987654321), Rng(987654321)
    assert [a.next_u64() for _ in range(20)] == [b.next_u64() for _ in range(20)]


def test_clone_preserves_position():
    r = Rng(5)
    r.next_u64()
    c = r.clone()
    assert [r.next_u64() for _ in range(5)] == [c.next_u64() for _ in range(5)]


def test_random_unit_interval():
    r = Rng(1)
    values = [r.random() for _ in range(2000)]
    assert all(0.0 <= v < 1.0 for v in values)
    assert abs(sum(values) / len(values) - 0.5) < 0.02


@given(st.integers(min_value=1, max_value=97), st.integers(min_value=0, max_value=2**32))
@settings(max_examples=50)
def test_randbelow_range(n, seed):
    r = Rng(seed)
    assert all(0 <= r.randbelow(n) < n for _ in range(20))


def test_randbelow_rejects_nonpositive():
    with pytest.raises(ValueError):
        Rng(0).randbelow(0)


@given(st.lists(st.integers(), min_size=0, max_size=30), st.integers(min_value=0, max_value=2**32))
@settings(max_examples=50)
def test_shuffle_is_permutation(items, seed):
    shuffled = list(items)
    Rng(seed).shuffle(shuffled)
    assert sorted(shuffled) == sorted(items)


def test_sample_index_distribution():
    r = Rng(7)
    weights = [1.0, 3.0]
    hits = sum(r.sample_index(weights) for _ in range(4000))
    assert abs(hits / 4000 - 0.75) < 0.03


def test_sample_index_validates():
    with pytest.raises(ValueError):
        Rng(0).sample_index([0.0, 0.0])
    with pytest.raises(ValueError):
        Rng(0).sample_index([1.0, -1.0])


def test_derive_seed_label_separation():
    assert derive_seed(1, "true") != derive_seed(1, "noise")
    assert derive_seed(1, "ab") != derive_seed(1, "a", "b")
    assert derive_seed(1, 2) != derive_seed(12)
    assert derive_seed(5, "x") == derive_seed(5, "x")


def test_spawn_streams_are_independent():
    base = Rng(99)
    t1 = base.spawn("true")
    n1 = base.spawn("noise")
    t2 = Rng(99).spawn("true")
    assert [t1.next_u64() for _ in range(5)] == [t2.next_u64() for _ in range(5)]
    assert t1.next_u64() != n1.next_u64()


def test_choice_empty_rejected():
    with pytest.raises(ValueError):
        Rng(0).choice([])


def test_uniformity_chi_square():
    # 4 bins, 4000 draws; loose bound keeps this deterministic check honest.
    from scipy.stats import chisquare

    r = Rng(123)
    counts = [0, 0, 0, 0]
    for _ in range(4000):
        counts[r.randbelow(4)] += 1
    assert chisquare(counts).pvalue > 0.01


def test_float_precision_is_53_bits():
    r = Rng(42)
    v = r.random()
    assert v == math.floor(v * (1 << 53)) / (1 << 53)
