import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticegen.lm import TailDistribution, quantize_logprob
from latticegen.transcript import TranscriptConfig, TranscriptError, TranscriptRecord
from latticegen.lattice import lattice_from_columns
from latticegen.wire import (
    Dists,
    Done,
    Error,
    Hello,
    Tokens,
    WireError,
    decode_message,
    decode_stream,
    encode_message,
    encode_stream,
)


def sample_dist(tail=(3,)):
    return TailDistribution(
        tail,
        (
            (7, quantize_logprob(math.log(0.625))),
            (2, quantize_logprob(math.log(0.25))),
            (9, quantize_logprob(math.log(0.125))),
        ),
    )


class TestRoundTrips:
    def test_hello(self):
        msg = Hello(n=2, g=1, k=50, t_max=60, vocab_hash="ff" * 32)
        assert decode_message(encode_message(msg)) == msg

    def test_tokens(self):
        msg = Tokens(t=4, ids=(9, 2))
        assert decode_message(encode_message(msg)) == msg

    def test_done_and_error(self):
        assert decode_message(encode_message(Done(60))) == Done(60)
        err = Error("out_of_order", "expected t=3")
        assert decode_message(encode_message(err)) == err

    def test_dists_exact(self):
        msg = Dists(t=1, items=(sample_dist(), sample_dist((4,))))
        back = decode_message(encode_message(msg))
        assert back == msg

    @given(st.lists(st.floats(min_value=-50.0, max_value=-1e-12), min_size=1, max_size=8))
    @settings(max_examples=60)
    def test_logprob_strings_round_trip(self, lps):
        lps = sorted({quantize_logprob(lp) for lp in lps}, reverse=True)
        entries = tuple((i, lp) for i, lp in enumerate(lps))
        msg = Dists(t=1, items=(TailDistribution((0,), entries),))
        assert decode_message(encode_message(msg)) == msg

    def test_stream(self):
        msgs = [Hello(2, 1, 50, 3, "x"), Tokens(0, (0, 0)), Done(3)]
        assert decode_stream(encode_stream(msgs)) == msgs

    def test_lines_are_newline_terminated_json(self):
        data = encode_message(Tokens(1, (5, 6)))
        assert data.endswith(b"\n") and data.count(b"\n") == 1
        assert data.startswith(b"{")


class TestMalformed:
    def test_empty_line(self):
        with pytest.raises(WireError):
            decode_message(b"")

    def test_bad_json(self):
        with pytest.raises(WireError):
            decode_message(b"{nope}")

    def test_missing_type(self):
        with pytest.raises(WireError):
            decode_message(b'{"t": 3}')

    def test_unknown_type(self):
        with pytest.raises(WireError):
            decode_message(b'{"type": "quux"}')

    def test_missing_field(self):
        with pytest.raises(WireError):
            decode_message(b'{"type": "tokens", "t": 1}')

    def test_non_wire_object_rejected(self):
        with pytest.raises(WireError):
            encode_message(object())


class TestTranscriptIo:
    def make(self):
        lat = lattice_from_columns(2, [[7, 2], [9, 5]])
        cfg = TranscriptConfig(n=2, g=1, k=50, bos_id=0, vocab_hash="h")
        dists = (
            (sample_dist((0,)), sample_dist((0,))),
            (sample_dist((7,)), sample_dist((2,))),
        )
        return TranscriptRecord(cfg, lat, dists)

    def test_round_trip(self, tmp_path):
        tr = self.make()
        path = tmp_path / "session.lgt"
        tr.save(path)
        back = TranscriptRecord.load(path)
        assert back == tr
        # serialization is canonical: saving again is byte-identical
        back.save(tmp_path / "again.lgt")
        assert path.read_bytes() == (tmp_path / "again.lgt").read_bytes()

    def test_validates_batch_count(self):
        lat = lattice_from_columns(2, [[7, 2]])
        cfg = TranscriptConfig(n=2, g=1, k=50, bos_id=0)
        with pytest.raises(TranscriptError):
            TranscriptRecord(cfg, lat, ((sample_dist((0,)),),))

    def test_dists_at_bounds(self):
        tr = self.make()
        with pytest.raises(TranscriptError):
            tr.dists_at(3)

    def test_rejects_foreign_document(self):
        with pytest.raises(TranscriptError):
            TranscriptRecord.from_json({"format": "other"})
