import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddxt.errors import CorpusError, ParameterError
from ddxt.tokenizer import (BOS, EOS, PAD, SPECIALS, UNK_ID, Vocabulary, build_vocab, decode, encode)

token = st.text(alphabet="ABCDEFGHIJ_0123456789@", min_size=1, max_size=8)


def test_specials_have_fixed_ids():
    v = build_vocab([])
    assert len(v) == 5
    assert [v.id(t) for t in SPECIALS] == [0, 1, 2, 3, 4]


def test_dedup_keeps_first_seen_order():
    v = build_vocab(["a", "b", "a"])
    assert (v.id("a"), v.id("b"), len(v)) == (5, 6, 7)


def test_49_pathologies_give_54_ids():
    assert len(build_vocab(f"path{i}" for i in range(49))) == 54


def test_special_collision_is_rejected():
    with pytest.raises(CorpusError):
        build_vocab(["x", "<eos>"])


def test_vocab_requires_specials_prefix():
    with pytest.raises(CorpusError):
        Vocabulary(["a", "b"])


def test_encode_pads_and_reports_true_length():
    v = build_vocab(["X"])
    enc = encode([BOS, "X", EOS], v, 5)
    assert enc.ids.tolist() == [1, 5, 2, 0, 0]
    assert enc.true_length == 3


def test_unknown_token_maps_to_unk():
    assert encode(["zzz"], build_vocab(["X"]), 3).ids[0] == UNK_ID


def test_truncation_drops_tail():
    toks = [f"t{i}" for i in range(100)]
    v = build_vocab(toks)
    enc = encode(toks, v, 80)
    assert len(enc.ids) == 80
    assert decode(enc.ids, v) == toks[:80]


def test_encode_rejects_tiny_max_len():
    with pytest.raises(ParameterError):
        encode(["a"], build_vocab(["a"]), 1)


def test_decode_stops_at_eos():
    v = build_vocab(["a", "b", "X", "c", "Y"])
    assert decode([1, 7, 2, 0, 0], v) == ["X"]
    assert decode([1, 7, 2, 9], v) == ["X"]
    assert decode([1, 7, 2, 9], v, strip_specials=False) == [BOS, "X", EOS, "Y"]


def test_decode_rejects_out_of_range_id():
    with pytest.raises(IndexError):
        decode([99], build_vocab([]))


def test_save_load_round_trip(tmp_path):
    v = build_vocab(["E_001", "E_002@V_3", "30-44"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    assert (tmp_path / "v.txt").read_text().splitlines()[:2] == [PAD, BOS]


@given(st.lists(token, max_size=30))
def test_round_trip_property(tokens):
    v = build_vocab(tokens)
    enc = encode([BOS, *tokens, EOS], v, len(tokens) + 4)
    assert decode(enc.ids, v) == tokens


@given(st.lists(token, max_size=50), st.integers(2, 60))
def test_encode_length_is_always_max_len(tokens, max_len):
    enc = encode(tokens, build_vocab(tokens), max_len)
    assert enc.ids.shape == (max_len,) and enc.ids.dtype == np.int64
    assert enc.true_length == min(len(tokens), max_len)


@given(st.lists(token, max_size=30))
def test_build_is_deterministic(tokens):
    assert build_vocab(tokens) == build_vocab(list(tokens))
