import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drda.bpe import (
    SPECIALS,
    WORD_MARKER,
    BpeModel,
    MergeRule,
    Vocabulary,
    load_model,
    save_model,
    train_bpe,
    vocab_at,
)
from drda.errors import ParseError, SizeError, TrainingError


def merges(model):
    return [(m.left, m.right) for m in model.merges]


def test_toy_merges(toy_model):
    assert merges(toy_model) == [("▁", "a"), ("▁a", "b"), ("▁ab", "c")]
    assert toy_model.base_symbols == ("▁", "a", "b", "c")


def test_no_merges():
    m = train_bpe([["ab", "ab", "abc"]], 0)
    assert m.merges == ()
    assert vocab_at(m, m.max_size).tokens == (*SPECIALS, "▁", "a", "b", "c")


def test_training_prefix(toy_model):
    assert merges(train_bpe([["ab", "ab", "abc"]], 2)) == merges(toy_model)[:2]


def test_min_count_two_stops_before_singletons():
    assert merges(train_bpe([["ab", "ab", "abc"]], 3, min_count=2)) == [("▁", "a"), ("▁a", "b")]


def test_tie_break_marker_first():
    # (▁,a) and (a,b) both occur 3 times; the marker ranks lowest.
    assert train_bpe([["ab", "ab", "ab"]], 1).merges[0] == MergeRule("▁", "a", 0)


def test_tie_break_code_point_order():
    # every pair occurs once; ("▁","b") < ("▁","c") and ("a","b") < ("b","a")
    m = train_bpe([["ba", "ca"]], 1)
    assert merges(m) == [("▁", "b")]


def test_empty_corpus_rejected():
    with pytest.raises(TrainingError):
        train_bpe([[]], 5)
    with pytest.raises(TrainingError):
        train_bpe([["   "]], 5)
    with pytest.raises(TrainingError):
        train_bpe([], 5)


def test_joint_vs_separate():
    src, tgt = ["aaa aaa"], ["bbb bbb"]
    joint = train_bpe([src, tgt], 10)
    alone = train_bpe([src, tgt], 10, joint=False)
    assert "b" in joint.base_symbols
    assert "b" not in alone.base_symbols


def test_vocab_at_first_merge(toy_model):
    v = vocab_at(toy_model, len(SPECIALS) + 4 + 1)
    assert v.tokens[-1] == "▁a"
    assert v.id_of["▁a"] == 8


def test_vocab_at_no_merged_region(toy_model):
    v = vocab_at(toy_model, toy_model.n_fixed)
    assert v.tokens == (*SPECIALS, *toy_model.base_symbols)


def test_vocab_at_too_small(toy_model):
    with pytest.raises(SizeError):
        vocab_at(toy_model, toy_model.n_fixed - 1)


def test_vocab_at_clips_to_maximum(toy_model, caplog):
    v = vocab_at(toy_model, 1000)
    assert v.size == toy_model.max_size
    assert "exceeds" in caplog.text


def test_vocab_ids_dense_and_ordered(toy_model):
    v = vocab_at(toy_model, toy_model.max_size)
    assert [v.id_of[t] for t in v.tokens] == list(range(v.size))
    assert v.tokens[:4] == SPECIALS


def test_prefix_chain_toy(toy_model):
    for p in range(toy_model.n_fixed, toy_model.max_size + 1):
        for q in range(p, toy_model.max_size + 1):
            vp, vq = vocab_at(toy_model, p), vocab_at(toy_model, q)
            assert vq.tokens[:p] == vp.tokens
            assert all(vq.id_of[t] == i for t, i in vp.id_of.items())


words = st.text(alphabet="abcdé", min_size=1, max_size=6)
sentences = st.lists(words, min_size=1, max_size=5).map(" ".join)


@settings(max_examples=40, deadline=None)
@given(st.lists(sentences, min_size=1, max_size=15), st.integers(0, 20), st.integers(0, 20))
def test_training_prefix_property(corpus, m1, m2):
    lo, hi = sorted((m1, m2))
    assert train_bpe([corpus], lo).merges == train_bpe([corpus], hi).merges[:lo] or \
        len(train_bpe([corpus], hi).merges) < lo


@settings(max_examples=20, deadline=None)
@given(st.lists(sentences, min_size=1, max_size=15))
def test_training_deterministic(corpus):
    assert train_bpe([corpus], 15) == train_bpe([list(corpus)], 15)


def test_merge_components_exist_before_use(bpe_10k):
    known = set(bpe_10k.base_symbols)
    for m in bpe_10k.merges:
        assert m.left in known and m.right in known
        known.add(m.token)


def test_save_load_roundtrip(tmp_path, toy_model):
    path = tmp_path / "toy.bpe"
    save_model(toy_model, path)
    assert load_model(path) == toy_model
    assert path.read_text(encoding="utf-8").splitlines()[0] == "#drda-bpe v1"


def test_save_load_roundtrip_large(tmp_path, bpe_10k):
    path = tmp_path / "big.bpe"
    save_model(bpe_10k, path)
    assert load_model(path) == bpe_10k


def test_load_duplicate_merge(tmp_path):
    path = tmp_path / "dup.bpe"
    path.write_text("#drda-bpe v1\n▁ a\n▁ a\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_model(path)
    assert info.value.line_no == 3


def test_load_missing_header(tmp_path):
    path = tmp_path / "bad.bpe"
    path.write_text("▁ a\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_model(path)


def test_load_malformed_line(tmp_path):
    path = tmp_path / "bad.bpe"
    path.write_text("#drda-bpe v1\n▁ a b\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        load_model(path)
    assert info.value.line_no == 2


def test_load_hand_written_single_merge(tmp_path):
    path = tmp_path / "one.bpe"
    path.write_text("#drda-bpe v1\nt h\n", encoding="utf-8")
    m = load_model(path)
    assert m.merges == (MergeRule("t", "h", 0),)
    assert m.base_symbols == (WORD_MARKER, "h", "t")
    assert m.max_size == 4 + 3 + 1


def test_vocab_file_roundtrip(tmp_path, toy_model):
    v = vocab_at(toy_model, toy_model.max_size)
    path = tmp_path / "toy.vocab"
    v.write(path)
    assert path.read_text(encoding="utf-8").splitlines()[4] == "▁\t4"
    assert Vocabulary.read(path) == v


def test_vocab_file_bad_id(tmp_path):
    path = tmp_path / "bad.vocab"
    path.write_text("<pad>\t0\n<unk>\t5\n", encoding="utf-8")
    with pytest.raises(ParseError):
        Vocabulary.read(path)


def test_bad_ranks_rejected():
    with pytest.raises(ValueError):
        BpeModel((MergeRule("a", "b", 1),), ("▁", "a", "b"))
