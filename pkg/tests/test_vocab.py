import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcap.vocab import (
    BOS,
    EOS,
    PAD,
    SPECIAL_TOKENS,
    UNK,
    Vocabulary,
    build_vocabulary,
    decode_tokens,
    encode_caption,
    normalize_text,
)


def test_normalize_strips_punctuation_and_case():
    assert normalize_text("A man PLAYS.") == ["a", "man", "plays"]
    assert normalize_text("  hello,   world!! ") == ["hello", "world"]
    assert normalize_text("") == []


def test_min_count_two_keeps_repeated_tokens():
    vocab = build_vocabulary(["a dog runs", "a dog sits"], min_count=2)
    non_special = set(vocab.token_to_id) - set(SPECIAL_TOKENS)
    assert non_special == {"a", "dog"}


def test_min_count_one_keeps_everything():
    corpus = ["a dog runs", "a dog sits"]
    vocab = build_vocabulary(corpus, min_count=1)
    non_special = set(vocab.token_to_id) - set(SPECIAL_TOKENS)
    assert non_special == {"a", "dog", "runs", "sits"}


def test_rare_token_encodes_to_unk():
    vocab = build_vocabulary(["a zebra", "a dog", "a dog"], min_count=2)
    ids = encode_caption("a zebra", vocab, max_len=6)
    assert ids[2] == UNK  # [bos, a, zebra->unk, eos, pad, pad]


def test_empty_corpus_gives_specials_only():
    vocab = build_vocabulary([], min_count=2)
    assert vocab.tokens == list(SPECIAL_TOKENS)


def test_min_count_must_be_positive():
    with pytest.raises(ValueError):
        build_vocabulary(["a"], min_count=0)


def test_ids_contiguous_and_bijective():
    vocab = build_vocabulary(["b a c", "c b"], min_count=1)
    assert sorted(vocab.id_to_token) == list(range(len(vocab)))
    assert {vocab.token_of(vocab.id_of(t)) for t in ("a", "b", "c")} == {"a", "b", "c"}


def test_encode_basic():
    vocab = build_vocabulary(["a man plays"], min_count=1)
    ids = encode_caption("A man plays.", vocab, max_len=6)
    expected = [BOS, vocab.id_of("a"), vocab.id_of("man"), vocab.id_of("plays"), EOS, PAD]
    assert ids.tolist() == expected


def test_encode_truncates_long_captions():
    words = [f"w{i}" for i in range(30)]
    vocab = build_vocabulary([" ".join(words)], min_count=1)
    ids = encode_caption(" ".join(words), vocab, max_len=26)
    assert len(ids) == 26
    assert EOS not in ids.tolist()  # truncation drops the terminator
    assert ids[0] == BOS and PAD not in ids.tolist()


def test_encode_empty_string():
    vocab = build_vocabulary(["whatever"], min_count=1)
    ids = encode_caption("", vocab, max_len=5)
    assert ids.tolist() == [BOS, EOS, PAD, PAD, PAD]


def test_vocab_roundtrip_via_token_list():
    vocab = build_vocabulary(["a dog runs fast"], min_count=1)
    restored = Vocabulary.from_tokens(vocab.tokens)
    assert restored.token_to_id == vocab.token_to_id


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.sampled_from("a b c dog cat runs sits fast the".split()),
        min_size=0, max_size=12,
    )
)
def test_roundtrip_up_to_truncation(words):
    raw = " ".join(words)
    vocab = build_vocabulary([raw], min_count=1)
    max_len = 8
    ids = encode_caption(raw, vocab, max_len=max_len)
    assert len(ids) == max_len
    decoded = decode_tokens(ids, vocab)
    assert decoded == normalize_text(raw)[: max_len - 1]  # bos consumes one slot
