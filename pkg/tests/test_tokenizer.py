from collections import Counter

import pytest
from hypothesis import given, strategies as st

from constrained_ec.tokenizer import (
    BOS_ID, CONTINUATION, DUMMY_ID, EOS_ID, PAD_ID, RESERVED, UNK_ID,
    ConfigurationError, TokenSequence, Vocabulary, build_vocab, detokenize, detokenize_ids, tokenize,
)


def test_reserved_ids_fixed():
    vocab = build_vocab(["a b", "a c"], max_size=20)
    assert vocab.tokens[:5] == RESERVED
    assert [vocab.id(t) for t in RESERVED] == [PAD_ID, UNK_ID, BOS_ID, EOS_ID, DUMMY_ID]


def test_small_corpus_contains_words():
    vocab = build_vocab(["a b", "a c"], max_size=20)
    for tok in ("a", "b", "c"):
        assert tok in vocab


def test_mutual_inverse():
    vocab = build_vocab(["show me flights from boston", "flights to denver"], max_size=200)
    for i, tok in enumerate(vocab.tokens):
        assert vocab.id(tok) == i
        assert vocab.token(i) == tok


def test_min_freq_against_counting_oracle():
    corpus = ["aa aa", "ab"]
    # oracle: count every multi-character piece occurrence by brute force
    counts = Counter()
    for line in corpus:
        for word in line.split():
            seen = set()
            for s in range(len(word)):
                for e in range(s + 2, len(word) + 1):
                    seen.add(word[s:e] if s == 0 else CONTINUATION + word[s:e])
            counts.update(seen)
    assert counts["aa"] == 2 and counts["ab"] == 1
    vocab = build_vocab(corpus, max_size=100, min_freq=2)
    assert "aa" in vocab
    assert "ab" not in vocab
    assert tokenize("ab", vocab).surfaces == ["a", "##b"]


def test_empty_corpus_rejected():
    with pytest.raises(ConfigurationError):
        build_vocab([], max_size=20)
    with pytest.raises(ConfigurationError):
        build_vocab(["a"], max_size=5)


def test_build_is_deterministic():
    corpus = ["the cat sat", "the hat", "cat hat sat mat"]
    assert build_vocab(corpus, 30).tokens == build_vocab(list(corpus), 30).tokens


def test_frequency_ties_break_lexicographically():
    vocab = build_vocab(["zz yy"], max_size=5 + 4 + 1)
    # chars y, z and ##y, ##z take four slots; one slot left for "yy" vs "zz"
    assert "yy" in vocab and "zz" not in vocab


def test_greedy_longest_match():
    vocab = Vocabulary(list(RESERVED) + ["o", "r", "or", "##l", "##a", "##n", "##d", "##o", "##lando"])
    assert tokenize("orlando", vocab).surfaces == ["or", "##lando"]


def test_unknown_character_maps_to_unk():
    vocab = build_vocab(["abc"], max_size=50)
    seq = tokenize("Ω", vocab)
    assert seq.ids == [UNK_ID]


def test_empty_text():
    vocab = build_vocab(["abc"], max_size=50)
    assert len(tokenize("", vocab)) == 0
    assert detokenize(TokenSequence(), vocab) == ""


def test_lowercases():
    vocab = build_vocab(["to orlando"], max_size=50)
    assert tokenize("TO Orlando", vocab).ids == tokenize("to orlando", vocab).ids


def test_detokenize_merges_continuations():
    vocab = Vocabulary(list(RESERVED) + ["or", "##lando", "to"])
    ids = [vocab.id("to"), vocab.id("or"), vocab.id("##lando")]
    assert detokenize_ids(ids, vocab) == "to orlando"


def test_detokenize_drops_silent_tokens():
    vocab = Vocabulary(list(RESERVED) + ["to"])
    ids = [BOS_ID, DUMMY_ID, vocab.id("to"), PAD_ID, EOS_ID]
    assert detokenize_ids(ids, vocab) == "to"


def test_round_trip_on_built_vocab():
    vocab = build_vocab(["fly to orlando", "to tacoma"], max_size=100)
    assert detokenize(tokenize("to orlando", vocab), vocab) == "to orlando"


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(["fly to orlando"], max_size=100)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[:5] == list(RESERVED)
    assert Vocabulary.load(path) == vocab
    assert Vocabulary.load(path).digest() == vocab.digest()


def test_bad_vocab_file_rejected():
    with pytest.raises(ConfigurationError):
        Vocabulary(["a", "b"])


_VOCAB = build_vocab(["the quick brown fox jumps over the lazy dog", "pack my box"], max_size=60)
_words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=8)


@given(st.lists(_words, max_size=8), st.sampled_from([" ", "  ", "\t"]))
def test_round_trip_property(words, sep):
    text = sep.join(words)
    assert detokenize(tokenize(text, _VOCAB), _VOCAB) == " ".join(words)


@given(st.text())
def test_tokenize_total_and_pure(text):
    first = tokenize(text, _VOCAB)
    assert first == tokenize(text, _VOCAB)
    assert all(0 <= i < len(_VOCAB) for i in first.ids)
    assert len(first.ids) == len(first.surfaces) == len(first.is_dummy)
