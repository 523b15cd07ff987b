import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsource.synthetic import extraction_corpus
from dualsource.pipeline import tokenizer_corpus
from dualsource.tokenize import (
    BOS,
    EOS,
    NUM_BASE,
    SEP,
    UNK,
    SubwordModel,
    Truecaser,
    baseline_normalize,
    detokenize,
    train_subword,
    truecase_apply,
    truecase_train,
    word_tokenize,
)


@pytest.fixture(scope="module")
def bio_model():
    return train_subword(tokenizer_corpus(extraction_corpus(50)), 500)


def test_first_merge_on_hand_corpus():
    sp = train_subword(["aaab aaab"], NUM_BASE + 1)
    assert sp.merges == [(b"a", b"a")]
    ids = sp.encode("aaab")
    assert sp.token_strings(ids) == ["aa", "a", "b"]
    assert sp.decode(ids) == "aaab"


def test_byte_alphabet_size_means_no_merges():
    sp = train_subword(["hello world"], NUM_BASE)
    assert sp.merges == [] and sp.vocab_size == NUM_BASE
    assert sp.encode("hi") == [NUM_BASE - 256 + ord("h"), NUM_BASE - 256 + ord("i")]


def test_preconditions():
    with pytest.raises(ValueError):
        train_subword([], 300)
    with pytest.raises(ValueError):
        train_subword(["x"], NUM_BASE - 1)


def test_empty_text_with_markers(bio_model):
    assert bio_model.encode("", add_bos_eos=True) == [BOS, EOS]


def test_specials_lowest_ids(bio_model):
    assert bio_model.specials == {"<pad>": 0, "<bos>": 1, "<eos>": 2, "<unk>": 3, "<sep>": 4}
    vocab = bio_model.vocab()
    assert len(vocab) == bio_model.vocab_size == len(set(vocab))


def test_sep_marker_maps_to_its_id(bio_model):
    ids = bio_model.encode("a <sep> b")
    assert SEP in ids
    assert bio_model.decode(ids) == "a <sep> b"


def test_corpus_round_trip_without_unk(bio_model):
    lines = tokenizer_corpus(extraction_corpus(50))
    for line in lines:
        ids = bio_model.encode(line)
        assert UNK not in ids
        assert bio_model.decode(ids) == line


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=60))
def test_round_trip_arbitrary_unicode(bio_model, text):
    assert bio_model.decode(bio_model.encode(text)) == text


def test_merges_shorten_encoding(bio_model):
    line = "Anna Nowak was a painter born in Paris."
    assert len(bio_model.encode(line)) < len(line.encode("utf-8"))


def test_training_is_deterministic(tmp_path):
    lines = tokenizer_corpus(extraction_corpus(30, seed=3))
    a, b = train_subword(lines, 400), train_subword(lines, 400)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    loaded = SubwordModel.load(tmp_path / "a.json")
    assert loaded.merges == a.merges
    assert loaded.encode(lines[0]) == a.encode(lines[0])


def test_merges_stop_when_no_pair_repeats():
    sp = train_subword(["abcdef"], 10_000)
    assert sp.merges == []


def test_word_tokenize_and_detokenize():
    toks = word_tokenize("Born in Paris (France), 1901.")
    assert toks == ["Born", "in", "Paris", "(", "France", ")", ",", "1901", "."]
    assert detokenize(toks) == "Born in Paris (France), 1901."
    assert baseline_normalize("New  York-City!") == "new york-city !"


def test_truecaser_examples():
    tc = truecase_train(["Paris is big"])
    assert truecase_apply(tc, "paris is big") == "Paris is big"
    identity = truecase_train(["all lower case here"])
    assert identity.apply("all lower case here too") == "all lower case here too"
    assert tc.apply("zurich is big") == "zurich is big"


def test_truecaser_majority_and_ties():
    tc = truecase_train(["McDonald", "mcdonald", "McDonald", "US us Us"])
    assert tc.table["mcdonald"] == "McDonald"
    # one vote each: the lexicographically smallest form wins
    assert tc.table["us"] == "US"


def test_truecaser_sentence_initial():
    tc = truecase_train(["The cat sat", "The dog ran"], sentence_initial=True)
    assert "the" not in tc.table
    assert tc.apply("the cat") == "The cat"


def test_truecaser_preserves_tokens_and_lowercase(tmp_path):
    rng = random.Random(0)
    corpus = [r.text for r in extraction_corpus(40)]
    tc = truecase_train(corpus)
    tc.save(tmp_path / "tc.json")
    tc = Truecaser.load(tmp_path / "tc.json")
    for line in rng.sample(corpus, 20):
        low = line.lower()
        out = tc.apply(low)
        assert out.lower() == low
        assert len(word_tokenize(out)) == len(word_tokenize(low))
