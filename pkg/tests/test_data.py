import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES
from treecrf_parser.data import (PAD_ID, ROOT_ID, UNK_ID, ConllError, EvaluationError, Sentence,
                                 Token, build_vocab, evaluate, format_conllx, is_punctuation,
                                 normalize_word, read_conllx, write_conllx)

FIGURE_SENTENCE = [
    ("Economic", "JJ", 2, "amod"), ("news", "NN", 3, "nsubj"), ("had", "VBD", 0, "root"),
    ("little", "JJ", 5, "amod"), ("effect", "NN", 3, "dobj"), ("on", "IN", 5, "prep"),
    ("financial", "JJ", 8, "amod"), ("markets", "NNS", 6, "pobj"), (".", ".", 3, "punct"),
]


def figure_sentence():
    forms, tags, heads, rels = zip(*FIGURE_SENTENCE)
    return Sentence.from_forms(forms, tags, heads, rels)


def test_column_mapping():
    sents = read_conllx(io.StringIO("1\tEconomic\t_\tJJ\tJJ\t_\t2\tamod\t_\t_\n"
                                    "2\tnews\t_\tNN\tNN\t_\t0\troot\t_\t_\n"))
    tok = sents[0].tokens[1]
    assert (tok.form, tok.pos, tok.head, tok.deprel, tok.lemma) == ("Economic", "JJ", 2, "amod", None)
    assert sents[0].tokens[0].form == "<ROOT>" and len(sents[0]) == 2


def test_empty_input():
    assert read_conllx(io.StringIO("")) == []
    assert read_conllx(io.StringIO("\n\n")) == []


def test_comments_are_skipped():
    text = "# sent_id = 1\n1\tHi\t_\tUH\tUH\t_\t0\troot\t_\t_\n\n"
    assert read_conllx(io.StringIO(text))[0].forms == ["Hi"]


@pytest.mark.parametrize("text,message", [
    ("x\tA\t_\tN\tN\t_\t0\troot\t_\t_\n", "line 1: non-numeric ID"),
    ("1\tA\t_\tN\tN\t_\tq\troot\t_\t_\n", "line 1: non-numeric HEAD"),
    ("1\tA\t_\tN\tN\t_\t0\troot\t_\t_\n3\tB\t_\tN\tN\t_\t1\tdep\t_\t_\n", "line 2: expected ID 2"),
    ("1\tA\t_\tN\tN\t_\t0\troot\t_\t_\n2\tB\t_\tN\tN\t_\t7\tdep\t_\t_\n", "line 2: HEAD 7"),
    ("1\tA\tN\t0\n", "line 1: expected 10"),
])
def test_malformed_lines(text, message):
    with pytest.raises(ConllError, match=message):
        read_conllx(io.StringIO(text))


def test_tag_falls_back_to_coarse_column():
    sents = read_conllx(io.StringIO("1\tA\t_\tNOUN\t_\t_\t0\troot\t_\t_\n"))
    assert sents[0].words[0].tag == "NOUN"


def test_roundtrip_is_identity_on_fixtures(tmp_path):
    for name in ("tiny10.conllx", "synthetic_train50.conllx", "eval_gold.conllx"):
        text = (FIXTURES / name).read_text(encoding="utf-8")
        sents = read_conllx(FIXTURES / name)
        assert format_conllx(sents) == text
        out = tmp_path / name
        write_conllx(sents, out)
        assert read_conllx(out) == sents


def test_write_format():
    sent = Sentence.from_forms(["Hi"], ["UH"], [0], ["root"])
    buf = io.StringIO()
    write_conllx([sent], buf)
    assert buf.getvalue() == "1\tHi\t_\tUH\tUH\t_\t0\troot\t_\t_\n\n"


def test_write_missing_prediction():
    with pytest.raises(ConllError):
        format_conllx([Sentence.from_forms(["Hi"], ["UH"])])


def test_with_predictions_keeps_input_columns():
    sent = figure_sentence().with_predictions([0] * 9, ["dep"] * 9)
    assert sent.heads == [0] * 9 and sent.forms[0] == "Economic" and sent.words[0].pos == "JJ"


def test_normalization():
    assert normalize_word("Apple") == "apple"
    assert normalize_word("1984-12") == "0-0"
    assert normalize_word("Apple", lowercase=False, digits=False) == "Apple"
    assert normalize_word("<ROOT>") == "<ROOT>"


def test_vocab_reserved_ids_and_lookups(tiny10):
    vocab = build_vocab(tiny10)
    assert vocab.words[:3] == ["<PAD>", "<UNK>", "<ROOT>"]
    assert vocab.word_id("<ROOT>") == ROOT_ID and vocab.word_id("zebra") == UNK_ID
    assert vocab.char_ids("<ROOT>") == [ROOT_ID] and vocab.char_ids("é") == [UNK_ID]
    assert vocab.tag_id("<ROOT>") == ROOT_ID and vocab.tag_id("ZZZ") == UNK_ID
    assert PAD_ID == 0
    labels = {r for s in tiny10 for r in s.deprels}
    assert vocab.n_labels == len(labels) and set(vocab.labels) == labels
    with pytest.raises(KeyError):
        vocab.label_id("nonexistent")


def test_vocab_order_is_frequency_then_lexicographic():
    a = Sentence.from_forms(["b", "a", "c", "a"], ["X"] * 4, [0, 1, 1, 1], ["r", "d", "d", "d"])
    vocab = build_vocab([a])
    assert vocab.words[3:] == ["a", "b", "c"]


def test_vocab_independent_of_sentence_order(tiny10):
    shuffled = list(tiny10)
    random.Random(0).shuffle(shuffled)
    assert build_vocab(tiny10).to_dict() == build_vocab(shuffled).to_dict()


def test_min_freq_drops_hapax(tiny10):
    vocab = build_vocab(tiny10, min_freq=2)
    counts = {}
    for s in tiny10:
        for f in s.forms:
            counts[normalize_word(f)] = counts.get(normalize_word(f), 0) + 1
    hapax = [w for w, c in counts.items() if c == 1]
    assert hapax and all(vocab.word_id(w) == UNK_ID for w in hapax)
    assert all(vocab.word_id(w) != UNK_ID for w, c in counts.items() if c >= 2)


def test_vocab_roundtrip_and_pretrained(tiny10):
    vocab = build_vocab(tiny10, ["Zebra", "the"])
    assert vocab.word_id("zebra") != UNK_ID
    assert type(vocab).from_dict(vocab.to_dict()).to_dict() == vocab.to_dict()


def test_empty_training_set():
    with pytest.raises(ValueError):
        build_vocab([])


@pytest.mark.parametrize("form,expected", [(".", True), ("«", True), ("…", True), ("¿", True),
                                           ("--", True), ("a.", False), ("$", False), ("", False)])
def test_punctuation(form, expected):
    assert is_punctuation(form) is expected


def test_identity_scores_100(tiny10):
    for policy in ("include_all", "exclude_unicode_punct"):
        result = evaluate(tiny10, tiny10, policy)
        assert (result.uas, result.las) == (100.0, 100.0)


def test_ratio_example():
    forms = [f"w{i}" for i in range(10)]
    gold = Sentence.from_forms(forms, ["X"] * 10, [0] + [1] * 9, ["a"] * 10)
    pred_heads = [0] + [1] * 8 + [3]
    pred_rels = ["a"] * 8 + ["b", "a"]
    result = evaluate([gold], [gold.with_predictions(pred_heads, pred_rels)])
    assert (result.uas, result.las) == (90.0, 80.0)


def test_figure_sentence_punctuation_denominator():
    gold = figure_sentence()
    assert evaluate([gold], [gold], "include_all").total == 9
    assert evaluate([gold], [gold], "exclude_unicode_punct").total == 8


def test_length_mismatch_names_sentence(tiny10):
    other = list(tiny10)
    other[3] = tiny10[4]
    with pytest.raises(EvaluationError, match="sentence 3"):
        evaluate(tiny10, other)
    with pytest.raises(EvaluationError):
        evaluate(tiny10, tiny10[:5])
    with pytest.raises(ValueError):
        evaluate(tiny10, tiny10, "strict")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_properties(seed):
    rng = random.Random(seed)
    gold = read_conllx(FIXTURES / "tiny10.conllx")
    pred = []
    for s in gold:
        heads = [h if rng.random() < 0.7 else rng.randint(0, len(s)) for h in s.heads]
        rels = [r if rng.random() < 0.8 else "dep" for r in s.deprels]
        pred.append(s.with_predictions(heads, rels))
    for policy in ("include_all", "exclude_unicode_punct"):
        r = evaluate(gold, pred, policy)
        assert r.las <= r.uas
        order = list(range(len(gold)))
        rng.shuffle(order)
        r2 = evaluate([gold[i] for i in order], [pred[i] for i in order], policy)
        assert (r2.uas, r2.las) == (r.uas, r.las)


def test_token_defaults():
    tok = Token(1, "x")
    assert tok.tag == "<UNK>" and tok.head is None
