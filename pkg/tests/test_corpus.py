import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sirnn.corpus import (CorpusError, DialogContext, LogLine, MalformedLineWarning, SelectionSample,
                          Turn, Vocab, annotate_document, detect_addressee, document_seed,
                          extract_samples, parse_annotated_document, parse_document, read_samples,
                          read_word_vectors, tokenize_truncate, validate_sample, write_samples)


def test_parse_single_line():
    assert parse_document("12\talice\thello world") == [LogLine(12, "alice", None, "hello world")]


def test_parse_empty_document():
    with pytest.raises(CorpusError, match="empty document"):
        parse_document("")


def test_parse_non_utf8():
    with pytest.raises(CorpusError):
        parse_document(b"1\talice\t\xff\xfe")


def test_parse_reports_malformed_with_line_number():
    text = "1\talice\thi\n2\tbob\thello\nnot a record\n3\tcarol\tyo\n"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lines = parse_document(text, source="day1")
    assert [ln.sender for ln in lines] == ["alice", "bob", "carol"]
    assert len(caught) == 1
    assert issubclass(caught[0].category, MalformedLineWarning)
    assert "day1:3" in str(caught[0].message)


def test_detect_addressee_examples():
    line = LogLine(1, "VeryBewitching", None, "nicomachus: always back up")
    assert detect_addressee(line, {"nicomachus"}) == "nicomachus"
    assert detect_addressee(LogLine(1, "bob", None, "hello there"), {"alice", "bob"}) is None
    assert detect_addressee(LogLine(1, "bob", None, "Alice, thanks"), {"alice", "bob"}) == "alice"


def test_detect_addressee_never_self_or_unknown():
    assert detect_addressee(LogLine(1, "bob", None, "bob: me"), {"bob"}) is None
    assert detect_addressee(LogLine(1, "bob", None, "carol: hi"), {"alice"}) is None
    # only one trailing separator is stripped
    assert detect_addressee(LogLine(1, "bob", None, "alice:: hi"), {"alice"}) is None


def test_annotate_removes_mention_and_uses_prior_senders_only():
    doc = parse_document("1\talice\thi all\n2\tbob\talice: hello there\n3\talice\tcarol: who?\n")
    ann = annotate_document(doc)
    assert ann[1].line.addressee == "alice"
    assert ann[1].tokens == ("hello", "there")
    # carol has not spoken yet, so no addressee
    assert ann[2].line.addressee is None
    assert ann[2].tokens == ("carol:", "who?")


def test_tokenize_examples():
    assert tokenize_truncate("Hello World") == ["hello", "world"]
    assert tokenize_truncate(" ".join(f"t{i}" for i in range(25))) == [f"t{i}" for i in range(20)]
    assert tokenize_truncate("") == []


@given(st.text(max_size=200))
def test_tokenize_idempotent(text):
    toks = tokenize_truncate(text)
    assert tokenize_truncate(" ".join(toks)) == toks


FIVE = "1\talice\thi\n2\tbob\tanyone around\n3\tcarol\tyes\n4\tdave\tbob: what is up\n5\talice\tok then\n"


def test_extract_single_addressed_line():
    samples = extract_samples(parse_document(FIVE), T=15, n_candidates=2, rng_seed=0)
    assert len(samples) == 1
    s = samples[0]
    assert len(s.context) == 3
    assert s.responder == "dave" and s.truth_addressee == "bob"
    assert s.candidates[s.truth_response_index] == ("what", "is", "up")
    short = extract_samples(parse_document(FIVE), T=2, n_candidates=2, rng_seed=0)
    assert len(short[0].context) == 2


def test_extract_no_mentions():
    doc = parse_document("1\ta\tx\n2\tb\ty\n3\tc\tz\n")
    assert extract_samples(doc, 5, 2, 0) == []


def test_extract_short_document():
    assert extract_samples(parse_document("1\ta\tb: x\n"), 5, 2, 0) == []


def test_extract_deterministic_and_negatives_distinct():
    rng = np.random.default_rng(0)
    names = ["ann", "ben", "cat", "dan"]
    rows = []
    for t in range(60):
        s = names[rng.integers(4)]
        others = [n for n in names if n != s]
        head = f"{others[rng.integers(3)]}: " if rng.random() < 0.5 else ""
        rows.append(f"{t}\t{s}\t{head}w{rng.integers(30)} w{rng.integers(30)}")
    doc = parse_document("\n".join(rows))
    a = extract_samples(doc, 10, 10, 7, doc_id="d")
    b = extract_samples(doc, 10, 10, 7, doc_id="d")
    assert a and [x.to_json() for x in a] == [x.to_json() for x in b]
    for s in a:
        validate_sample(s, max_context=10)
        assert len(set(s.candidates)) == 10
        assert s.truth_addressee in s.context.speakers


def test_extract_drops_when_too_few_negatives():
    doc = parse_document("1\talice\thi\n2\tbob\talice: hello\n")
    # only one other distinct utterance exists
    assert extract_samples(doc, 5, 3, 0) == []
    assert len(extract_samples(doc, 5, 2, 0)) == 1


def test_document_seed_stable():
    assert document_seed(3, "2004-01-01.txt") == document_seed(3, "2004-01-01.txt")
    assert document_seed(3, "a") != document_seed(4, "a")


def test_annotated_importer():
    doc = parse_annotated_document("1\talice\t-\thi\n2\tbob\talice\thello\n")
    assert doc[0].addressee is None and doc[1].addressee == "alice"


def test_sample_json_roundtrip(tmp_path):
    s = SelectionSample(DialogContext([Turn("a", "b", ("x",)), Turn("b", None, ("y", "z"))]),
                        "a", [("p",), ("q", "r")], "b", 1, doc_id="d", time=3)
    p = tmp_path / "s.jsonl"
    write_samples(p, [s, s])
    back = read_samples(p)
    assert back == [s, s]
    obj = json.loads(p.read_text().splitlines()[0])
    assert obj["context"][1] == ["b", None, ["y", "z"]]


def test_validator_rejects_bad_samples():
    ctx = DialogContext([Turn("a", "b", ("x",))])
    with pytest.raises(CorpusError):
        validate_sample(SelectionSample(ctx, "a", [("p",)], "a", 0))
    with pytest.raises(CorpusError):
        validate_sample(SelectionSample(ctx, "a", [("p",)], "zed", 0))
    with pytest.raises(CorpusError):
        validate_sample(SelectionSample(ctx, "c", [("p",)], "a", 1))


def test_speakers_first_appearance():
    ctx = DialogContext([Turn("b", "a", ()), Turn("c", None, ()), Turn("a", "d", ())])
    assert ctx.speakers == ["b", "a", "c", "d"]


def test_vocab_unk_and_frozen():
    v = Vocab.build([("x", "y"), ("y",)], d_w=4, seed=0)
    assert v.lookup(["y", "nope"]) == [v.index["y"], 0]
    assert np.all(np.abs(v.vectors[0]) <= 0.01)
    with pytest.raises(ValueError):
        v.vectors[0, 0] = 1.0


def test_vocab_with_word_vectors(tmp_path):
    p = tmp_path / "wv.txt"
    p.write_text("x 1 2 3\nz 4 5 6\n")
    wv = read_word_vectors(p)
    v = Vocab.build([("x", "y")], d_w=3, seed=0, word_vectors=wv)
    assert v.tokens == ["x"]
    np.testing.assert_array_equal(v.vector("x"), [1, 2, 3])
    np.testing.assert_array_equal(v.vector("y"), v.vectors[0])
    with pytest.raises(CorpusError):
        Vocab.build([("x",)], d_w=5, seed=0, word_vectors=wv)
