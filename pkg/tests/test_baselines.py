import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import partition_chat_sample, random_sample
from sirnn.baselines import (ChanceSelector, TfIdfModel, TfIdfSelector, chance_select,
                             direct_recent_tfidf_select, rank_responses, recent_tfidf_select)
from sirnn.corpus import DialogContext, SelectionSample, Turn

TOY_DOCS = [["a", "b"], ["a", "c"], ["a", "d", "e"], ["b", "c"]]


def _dense_cosine(a, b, docs):
    """Independent dense tf-idf cosine over the toy vocabulary."""
    vocab = sorted({t for d in docs for t in d} | set(a) | set(b))
    n = len(docs)
    idf = np.array([math.log(n / (1 + sum(t in d for d in docs))) + 1 for t in vocab])

    def vec(tokens):
        v = np.array([tokens.count(t) for t in vocab], dtype=float) * idf
        return v / np.linalg.norm(v) if np.linalg.norm(v) else v

    return float(vec(list(a)) @ vec(list(b)))


def _sample(turns, responder, candidates=(("x",), ("y",)), truth=None):
    ctx = DialogContext([Turn(s, a, tuple(u.split())) for s, a, u in turns])
    truth = truth or next(s for s in ctx.speakers if s != responder)
    return SelectionSample(ctx, responder, [tuple(c) for c in candidates], truth, 0)


def test_idf_values():
    m = TfIdfModel.fit(TOY_DOCS)
    assert m.n_docs == 4 and m.df["a"] == 3 and m.df["b"] == 2
    assert m.idf("a") == pytest.approx(1.0)
    assert m.idf("b") == pytest.approx(math.log(4 / 3) + 1)
    assert m.idf("d") == pytest.approx(math.log(2) + 1)
    assert m.idf("unseen") == pytest.approx(math.log(4) + 1)
    assert all(m.idf(t) > 0 for t in "abcde")


def test_cosine_closed_form_and_oracle():
    m = TfIdfModel.fit(TOY_DOCS)
    ib = math.log(4 / 3) + 1
    assert m.cosine(["a"], ["a", "b"]) == pytest.approx(1 / math.sqrt(1 + ib * ib), abs=1e-12)
    assert m.cosine(["a", "b"], ["b", "a"]) == pytest.approx(1.0)
    assert m.cosine([], ["a"]) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = list(rng.choice(list("abcdefg"), size=rng.integers(1, 6)))
        b = list(rng.choice(list("abcdefg"), size=rng.integers(1, 6)))
        assert m.cosine(a, b) == pytest.approx(_dense_cosine(a, b, TOY_DOCS), abs=1e-12)


def test_ranking_three_candidates():
    m = TfIdfModel.fit(TOY_DOCS)
    s = _sample([("p", "q", "a d"), ("q", None, "e c")], "p",
                candidates=[("b",), ("d", "e"), ("a", "c")])
    ctx = ["a", "d", "e", "c"]
    want = [_dense_cosine(list(c), ctx, TOY_DOCS) for c in s.candidates]
    assert want[1] > want[2] > want[0]
    best, score = rank_responses(s, m)
    assert best == 1 and score == pytest.approx(want[1], abs=1e-12)


def test_candidate_equal_to_context_wins():
    m = TfIdfModel.fit(TOY_DOCS)
    s = _sample([("p", "q", "a b"), ("q", "p", "c")], "p", candidates=[("a",), ("a", "b", "c")])
    best, score = rank_responses(s, m)
    assert best == 1 and score == pytest.approx(1.0)


def test_ranking_ties_go_to_lowest_index():
    m = TfIdfModel.fit(TOY_DOCS)
    s = _sample([("p", "q", "a")], "p", candidates=[("z",), ("y",), ("x",)])
    assert rank_responses(s, m)[0] == 0


def test_recent_addressee():
    m = TfIdfModel.fit(TOY_DOCS)
    s = _sample([("carol", "alice", "a"), ("bob", "alice", "b"), ("alice", "bob", "c")], "alice")
    pick = recent_tfidf_select(s, m)
    assert pick.addressee == "bob" and not pick.fallback


def test_recent_fallback_is_flagged_and_seeded():
    m = TfIdfModel.fit(TOY_DOCS)
    s = _sample([("alice", "bob", "a"), ("alice", "carol", "b")], "alice")
    a, b = recent_tfidf_select(s, m), recent_tfidf_select(s, m)
    assert a.fallback and a.addressee in ("bob", "carol") and a.addressee == b.addressee
    d = direct_recent_tfidf_select(s, m)
    assert d.fallback and d.addressee == a.addressee


def test_direct_mention_picks_the_addresser_not_the_last_speaker():
    s = partition_chat_sample()
    m = TfIdfModel.from_samples([s])
    assert s.context.turns[-1].sender == "chingao"
    assert recent_tfidf_select(s, m).addressee == "chingao"
    assert direct_recent_tfidf_select(s, m).addressee == "VeryBewitching"


def test_direct_rules():
    m = TfIdfModel.fit(TOY_DOCS)
    none = _sample([("bob", "carol", "a"), ("carol", None, "b")], "alice")
    assert direct_recent_tfidf_select(none, m).addressee == recent_tfidf_select(none, m).addressee == "carol"
    two = _sample([("bob", "alice", "a"), ("carol", "alice", "b"), ("dave", None, "c")], "alice")
    assert direct_recent_tfidf_select(two, m).addressee == "carol"


def test_direct_window():
    m = TfIdfModel.fit(TOY_DOCS)
    turns = [("bob", "alice", "a")] + [("carol", None, "b")] * 15
    s = _sample(turns, "alice")
    assert direct_recent_tfidf_select(s, m).addressee == "carol"
    assert direct_recent_tfidf_select(s, m, window=16).addressee == "bob"


def test_chance_single_addressee_and_uniform():
    s = _sample([("alice", "bob", "a")], "alice", candidates=[("x",)] * 1)
    rng = np.random.default_rng(0)
    assert all(chance_select(s, rng).addressee == "bob" for _ in range(20))
    s10 = _sample([("a", "b", "x"), ("c", None, "y")], "a", candidates=[(str(i),) for i in range(10)])
    counts = np.bincount([chance_select(s10, rng).response_index for _ in range(5000)], minlength=10)
    assert counts.min() > 400 and counts.max() < 600


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_baseline_invariants(seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, n_speakers=5, T=8, R=3)
    m = TfIdfModel.from_samples([random_sample(rng) for _ in range(5)] + [s])
    for pick in (recent_tfidf_select(s, m), direct_recent_tfidf_select(s, m),
                 ChanceSelector(seed)(s), TfIdfSelector(m, direct=True)(s)):
        assert pick.addressee in s.addressee_candidates and pick.addressee != s.responder
        assert 0 <= pick.response_index < len(s.candidates)
    assert recent_tfidf_select(s, m) == recent_tfidf_select(s, m)
    # bag of words: shuffling every candidate's tokens leaves scores unchanged
    shuffled = SelectionSample(s.context, s.responder, [tuple(rng.permutation(c)) for c in s.candidates],
                               s.truth_addressee, s.truth_response_index, doc_id=s.doc_id)
    context = [t for turn in s.context.turns for t in turn.tokens]
    for a, b in zip(s.candidates, shuffled.candidates):
        assert m.cosine(a, context) == pytest.approx(m.cosine(b, context), abs=1e-12)


def test_model_json_roundtrip(tmp_path):
    m = TfIdfModel.fit(TOY_DOCS)
    m.save(tmp_path / "tfidf.json")
    back = TfIdfModel.load(tmp_path / "tfidf.json")
    assert back.df == m.df and back.n_docs == m.n_docs
    with pytest.raises(ValueError):
        TfIdfModel({}, 0)
