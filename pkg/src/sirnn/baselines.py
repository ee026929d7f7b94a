"""Non-neural selectors: chance, most-recent-speaker, and direct-mention, with tf-idf response ranking."""

from __future__ import annotations

import json
import math
import zlib
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import SelectionSample
from .selector import ScoredPair

DIRECT_WINDOW = 15


class TfIdfModel:
    """Document frequencies over training documents.

    ``idf(t) = ln(N / (1 + df(t))) + 1``; tokens never seen in training get
    ``df = 0``. Term frequency is the raw count and vectors are L2-normalised
    before the cosine.
    """

    def __init__(self, df: dict[str, int], n_docs: int):
        if n_docs < 1:
            raise ValueError("tf-idf needs at least one document")
        self.df = dict(df)
        self.n_docs = int(n_docs)

    @classmethod
    def fit(cls, documents: Iterable[Iterable[str]]) -> "TfIdfModel":
        df: Counter[str] = Counter()
        n = 0
        for doc in documents:
            df.update(set(doc))
            n += 1
        return cls(dict(df), n)

    @classmethod
    def from_samples(cls, samples: Iterable[SelectionSample]) -> "TfIdfModel":
        """One document per ``doc_id``: every context and truth-response token of its samples."""
        docs: dict[str, set[str]] = defaultdict(set)
        for s in samples:
            bag = docs[s.doc_id]
            for turn in s.context.turns:
                bag.update(turn.tokens)
            bag.update(s.candidates[s.truth_response_index])
        return cls.fit(docs[k] for k in sorted(docs))

    def idf(self, token: str) -> float:
        return math.log(self.n_docs / (1 + self.df.get(token, 0))) + 1.0

    def vector(self, tokens: Iterable[str]) -> dict[str, float]:
        tf = Counter(tokens)
        vec = {t: c * self.idf(t) for t, c in tf.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        if norm == 0.0:
            return {}
        return {t: v / norm for t, v in vec.items()}

    def cosine(self, a: Iterable[str], b: Iterable[str]) -> float:
        va, vb = self.vector(a), self.vector(b)
        if len(vb) < len(va):
            va, vb = vb, va
        return sum(v * vb.get(t, 0.0) for t, v in va.items())

    def to_json(self) -> dict:
        return {"n_docs": self.n_docs, "df": dict(sorted(self.df.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "TfIdfModel":
        return cls(obj["df"], obj["n_docs"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TfIdfModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _sample_rng(sample: SelectionSample) -> np.random.Generator:
    key = f"{sample.doc_id}\t{sample.time}\t{sample.responder}".encode()
    return np.random.default_rng(zlib.crc32(key))


def _pick(sample: SelectionSample, addressee: str, response: int, score: float,
          fallback: bool = False) -> ScoredPair:
    return ScoredPair(addressee=addressee, response_index=response,
                      addressee_index=sample.addressee_candidates.index(addressee),
                      p_adr=1.0, p_res=score, fallback=fallback)


def chance_select(sample: SelectionSample, rng: np.random.Generator) -> ScoredPair:
    """Uniform over addressee candidates and, independently, over responses."""
    cands = sample.addressee_candidates
    a = cands[int(rng.integers(len(cands)))]
    r = int(rng.integers(len(sample.candidates)))
    return _pick(sample, a, r, 1.0 / len(sample.candidates))


def rank_responses(sample: SelectionSample, model: TfIdfModel) -> tuple[int, float]:
    """Candidate with the highest cosine to the concatenated context; lowest index on ties."""
    context = [tok for turn in sample.context.turns for tok in turn.tokens]
    scores = [model.cosine(c, context) for c in sample.candidates]
    best = int(np.argmax(scores))
    return best, scores[best]


def _recent_addressee(sample: SelectionSample, rng: np.random.Generator | None) -> tuple[str, bool]:
    for turn in reversed(sample.context.turns):
        if turn.sender != sample.responder:
            return turn.sender, False
    rng = rng if rng is not None else _sample_rng(sample)
    cands = sample.addressee_candidates
    return cands[int(rng.integers(len(cands)))], True


def recent_tfidf_select(sample: SelectionSample, model: TfIdfModel,
                        rng: np.random.Generator | None = None) -> ScoredPair:
    """Most recent sender other than the responder; if every turn is the responder's, a seeded random pick (flagged)."""
    addressee, fallback = _recent_addressee(sample, rng)
    r, score = rank_responses(sample, model)
    return _pick(sample, addressee, r, score, fallback)


def direct_recent_tfidf_select(sample: SelectionSample, model: TfIdfModel,
                               rng: np.random.Generator | None = None,
                               window: int = DIRECT_WINDOW) -> ScoredPair:
    """Most recent sender in the last ``window`` turns who addressed the responder, else the recent rule."""
    r, score = rank_responses(sample, model)
    for turn in reversed(sample.context.turns[-window:]):
        if turn.addressee == sample.responder and turn.sender != sample.responder:
            return _pick(sample, turn.sender, r, score)
    addressee, fallback = _recent_addressee(sample, rng)
    return _pick(sample, addressee, r, score, fallback)


class ChanceSelector:
    name = "chance"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, sample: SelectionSample) -> ScoredPair:
        return chance_select(sample, self.rng)


class TfIdfSelector:
    def __init__(self, model: TfIdfModel, direct: bool = False):
        self.model = model
        self.direct = direct
        self.name = "direct_recent_tfidf" if direct else "recent_tfidf"

    def __call__(self, sample: SelectionSample) -> ScoredPair:
        fn = direct_recent_tfidf_select if self.direct else recent_tfidf_select
        return fn(sample, self.model)

