"""Accuracy metrics, binned analyses, synthetic dialogs, and report output."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import DialogContext, SelectionSample, Turn, validate_sample
from .selector import ScoredPair, joint_scores, select_joint_tables, select_separate_tables

SPEAKER_BINS = ("<=2", "3", "4", "5", "6-10", "11+")


def speaker_count_bin(n: int) -> str:
    if n <= 2:
        return "<=2"
    if n <= 5:
        return str(n)
    if n <= 10:
        return "6-10"
    return "11+"


def addressing_distance(sample: SelectionSample) -> int:
    """Turns back to the truth addressee's latest utterance (last turn = 1); ``T + 1`` if it never spoke."""
    turns = sample.context.turns
    for back, turn in enumerate(reversed(turns), start=1):
        if turn.sender == sample.truth_addressee:
            return back
    return len(turns) + 1


@dataclass
class EvalReport:
    n_samples: int
    adr_acc: float
    res_acc: float
    adr_res_acc: float
    bins_by_speaker_count: dict[str, tuple[int, float]]
    bins_by_distance: dict[int, tuple[int, float]]
    model: str = ""
    joint_checked: int = 0
    joint_strictly_better: int = 0
    joint_violations: int = 0

    @property
    def joint_better_fraction(self) -> float | None:
        return self.joint_strictly_better / self.joint_checked if self.joint_checked else None

    def to_json(self) -> dict:
        d = asdict(self)
        d["bins_by_speaker_count"] = {k: {"n": n, "adr_acc": a} for k, (n, a) in self.bins_by_speaker_count.items()}
        d["bins_by_distance"] = {str(k): {"n": n, "adr_acc": a} for k, (n, a) in self.bins_by_distance.items()}
        d["joint_better_fraction"] = self.joint_better_fraction
        return d

    def to_text(self) -> str:
        lines = [f"model        {self.model or '-'}",
                 f"samples      {self.n_samples}",
                 f"ADR          {100 * self.adr_acc:6.2f}",
                 f"RES          {100 * self.res_acc:6.2f}",
                 f"ADR-RES      {100 * self.adr_res_acc:6.2f}"]
        if self.joint_checked:
            lines.append(f"joint>sep    {self.joint_strictly_better}/{self.joint_checked}"
                         f"  violations {self.joint_violations}")
        lines.append("")
        lines.append(f"{'speakers':>10} {'n':>7} {'ADR':>7}")
        for k, (n, a) in self.bins_by_speaker_count.items():
            lines.append(f"{k:>10} {n:>7} {100 * a:7.2f}")
        lines.append("")
        lines.append(f"{'distance':>10} {'n':>7} {'ADR':>7}")
        for k, (n, a) in self.bins_by_distance.items():
            lines.append(f"{k:>10} {n:>7} {100 * a:7.2f}")
        return "\n".join(lines)

    def write(self, path) -> None:
        """JSON report at ``path`` plus ``.txt`` and per-bin ``.csv`` siblings."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        p.with_suffix(".txt").write_text(self.to_text() + "\n")
        for name, bins in (("speakers", self.bins_by_speaker_count), ("distance", self.bins_by_distance)):
            with open(p.with_name(f"{p.stem}.{name}.csv"), "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["bin", "n", "adr_acc"])
                for k, (n, a) in bins.items():
                    w.writerow([k, n, f"{a:.6f}"])


def _as_pair(pred) -> tuple[str, int]:
    if isinstance(pred, ScoredPair):
        return pred.addressee, pred.response_index
    adr, res = pred
    return adr, int(res)


def _predict_all(selector, samples):
    if hasattr(selector, "predict"):
        return selector.predict(samples)
    return [selector(s) for s in samples]


def evaluate(selector: Callable, samples: Sequence[SelectionSample]) -> EvalReport:
    """Score a selector on samples.

    ``selector`` maps a sample to a :class:`ScoredPair` or an ``(addressee,
    response_index)`` tuple; objects with a ``predict(samples)`` method are
    called once for the whole list. When predictions carry head tables with
    conditional heads, the joint-vs-separate comparison is tallied too.
    """
    preds = _predict_all(selector, samples)
    n = len(samples)
    adr_ok = np.zeros(n, dtype=bool)
    res_ok = np.zeros(n, dtype=bool)
    rule = getattr(getattr(selector, "config", None), "joint_rule", "sum")
    checked = better = violations = 0
    for i, (s, pred) in enumerate(zip(samples, preds)):
        adr, res = _as_pair(pred)
        adr_ok[i] = adr == s.truth_addressee
        res_ok[i] = res == s.truth_response_index
        tables = getattr(pred, "tables", None)
        if tables is not None and tables.has_conditionals:
            J = joint_scores(tables, rule)
            j = select_joint_tables(tables, rule)
            sep = select_separate_tables(tables, rule)
            sj, ss = J[j.addressee_index, j.response_index], J[sep.addressee_index, sep.response_index]
            checked += 1
            better += bool(sj > ss)
            violations += bool(sj < ss)
    both = adr_ok & res_ok

    by_spk: dict[str, list[int]] = {k: [0, 0] for k in SPEAKER_BINS}
    by_dist: dict[int, list[int]] = {}
    for s, ok in zip(samples, adr_ok):
        k = speaker_count_bin(len(s.context.speakers))
        by_spk[k][0] += 1
        by_spk[k][1] += int(ok)
        d = addressing_distance(s)
        cell = by_dist.setdefault(d, [0, 0])
        cell[0] += 1
        cell[1] += int(ok)
    frac = lambda c: (c[0], c[1] / c[0] if c[0] else 0.0)  # noqa: E731
    return EvalReport(
        n_samples=n,
        adr_acc=float(adr_ok.mean()) if n else 0.0,
        res_acc=float(res_ok.mean()) if n else 0.0,
        adr_res_acc=float(both.mean()) if n else 0.0,
        bins_by_speaker_count={k: frac(v) for k, v in by_spk.items()},
        bins_by_distance={k: frac(by_dist[k]) for k in sorted(by_dist)},
        model=getattr(selector, "name", ""),
        joint_checked=checked, joint_strictly_better=better, joint_violations=violations,
    )


# --------------------------------------------------------------------------
# synthetic dialogs
# --------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Parameters of the "reply to whoever last addressed you" generator.

    ``distance_probs[d-1]`` is the probability that the truth addressee last
    spoke ``d`` turns before the end of the context. The default decays
    geometrically with ratio 0.7.
    """

    n_samples: int = 1000
    n_speakers: int = 5
    n_subconvs: int = 2
    context_length: int = 10
    distance_probs: list[float] | None = None
    vocab_size: int = 200
    res_cand: int = 2
    seed: int = 0
    blank_rate: float = 0.3
    min_words: int = 3
    max_words: int = 8
    name_pool: int = 50
    n_topics: int = 8
    _probs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("need at least 2 speakers")
        if self.context_length < 2:
            raise ValueError("context length must be at least 2")
        if self.n_subconvs < 1:
            raise ValueError("need at least one sub-conversation")
        if self.res_cand < 1:
            raise ValueError("res_cand must be positive")
        if self.n_topics < self.n_subconvs:
            raise ValueError("need at least one topic per sub-conversation")
        if self.vocab_size < self.n_topics:
            raise ValueError("vocabulary smaller than the number of topics")
        if self.distance_probs is None:
            w = 0.7 ** np.arange(self.context_length)
            probs = w / w.sum()
        else:
            probs = np.asarray(self.distance_probs, dtype=np.float64)
            if probs.shape != (self.context_length,) or (probs < 0).any() or not np.isclose(probs.sum(), 1):
                raise ValueError("distance_probs must be a distribution over 1..context_length")
        self._probs = probs

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    def to_json(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not k.startswith("_")}
        d["distance_probs"] = [float(x) for x in self._probs]
        return d


def generate_synthetic(spec: SynthSpec) -> list[SelectionSample]:
    """Interleaved sub-conversations whose label is the speaker who last addressed the responder.

    Each speaker belongs to one sub-conversation; utterances are drawn from
    that sub-conversation's topic words plus the sender's signature token.
    The truth addressee ``x`` addresses the responder exactly ``d`` turns
    before the end and is silent afterwards; nobody else addresses the
    responder after that turn. Names are drawn afresh per sample, so only
    the interaction pattern identifies the addressee.
    """
    rng = np.random.default_rng(spec.seed)
    T = spec.context_length
    words = [f"w{i}" for i in range(spec.vocab_size)]
    topics = np.array_split(np.arange(spec.vocab_size), spec.n_topics)
    names = [f"spk{i:02d}" for i in range(max(spec.name_pool, spec.n_speakers))]

    def utterance(speaker, bank):
        n = int(rng.integers(spec.min_words, spec.max_words + 1))
        body = [words[k] for k in rng.choice(topics[bank], size=n)]
        pos = int(rng.integers(0, n + 1))
        return tuple(body[:pos] + [f"sig_{speaker}"] + body[pos:])

    samples = []
    for i in range(spec.n_samples):
        spk = [names[k] for k in rng.choice(len(names), size=spec.n_speakers, replace=False)]
        res, x = spk[0], spk[1]
        others = spk[2:]
        group = {res: 0, x: 0}
        for k, o in enumerate(others):
            group[o] = (k + 1) % spec.n_subconvs
        banks = rng.choice(spec.n_topics, size=spec.n_subconvs, replace=False)
        members = {g: [s for s in spk if group[s] == g] for g in range(spec.n_subconvs)}

        d = int(rng.choice(np.arange(1, T + 1), p=spec.probs))
        key = T - d
        turns = []
        for t in range(T):
            if t == key:
                turns.append(Turn(x, res, utterance(x, banks[group[x]])))
                continue
            eligible = spk if t < key else [s for s in spk if s != x]
            sender = eligible[int(rng.integers(len(eligible)))]
            addressee = None
            if rng.random() >= spec.blank_rate:
                options = [m for m in members[group[sender]] if m != sender and not (t > key and m == res)]
                if options:
                    addressee = options[int(rng.integers(len(options)))]
            turns.append(Turn(sender, addressee, utterance(sender, banks[group[sender]])))

        truth = utterance(res, banks[group[res]])
        cands = [truth]
        seen = {truth}
        while len(cands) < spec.res_cand:
            who = spk[1 + int(rng.integers(len(spk) - 1))]
            c = utterance(who, banks[group[who]])
            if c not in seen:
                seen.add(c)
                cands.append(c)
        order = rng.permutation(len(cands))
        sample = SelectionSample(DialogContext(turns), res, [cands[k] for k in order], x,
                                 int(np.flatnonzero(order == 0)[0]), doc_id=f"synth-{i}", time=T)
        validate_sample(sample)
        samples.append(sample)
    return samples
