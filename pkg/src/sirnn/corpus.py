"""Chat-log parsing, addressee detection, sample extraction, and vocabulary.

Raw logs hold one document per file, one ``<time>\\t<sender>\\t<utterance>``
record per line. A line whose utterance opens with the name of an earlier
sender (optionally followed by ``:`` or ``,``) is treated as addressed to
that speaker; such lines become prediction targets.
"""

from __future__ import annotations

import json
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

MAX_TOKENS = 20


class CorpusError(ValueError):
    pass


class MalformedLineWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LogLine:
    time: int
    sender: str
    addressee: str | None
    text: str

    def __post_init__(self):
        if not self.sender:
            raise CorpusError("sender must be non-empty")
        if self.addressee is not None and self.addressee == self.sender:
            raise CorpusError(f"line at time {self.time}: addressee equals sender")


@dataclass(frozen=True)
class Turn:
    sender: str
    addressee: str | None
    tokens: tuple[str, ...]


@dataclass
class DialogContext:
    turns: list[Turn]

    @property
    def speakers(self) -> list[str]:
        """A(C) in order of first appearance (sender before addressee within a turn)."""
        seen: dict[str, None] = {}
        for turn in self.turns:
            seen.setdefault(turn.sender)
            if turn.addressee is not None:
                seen.setdefault(turn.addressee)
        return list(seen)

    def __len__(self):
        return len(self.turns)


@dataclass
class SelectionSample:
    context: DialogContext
    responder: str
    candidates: list[tuple[str, ...]]
    truth_addressee: str
    truth_response_index: int
    doc_id: str = ""
    time: int = 0

    @property
    def addressee_candidates(self) -> list[str]:
        return [s for s in self.context.speakers if s != self.responder]

    def to_json(self) -> dict:
        return {
            "context": [[t.sender, t.addressee, list(t.tokens)] for t in self.context.turns],
            "responder": self.responder,
            "candidates": [list(c) for c in self.candidates],
            "truth_addressee": self.truth_addressee,
            "truth_response_index": self.truth_response_index,
            "doc_id": self.doc_id,
            "time": self.time,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SelectionSample":
        turns = [Turn(s, a, tuple(toks)) for s, a, toks in obj["context"]]
        return cls(
            context=DialogContext(turns),
            responder=obj["responder"],
            candidates=[tuple(c) for c in obj["candidates"]],
            truth_addressee=obj["truth_addressee"],
            truth_response_index=int(obj["truth_response_index"]),
            doc_id=obj.get("doc_id", ""),
            time=int(obj.get("time", 0)),
        )


def validate_sample(sample: SelectionSample, max_context: int | None = None) -> None:
    """Raise :class:`CorpusError` unless ``sample`` satisfies the sample invariants."""
    turns = sample.context.turns
    if not turns:
        raise CorpusError("empty context")
    if max_context is not None and len(turns) > max_context:
        raise CorpusError(f"context length {len(turns)} exceeds {max_context}")
    for t in turns:
        if not t.sender:
            raise CorpusError("turn without sender")
        if t.addressee is not None and t.addressee == t.sender:
            raise CorpusError(f"turn addressed to its own sender {t.sender!r}")
    if sample.truth_addressee == sample.responder:
        raise CorpusError("truth addressee equals responding speaker")
    if sample.truth_addressee not in sample.context.speakers:
        raise CorpusError(f"truth addressee {sample.truth_addressee!r} not in context speakers")
    if len(sample.candidates) < 1:
        raise CorpusError("no candidate responses")
    if not 0 <= sample.truth_response_index < len(sample.candidates):
        raise CorpusError("truth response index out of range")


# --------------------------------------------------------------------------
# raw logs
# --------------------------------------------------------------------------

def tokenize_truncate(text: str, max_tokens: int = MAX_TOKENS) -> list[str]:
    return text.lower().split()[:max_tokens]


def parse_document(text: str | bytes, source: str = "<document>") -> list[LogLine]:
    """Parse one raw document; malformed lines are skipped with a :class:`MalformedLineWarning`."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CorpusError(f"{source}: not valid UTF-8 ({e})") from None
    lines = []
    last_time = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t", 2)
        problem = None
        if len(parts) != 3:
            problem = "expected 3 tab-separated fields"
        else:
            time_s, sender, utterance = parts
            sender = sender.strip()
            try:
                time = int(time_s)
            except ValueError:
                problem = f"time {time_s!r} is not an integer"
            else:
                if not sender:
                    problem = "empty sender"
                elif last_time is not None and time < last_time:
                    problem = f"time {time} precedes {last_time}"
        if problem:
            warnings.warn(f"{source}:{lineno}: {problem}", MalformedLineWarning, stacklevel=2)
            continue
        last_time = time
        lines.append(LogLine(time, sender, None, utterance))
    if not lines:
        raise CorpusError(f"{source}: empty document")
    return lines


def _mention_token(text: str) -> str | None:
    parts = text.split(maxsplit=1)
    if not parts:
        return None
    tok = parts[0]
    if tok.endswith((":", ",")):
        tok = tok[:-1]
    return tok or None


def detect_addressee(line: LogLine, known_speakers: Iterable[str]) -> str | None:
    """Return the known speaker named by the utterance's first token, if any.

    Matching is case-insensitive after stripping one trailing ``:`` or ``,``.
    The sender never addresses itself.
    """
    tok = _mention_token(line.text)
    if tok is None:
        return None
    key = tok.lower()
    for spk in known_speakers:
        if spk.lower() == key and spk != line.sender:
            return spk
    return None


def strip_mention(text: str) -> str:
    parts = text.split(maxsplit=1)
    return parts[1] if len(parts) == 2 else ""


@dataclass
class AnnotatedLine:
    line: LogLine
    tokens: tuple[str, ...]


def annotate_document(doc: Sequence[LogLine], max_tokens: int = MAX_TOKENS) -> list[AnnotatedLine]:
    """Attach detected addressees and tokenize (mention token removed)."""
    out = []
    # most recent spelling wins when two senders differ only by case
    known: dict[str, str] = {}
    for line in doc:
        addressee = line.addressee
        text = line.text
        if addressee is None:
            addressee = detect_addressee(line, known.values())
            if addressee is not None:
                text = strip_mention(text)
        annotated = LogLine(line.time, line.sender, addressee, text)
        out.append(AnnotatedLine(annotated, tuple(tokenize_truncate(text, max_tokens))))
        known.pop(line.sender.lower(), None)
        known[line.sender.lower()] = line.sender
    return out


def parse_annotated_document(text: str, source: str = "<document>") -> list[LogLine]:
    """Importer for pre-annotated logs: ``<time>\\t<sender>\\t<addressee or ->\\t<utterance>``."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t", 3)
        try:
            time = int(parts[0])
            sender, adr, utt = parts[1].strip(), parts[2].strip(), parts[3]
            lines.append(LogLine(time, sender, None if adr in ("", "-") else adr, utt))
        except (IndexError, ValueError) as e:
            warnings.warn(f"{source}:{lineno}: {e}", MalformedLineWarning, stacklevel=2)
    if not lines:
        raise CorpusError(f"{source}: empty document")
    return lines


def extract_samples(doc: Sequence[LogLine], T: int, n_candidates: int, rng_seed: int,
                    doc_id: str = "", max_tokens: int = MAX_TOKENS) -> list[SelectionSample]:
    """Build selection samples for every explicitly addressed line with history.

    The context is the up-to-``T`` preceding lines. Negatives are drawn
    uniformly from the other lines of the document with token content distinct
    from the truth and from each other. Samples whose addressee does not
    appear in the context, or that lack enough distinct negatives, are dropped.
    """
    if n_candidates < 2:
        raise ValueError("n_candidates must be at least 2")
    if len(doc) < 2:
        return []
    rng = np.random.default_rng(rng_seed)
    ann = annotate_document(doc, max_tokens)
    samples = []
    for i, cur in enumerate(ann):
        line = cur.line
        if line.addressee is None or i == 0:
            continue
        window = ann[max(0, i - T):i]
        context = DialogContext([Turn(a.line.sender, a.line.addressee, a.tokens) for a in window])
        if line.addressee not in context.speakers:
            continue
        truth = cur.tokens
        seen = {truth}
        pool = []
        for j in rng.permutation(len(ann)):
            if j == i:
                continue
            toks = ann[j].tokens
            if toks in seen:
                continue
            seen.add(toks)
            pool.append(toks)
            if len(pool) == n_candidates - 1:
                break
        if len(pool) < n_candidates - 1:
            continue
        cands = [truth] + pool
        order = rng.permutation(n_candidates)
        cands = [cands[k] for k in order]
        truth_idx = int(np.flatnonzero(order == 0)[0])
        sample = SelectionSample(context, line.sender, cands, line.addressee, truth_idx,
                                 doc_id=doc_id, time=line.time)
        validate_sample(sample, max_context=T)
        samples.append(sample)
    return samples


def document_seed(seed: int, doc_id: str) -> int:
    """Stable per-document seed, independent of processing order."""
    return (seed * 1_000_003 + zlib.crc32(doc_id.encode("utf-8"))) % (2**32)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def write_samples(path, samples: Iterable[SelectionSample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True))
            f.write("\n")
            n += 1
    return n


def read_samples(path) -> list[SelectionSample]:
    with open(path, encoding="utf-8") as f:
        return [SelectionSample.from_json(json.loads(line)) for line in f if line.strip()]


def read_word_vectors(path) -> dict[str, np.ndarray]:
    """Text word vectors: one token per line followed by its components."""
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            parts = raw.rstrip().split(" ")
            if len(parts) < 2:
                continue
            vec = np.asarray(parts[1:], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise CorpusError(f"{path}:{lineno}: expected {dim} components, got {vec.size}")
            vectors[parts[0]] = vec
    return vectors


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------

@dataclass
class Vocab:
    """Token index with a frozen embedding matrix; row 0 is the shared UNK vector."""

    tokens: list[str]
    vectors: np.ndarray
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {t: i + 1 for i, t in enumerate(self.tokens)}
        if self.vectors.shape[0] != len(self.tokens) + 1:
            raise CorpusError("embedding rows must equal vocabulary size + 1")
        self.vectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def lookup(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.index.get(token, 0)]

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], d_w: int, seed: int,
              word_vectors: dict[str, np.ndarray] | None = None, min_count: int = 1,
              random_scale: float = 0.4) -> "Vocab":
        """Vocabulary over training tokens.

        With ``word_vectors``, only tokens that have a vector get a row; the
        rest map to UNK. Without them, every token gets a seeded random vector.
        """
        counts: dict[str, int] = {}
        for toks in token_lists:
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
        rng = np.random.default_rng(seed)
        unk = rng.uniform(-0.01, 0.01, size=d_w)
        keep = sorted(t for t, c in counts.items() if c >= min_count)
        if word_vectors is not None:
            keep = [t for t in keep if t in word_vectors]
            rows = [word_vectors[t] for t in keep]
            if rows and len(rows[0]) != d_w:
                raise CorpusError(f"word vectors have dimension {len(rows[0])}, expected {d_w}")
        else:
            rows = list(rng.normal(0.0, random_scale, size=(len(keep), d_w)))
        mat = np.vstack([unk] + rows) if rows else unk[None, :]
        return cls(keep, mat.astype(np.float64))

    def to_json(self) -> dict:
        return {"tokens": self.tokens}


def sample_token_lists(samples: Iterable[SelectionSample]) -> Iterator[tuple[str, ...]]:
    for s in samples:
        for t in s.context.turns:
            yield t.tokens
        yield from s.candidates


def load_documents(raw_dir) -> list[tuple[str, str]]:
    """``(doc_id, text)`` for every regular file in ``raw_dir``, sorted by name."""
    root = Path(raw_dir)
    if not root.is_dir():
        raise CorpusError(f"input directory not found: {root}")
    docs = []
    for p in sorted(root.iterdir()):
        if p.is_file() and not p.name.startswith("."):
            data = p.read_bytes()
            try:
                docs.append((p.name, data.decode("utf-8")))
            except UnicodeDecodeError as e:
                raise CorpusError(f"{p}: not valid UTF-8 ({e})") from None
    return docs
