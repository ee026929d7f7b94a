"""Context summary, probability heads, pair selection, and the training loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import SelectionSample
from .encoders import BatchLayout, SpeakerStateTable
from .numkit import (ShapeError, Tensor, add, clip, concat_rows, log, matmul,
                     max_elementwise_reduce, mul, one_minus, scale, sigmoid, sum_, take_cols)

PROB_EPS = 1e-7


@dataclass
class SelectorParams:
    W_a: Tensor
    W_r: Tensor
    W_ar: Tensor | None = None
    W_ra: Tensor | None = None

    @classmethod
    def from_store(cls, store) -> "SelectorParams":
        opt = lambda k: store[k] if k in store else None  # noqa: E731
        return cls(store["sel.W_a"], store["sel.W_r"], opt("sel.W_ar"), opt("sel.W_ra"))


def selector_shapes(config) -> dict[str, tuple[int, ...]]:
    d_s, d_u = config.d_s, config.d_u
    shapes = {"sel.W_a": (2 * d_s, d_s), "sel.W_r": (2 * d_s, d_u)}
    if config.mode == "sirnn":
        shapes["sel.W_ar"] = (2 * d_s + d_u, d_s)
        shapes["sel.W_ra"] = (3 * d_s, d_u)
    return shapes


@dataclass
class EncodedSample:
    """Final speaker table plus candidate-response embeddings for one sample."""

    states: SpeakerStateTable
    responses: list[Tensor]


@dataclass
class HeadTables:
    """Head probabilities over one sample's candidates.

    ``p_adr_given_res[q, p]`` is P(a_p | C, r_q); ``p_res_given_adr[p, q]`` is
    P(r_q | C, a_p). Both are ``None`` for models without conditional heads.
    """

    addressees: list[str]
    p_adr: np.ndarray
    p_res: np.ndarray
    p_adr_given_res: np.ndarray | None = None
    p_res_given_adr: np.ndarray | None = None

    @property
    def has_conditionals(self) -> bool:
        return self.p_adr_given_res is not None and self.p_res_given_adr is not None


@dataclass
class ScoredPair:
    addressee: str
    response_index: int
    addressee_index: int
    p_adr: float
    p_res: float
    p_adr_given_res: float | None = None
    p_res_given_adr: float | None = None
    joint_score: float | None = None
    tables: HeadTables | None = field(default=None, repr=False, compare=False)
    fallback: bool = False

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "addressee", "response_index", "addressee_index", "p_adr", "p_res",
            "p_adr_given_res", "p_res_given_adr", "joint_score", "fallback")}


# --------------------------------------------------------------------------
# heads on single vectors
# --------------------------------------------------------------------------

def summarize_context(states: SpeakerStateTable) -> Tensor:
    """Coordinate-wise max over the context speakers' embeddings."""
    if not states.speakers:
        raise ValueError("cannot summarize an empty speaker table")
    return max_elementwise_reduce(*(states[s] for s in states.speakers))


def _bilinear_logit(left: Sequence[Tensor], W: Tensor, right: Tensor) -> Tensor:
    x = concat_rows(*left)
    if x.shape[0] != W.shape[0] or right.shape[0] != W.shape[1]:
        raise ShapeError(f"bilinear head: {x.shape} x {W.shape} x {right.shape}")
    return sum_(mul(x, matmul(W, right)))


def p_addressee(a_res: Tensor, h_c: Tensor, a_p: Tensor, params: SelectorParams) -> Tensor:
    return sigmoid(_bilinear_logit([a_res, h_c], params.W_a, a_p))


def p_response(a_res: Tensor, h_c: Tensor, r_q: Tensor, params: SelectorParams) -> Tensor:
    return sigmoid(_bilinear_logit([a_res, h_c], params.W_r, r_q))


def p_addressee_given_response(a_res: Tensor, h_c: Tensor, r: Tensor, a_p: Tensor,
                               params: SelectorParams) -> Tensor:
    return sigmoid(_bilinear_logit([a_res, h_c, r], params.W_ar, a_p))


def p_response_given_addressee(a_res: Tensor, h_c: Tensor, a_adr: Tensor, r_q: Tensor,
                               params: SelectorParams) -> Tensor:
    return sigmoid(_bilinear_logit([a_res, h_c, a_adr], params.W_ra, r_q))


def head_tables(sample: SelectionSample, encoded: EncodedSample, params: SelectorParams) -> HeadTables:
    st = encoded.states
    a_res = st[sample.responder]
    h_c = summarize_context(st)
    adrs = sample.addressee_candidates
    resp = encoded.responses
    p_a = np.array([p_addressee(a_res, h_c, st[a], params).item() for a in adrs])
    p_r = np.array([p_response(a_res, h_c, r, params).item() for r in resp])
    if params.W_ar is None or params.W_ra is None:
        return HeadTables(adrs, p_a, p_r)
    par = np.array([[p_addressee_given_response(a_res, h_c, r, st[a], params).item() for a in adrs]
                    for r in resp])
    pra = np.array([[p_response_given_addressee(a_res, h_c, st[a], r, params).item() for r in resp]
                    for a in adrs])
    return HeadTables(adrs, p_a, p_r, par, pra)


# --------------------------------------------------------------------------
# selection
# --------------------------------------------------------------------------

def joint_scores(tables: HeadTables, rule: str = "sum") -> np.ndarray:
    """``(n_addressees, n_responses)`` joint scores."""
    if not tables.has_conditionals:
        raise ValueError("joint selection needs the conditional heads")
    pa = tables.p_adr[:, None]
    pr = tables.p_res[None, :]
    par = tables.p_adr_given_res.T
    pra = tables.p_res_given_adr
    if rule == "sum":
        return pr * par + pa * pra
    if rule == "logmean":
        lg = lambda v: np.log(np.clip(v, PROB_EPS, 1.0))  # noqa: E731
        return 0.5 * (lg(pr) + lg(par) + lg(pa) + lg(pra))
    raise ValueError(f"unknown joint rule {rule!r}")


def _pair(tables: HeadTables, i: int, j: int, rule: str) -> ScoredPair:
    cond = tables.has_conditionals
    return ScoredPair(
        addressee=tables.addressees[i], response_index=j, addressee_index=i,
        p_adr=float(tables.p_adr[i]), p_res=float(tables.p_res[j]),
        p_adr_given_res=float(tables.p_adr_given_res[j, i]) if cond else None,
        p_res_given_adr=float(tables.p_res_given_adr[i, j]) if cond else None,
        joint_score=float(joint_scores(tables, rule)[i, j]) if cond else None,
        tables=tables)


def select_joint_tables(tables: HeadTables, rule: str = "sum") -> ScoredPair:
    """Exhaustive argmax of the joint score; ties go to the lowest (addressee, response) index."""
    if not tables.addressees:
        raise ValueError("no candidate addressees")
    J = joint_scores(tables, rule)
    # row-major argmax returns the first maximum: lowest addressee, then lowest response
    i, j = np.unravel_index(int(np.argmax(J)), J.shape)
    return _pair(tables, int(i), int(j), rule)


def select_separate_tables(tables: HeadTables, rule: str = "sum") -> ScoredPair:
    if not tables.addressees:
        raise ValueError("no candidate addressees")
    return _pair(tables, int(np.argmax(tables.p_adr)), int(np.argmax(tables.p_res)), rule)


def select_joint(sample: SelectionSample, encoded: EncodedSample, params: SelectorParams,
                 rule: str = "sum") -> ScoredPair:
    return select_joint_tables(head_tables(sample, encoded, params), rule)


def select_separate(sample: SelectionSample, encoded: EncodedSample, params: SelectorParams,
                    rule: str = "sum") -> ScoredPair:
    return select_separate_tables(head_tables(sample, encoded, params), rule)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def _bce_term(p: Tensor, label: bool) -> Tensor:
    pc = clip(p, PROB_EPS, 1 - PROB_EPS)
    return log(pc) if label else log(one_minus(pc))


def _head_loss(probs: Sequence[Tensor], truth: int) -> Tensor:
    total = None
    for k, p in enumerate(probs):
        term = _bce_term(p, k == truth)
        total = term if total is None else add(total, term)
    return scale(total, -1.0 / len(probs))


def compute_loss(sample: SelectionSample, encoded: EncodedSample, params: SelectorParams,
                 mode: str = "sirnn") -> Tensor:
    """Per-sample loss: mean binary cross-entropy per head, heads summed with equal weight."""
    if mode not in ("sirnn", "dynamic"):
        raise ValueError(f"unknown mode {mode!r}")
    if sample.truth_addressee is None or sample.truth_response_index is None:
        raise ValueError("sample has no ground truth")
    st = encoded.states
    a_res = st[sample.responder]
    h_c = summarize_context(st)
    adrs = sample.addressee_candidates
    t_a = adrs.index(sample.truth_addressee)
    t_r = sample.truth_response_index
    resp = encoded.responses
    loss = add(_head_loss([p_addressee(a_res, h_c, st[a], params) for a in adrs], t_a),
               _head_loss([p_response(a_res, h_c, r, params) for r in resp], t_r))
    if mode == "sirnn":
        r_true = resp[t_r]
        a_true = st[sample.truth_addressee]
        loss = add(loss, _head_loss(
            [p_addressee_given_response(a_res, h_c, r_true, st[a], params) for a in adrs], t_a))
        loss = add(loss, _head_loss(
            [p_response_given_addressee(a_res, h_c, a_true, r, params) for r in resp], t_r))
    return loss


# --------------------------------------------------------------------------
# batched heads
# --------------------------------------------------------------------------

def _context_vectors(layout: BatchLayout, A: Tensor) -> Tensor:
    """``[a_res; h_C]`` for every sample, ``(2 d_s, B)``."""
    B = layout.B
    slot0 = np.arange(B)
    blocks = []
    for s in range(layout.S):
        cols = np.arange(s * B, (s + 1) * B)
        # slots outside A(C) repeat slot 0, which never changes the max
        cols = np.where(layout.ctx_slot[cols], cols, slot0)
        blocks.append(take_cols(A, cols))
    h_c = max_elementwise_reduce(*blocks)
    a_res = take_cols(A, layout.cols(layout.res_slot))
    return concat_rows(a_res, h_c)


def _scores(x: Tensor, tile: np.ndarray, W: Tensor, cands: Tensor) -> Tensor:
    return sum_(mul(take_cols(x, tile), matmul(W, cands)), axis=0)


def _batched_bce(scores: Tensor, label: np.ndarray, weight: np.ndarray) -> Tensor:
    dt = scores.dtype
    p = clip(sigmoid(scores), PROB_EPS, 1 - PROB_EPS)
    y = Tensor(label.astype(dt))
    terms = add(mul(y, log(p)), mul(Tensor((~label).astype(dt)), log(one_minus(p))))
    return scale(sum_(mul(terms, Tensor(weight.astype(dt)))), -1.0)


def batch_loss(layout: BatchLayout, A: Tensor, U_all: Tensor, params: SelectorParams,
               mode: str = "sirnn") -> Tensor:
    """Mean over the batch of :func:`compute_loss`."""
    B = layout.B
    x = _context_vectors(layout, A)
    tile_s, tile_r = layout.tile(layout.S), layout.tile(layout.R)
    Rm = take_cols(U_all, layout.cand_utt)

    n_adr = np.bincount(np.tile(np.arange(B), layout.S)[layout.adr_cand], minlength=B)
    w_adr = np.where(layout.adr_cand, 1.0 / (n_adr[tile_s] * B), 0.0)
    n_res = np.asarray(layout.n_cands)
    w_res = np.where(layout.res_valid, 1.0 / (n_res[tile_r] * B), 0.0)

    loss = add(_batched_bce(_scores(x, tile_s, params.W_a, A), layout.adr_label, w_adr),
               _batched_bce(_scores(x, tile_r, params.W_r, Rm), layout.res_label, w_res))
    if mode == "sirnn":
        x_ar = concat_rows(x, take_cols(U_all, layout.truth_resp))
        x_ra = concat_rows(x, take_cols(A, layout.cols(layout.truth_slot)))
        loss = add(loss, _batched_bce(_scores(x_ar, tile_s, params.W_ar, A), layout.adr_label, w_adr))
        loss = add(loss, _batched_bce(_scores(x_ra, tile_r, params.W_ra, Rm), layout.res_label, w_res))
    return loss


def _sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def batch_tables(layout: BatchLayout, A: Tensor, U_all: Tensor, params: SelectorParams) -> list[HeadTables]:
    """Head probability tables for every sample of a batch (no differentiation)."""
    B = layout.B
    d_s = A.shape[0]
    Ad = A.data.astype(np.float64)
    x_all = _context_vectors(layout, A).data.astype(np.float64)
    Rm = U_all.data.astype(np.float64)[:, layout.cand_utt]
    W_a, W_r = params.W_a.data.astype(np.float64), params.W_r.data.astype(np.float64)
    cond = params.W_ar is not None and params.W_ra is not None
    if cond:
        W_ar, W_ra = params.W_ar.data.astype(np.float64), params.W_ra.data.astype(np.float64)
    out = []
    for b in range(B):
        slots = layout.slots[b]
        cand_slots = [s for s in range(len(slots)) if layout.adr_cand[s * B + b]]
        A_c = Ad[:, [s * B + b for s in cand_slots]]
        R_c = Rm[:, [q * B + b for q in range(layout.n_cands[b])]]
        x = x_all[:, b]
        tables = HeadTables([slots[s] for s in cand_slots], _sigmoid_np(x @ W_a @ A_c),
                            _sigmoid_np(x @ W_r @ R_c))
        if cond:
            tables.p_adr_given_res = _sigmoid_np((x @ W_ar[:2 * d_s] @ A_c)[None, :]
                                                 + R_c.T @ W_ar[2 * d_s:] @ A_c)
            tables.p_res_given_adr = _sigmoid_np((x @ W_ra[:2 * d_s] @ R_c)[None, :]
                                                 + A_c.T @ W_ra[2 * d_s:] @ R_c)
        out.append(tables)
    return out

