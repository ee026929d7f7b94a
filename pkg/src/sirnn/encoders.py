"""Utterance and dialog encoders.

Two code paths compute the same functions:

* a per-sample path over a ``{speaker: vector}`` table, written to mirror the
  update equations one speaker at a time, and
* a batched path that stacks every (speaker slot, sample) pair as a column of
  one matrix and applies role updates through column gathers and 0/1 masks.

Training uses the batched path; tests hold it to the per-sample path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import DialogContext, SelectionSample, Vocab
from .numkit import (ShapeError, Tensor, add, concat_rows, matmul, mul, one_minus, sigmoid,
                     take_cols, tanh)

ROLES = ("sender", "addressee")


# --------------------------------------------------------------------------
# parameter bundles
# --------------------------------------------------------------------------

@dataclass
class GRUParams:
    W_r: Tensor
    W_z: Tensor
    W: Tensor
    U_r: Tensor
    U_z: Tensor
    U: Tensor
    b_r: Tensor | None = None
    b_z: Tensor | None = None
    b: Tensor | None = None

    @property
    def dims(self) -> tuple[int, int]:
        return self.W.shape[1], self.W.shape[0]

    @classmethod
    def from_store(cls, store, prefix: str) -> "GRUParams":
        get = lambda k: store[f"{prefix}.{k}"] if f"{prefix}.{k}" in store else None  # noqa: E731
        return cls(*(store[f"{prefix}.{k}"] for k in ("W_r", "W_z", "W", "U_r", "U_z", "U")),
                   get("b_r"), get("b_z"), get("b"))


@dataclass
class IGRUParams:
    W_r: Tensor
    W_p: Tensor
    W_z: Tensor
    W: Tensor
    U_r: Tensor
    U_p: Tensor
    U_z: Tensor
    U: Tensor
    V_r: Tensor
    V_p: Tensor
    V_z: Tensor
    V: Tensor
    b_r: Tensor | None = None
    b_p: Tensor | None = None
    b_z: Tensor | None = None
    b: Tensor | None = None

    NAMES = ("W_r", "W_p", "W_z", "W", "U_r", "U_p", "U_z", "U", "V_r", "V_p", "V_z", "V")

    @classmethod
    def from_store(cls, store, prefix: str) -> "IGRUParams":
        biases = [store[f"{prefix}.{k}"] if f"{prefix}.{k}" in store else None
                  for k in ("b_r", "b_p", "b_z", "b")]
        return cls(*(store[f"{prefix}.{k}"] for k in cls.NAMES), *biases)

    def as_gru(self) -> GRUParams:
        """The plain-GRU subset, used when observer updates share the role units."""
        return GRUParams(self.W_r, self.W_z, self.W, self.U_r, self.U_z, self.U,
                         self.b_r, self.b_z, self.b)


@dataclass
class SIRNNParams:
    utt: GRUParams
    igru_s: IGRUParams
    igru_a: IGRUParams
    gru_o: GRUParams


@dataclass
class DynamicParams:
    utt: GRUParams
    dyn: GRUParams


def gru_shapes(prefix: str, d_in: int, d_h: int, bias: bool) -> dict[str, tuple[int, ...]]:
    shapes = {f"{prefix}.{k}": (d_h, d_in) for k in ("W_r", "W_z", "W")}
    shapes.update({f"{prefix}.{k}": (d_h, d_h) for k in ("U_r", "U_z", "U")})
    if bias:
        shapes.update({f"{prefix}.{k}": (d_h,) for k in ("b_r", "b_z", "b")})
    return shapes


def igru_shapes(prefix: str, d_in: int, d_h: int, bias: bool) -> dict[str, tuple[int, ...]]:
    shapes = {f"{prefix}.{k}": (d_h, d_in) for k in ("W_r", "W_p", "W_z", "W")}
    shapes.update({f"{prefix}.{k}{g}": (d_h, d_h) for k in ("U", "V") for g in ("_r", "_p", "_z", "")})
    if bias:
        shapes.update({f"{prefix}.{k}": (d_h,) for k in ("b_r", "b_p", "b_z", "b")})
    return shapes


def encoder_shapes(config) -> dict[str, tuple[int, ...]]:
    d_s, d_u, d_w, bias = config.d_s, config.d_u, config.d_w, config.use_bias
    shapes = gru_shapes("utt", d_w, d_u, bias)
    if config.mode == "dynamic":
        shapes.update(gru_shapes("dyn", d_u, d_s, bias))
        return shapes
    shapes.update(igru_shapes("igru_s", d_s + d_u, d_s, bias))
    if not config.shared_igrus:
        shapes.update(igru_shapes("igru_a", d_s + d_u, d_s, bias))
        shapes.update(gru_shapes("gru_o", d_s + d_u, d_s, bias))
    return shapes


def encoder_params(store, config) -> SIRNNParams | DynamicParams:
    utt = GRUParams.from_store(store, "utt")
    if config.mode == "dynamic":
        return DynamicParams(utt, GRUParams.from_store(store, "dyn"))
    igru_s = IGRUParams.from_store(store, "igru_s")
    if config.shared_igrus:
        return SIRNNParams(utt, igru_s, igru_s, igru_s.as_gru())
    return SIRNNParams(utt, igru_s, IGRUParams.from_store(store, "igru_a"),
                       GRUParams.from_store(store, "gru_o"))


# --------------------------------------------------------------------------
# recurrent units (work on vectors and on column-stacked matrices alike)
# --------------------------------------------------------------------------

def _gate(parts, bias):
    acc = parts[0]
    for p in parts[1:]:
        acc = add(acc, p)
    if bias is not None:
        acc = add(acc, bias)
    return acc


def _check_dims(kind, W, x, h):
    if x.shape[0] != W.shape[1] or h.shape[0] != W.shape[0]:
        raise ShapeError(f"{kind}: input {x.shape} / state {h.shape} do not fit weights {W.shape}")


def gru_step(h_prev: Tensor, x: Tensor, p: GRUParams) -> Tensor:
    """``h = z*h_prev + (1-z)*tanh(W x + U (r*h_prev))``."""
    _check_dims("gru", p.W, x, h_prev)
    r = sigmoid(_gate([matmul(p.W_r, x), matmul(p.U_r, h_prev)], p.b_r))
    z = sigmoid(_gate([matmul(p.W_z, x), matmul(p.U_z, h_prev)], p.b_z))
    cand = tanh(_gate([matmul(p.W, x), matmul(p.U, mul(r, h_prev))], p.b))
    return add(mul(z, h_prev), mul(one_minus(z), cand))


def gru_o_step(own_prev: Tensor, u_in: Tensor, params: GRUParams) -> Tensor:
    return gru_step(own_prev, u_in, params)


def igru_step(role: str, own_prev: Tensor, other_prev: Tensor, u_in: Tensor,
              params: IGRUParams) -> Tensor:
    """Interactive GRU update for a sender or addressee.

    ``own_prev`` is the updated speaker's previous embedding and
    ``other_prev`` its interlocutor's; ``params`` must be the role's unit.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    p = params
    _check_dims(f"igru[{role}]", p.W, u_in, own_prev)
    if other_prev.shape != own_prev.shape:
        raise ShapeError(f"igru[{role}]: other state {other_prev.shape} vs own {own_prev.shape}")
    r = sigmoid(_gate([matmul(p.W_r, u_in), matmul(p.U_r, own_prev), matmul(p.V_r, other_prev)], p.b_r))
    q = sigmoid(_gate([matmul(p.W_p, u_in), matmul(p.U_p, own_prev), matmul(p.V_p, other_prev)], p.b_p))
    z = sigmoid(_gate([matmul(p.W_z, u_in), matmul(p.U_z, own_prev), matmul(p.V_z, other_prev)], p.b_z))
    proposal = tanh(_gate([matmul(p.W, u_in), matmul(p.U, mul(r, own_prev)),
                           matmul(p.V, mul(q, other_prev))], p.b))
    return add(mul(z, own_prev), mul(one_minus(z), proposal))


# --------------------------------------------------------------------------
# per-sample path
# --------------------------------------------------------------------------

def encode_utterance(tokens: Sequence[str], vocab: Vocab, params: GRUParams) -> Tensor:
    d_in, d_h = params.dims
    dtype = params.W.dtype
    h = Tensor(np.zeros(d_h, dtype=dtype))
    for tok in tokens:
        h = gru_step(h, Tensor(vocab.vector(tok), dtype=dtype), params)
    return h


@dataclass
class SpeakerStateTable:
    embeddings: dict[str, Tensor]
    speakers: list[str]
    t: int = 0

    def __getitem__(self, speaker: str) -> Tensor:
        return self.embeddings[speaker]


def _initial_table(context: DialogContext, responder: str | None, d_s: int, dtype) -> SpeakerStateTable:
    speakers = context.speakers
    ids = list(speakers)
    if responder is not None and responder not in ids:
        ids.append(responder)
    zero = np.zeros(d_s, dtype=dtype)
    return SpeakerStateTable({s: Tensor(zero.copy()) for s in ids}, speakers, 0)


def encode_dialog_sirnn(context: DialogContext, vocab: Vocab, params: SIRNNParams,
                        responder: str | None = None, trace: list | None = None) -> SpeakerStateTable:
    """Role-sensitive dialog encoder; ``trace`` collects ``(t, speaker, unit)`` when given."""
    d_s = params.igru_s.U.shape[0]
    dtype = params.igru_s.U.dtype
    table = _initial_table(context, responder, d_s, dtype)
    zero = Tensor(np.zeros(d_s, dtype=dtype))
    for t, turn in enumerate(context.turns, start=1):
        prev = table.embeddings
        sdr, adr = turn.sender, turn.addressee
        if sdr not in prev:
            raise KeyError(f"sender {sdr!r} missing from speaker table")
        u = encode_utterance(turn.tokens, vocab, params.utt)
        u_in = concat_rows(prev[sdr], u)
        adr_prev = prev[adr] if adr is not None else zero
        new = dict(prev)
        new[sdr] = igru_step("sender", prev[sdr], adr_prev, u_in, params.igru_s)
        units = {sdr: "IGRU_S"}
        if adr is not None:
            new[adr] = igru_step("addressee", prev[adr], prev[sdr], u_in, params.igru_a)
            units[adr] = "IGRU_A"
        for spk in table.speakers:
            if spk not in units:
                new[spk] = gru_o_step(prev[spk], u_in, params.gru_o)
                units[spk] = "GRU_O"
        if trace is not None:
            trace.extend((t, spk, unit) for spk, unit in units.items())
        table = SpeakerStateTable(new, table.speakers, t)
    return table


def encode_dialog_dynamic(context: DialogContext, vocab: Vocab, params: DynamicParams,
                          responder: str | None = None) -> SpeakerStateTable:
    """Sender-only encoder: the sender consumes the utterance, everyone else a zero input."""
    d_s = params.dyn.U.shape[0]
    dtype = params.dyn.U.dtype
    table = _initial_table(context, responder, d_s, dtype)
    zero_u = Tensor(np.zeros(params.dyn.W.shape[1], dtype=dtype))
    for t, turn in enumerate(context.turns, start=1):
        prev = table.embeddings
        if turn.sender not in prev:
            raise KeyError(f"sender {turn.sender!r} missing from speaker table")
        u = encode_utterance(turn.tokens, vocab, params.utt)
        new = dict(prev)
        for spk in table.speakers:
            new[spk] = gru_step(prev[spk], u if spk == turn.sender else zero_u, params.dyn)
        table = SpeakerStateTable(new, table.speakers, t)
    return table


# --------------------------------------------------------------------------
# batched path
# --------------------------------------------------------------------------

@dataclass
class BatchLayout:
    """Index arrays and masks for a mini-batch; column ``s*B + b`` is slot ``s`` of sample ``b``."""

    B: int
    S: int
    T: int
    R: int
    slots: list[list[str]]
    utt_tokens: np.ndarray          # (n_utt, L) vocabulary rows, -1 = padding
    utt_len: np.ndarray
    sender_slot: np.ndarray         # (T, B)
    adr_slot: np.ndarray            # (T, B), -1 = blank addressee
    active: np.ndarray              # (T, B)
    turn_utt: np.ndarray            # (T, B) utterance column
    ctx_slot: np.ndarray            # (N,) slot belongs to A(C)
    res_slot: np.ndarray            # (B,)
    adr_cand: np.ndarray            # (N,) candidate addressee slot
    adr_label: np.ndarray           # (N,)
    truth_slot: np.ndarray          # (B,)
    cand_utt: np.ndarray            # (R*B,) utterance column of candidate q for sample b
    res_valid: np.ndarray           # (R*B,)
    res_label: np.ndarray           # (R*B,)
    truth_resp: np.ndarray          # (B,)
    n_cands: list[int] = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.S * self.B

    @classmethod
    def build(cls, samples: Sequence[SelectionSample], vocab: Vocab) -> "BatchLayout":
        B = len(samples)
        if B == 0:
            raise ValueError("empty batch")
        slots = []
        for s in samples:
            ids = s.context.speakers
            if s.responder not in ids:
                ids = ids + [s.responder]
            slots.append(ids)
        S = max(len(x) for x in slots)
        T = max(len(s.context.turns) for s in samples)
        R = max(len(s.candidates) for s in samples)
        N = S * B

        utt_index: dict[tuple[str, ...], int] = {}

        def utt_col(tokens):
            key = tuple(tokens)
            if key not in utt_index:
                utt_index[key] = len(utt_index)
            return utt_index[key]

        sender_slot = np.zeros((T, B), dtype=np.intp)
        adr_slot = np.full((T, B), -1, dtype=np.intp)
        active = np.zeros((T, B), dtype=bool)
        turn_utt = np.zeros((T, B), dtype=np.intp)
        ctx_slot = np.zeros(N, dtype=bool)
        res_slot = np.zeros(B, dtype=np.intp)
        adr_cand = np.zeros(N, dtype=bool)
        adr_label = np.zeros(N, dtype=bool)
        truth_slot = np.zeros(B, dtype=np.intp)
        cand_utt = np.zeros(R * B, dtype=np.intp)
        res_valid = np.zeros(R * B, dtype=bool)
        res_label = np.zeros(R * B, dtype=bool)
        truth_resp = np.zeros(B, dtype=np.intp)
        n_cands = []

        for b, s in enumerate(samples):
            pos = {spk: i for i, spk in enumerate(slots[b])}
            n_ctx = len(s.context.speakers)
            for i in range(n_ctx):
                ctx_slot[i * B + b] = True
            for t, turn in enumerate(s.context.turns):
                sender_slot[t, b] = pos[turn.sender]
                if turn.addressee is not None:
                    adr_slot[t, b] = pos[turn.addressee]
                active[t, b] = True
                turn_utt[t, b] = utt_col(turn.tokens)
            res_slot[b] = pos[s.responder]
            for i in range(n_ctx):
                if slots[b][i] != s.responder:
                    adr_cand[i * B + b] = True
            truth_slot[b] = pos[s.truth_addressee]
            adr_label[truth_slot[b] * B + b] = True
            for q, cand in enumerate(s.candidates):
                cand_utt[q * B + b] = utt_col(cand)
                res_valid[q * B + b] = True
            res_label[s.truth_response_index * B + b] = True
            truth_resp[b] = cand_utt[s.truth_response_index * B + b]
            n_cands.append(len(s.candidates))

        keys = list(utt_index)
        L = max([len(k) for k in keys] + [1])
        utt_tokens = np.full((len(keys), L), -1, dtype=np.intp)
        utt_len = np.zeros(len(keys), dtype=np.intp)
        for i, k in enumerate(keys):
            utt_tokens[i, :len(k)] = vocab.lookup(k)
            utt_len[i] = len(k)
        return cls(B, S, T, R, slots, utt_tokens, utt_len, sender_slot, adr_slot, active,
                   turn_utt, ctx_slot, res_slot, adr_cand, adr_label, truth_slot, cand_utt,
                   res_valid, res_label, truth_resp, n_cands)

    def tile(self, n_blocks: int) -> np.ndarray:
        """Column index mapping block ``k`` column ``k*B + b`` to sample ``b``."""
        return np.tile(np.arange(self.B), n_blocks)

    def cols(self, slot: np.ndarray) -> np.ndarray:
        return np.asarray(slot) * self.B + np.arange(self.B)


def _mask(rows: int, cols_mask: np.ndarray, dtype) -> Tensor:
    return Tensor(np.broadcast_to(cols_mask.astype(dtype), (rows, cols_mask.size)).copy())


def encode_utterances_batch(layout: BatchLayout, vectors: np.ndarray, params: GRUParams) -> Tensor:
    """Encode every distinct utterance of the batch at once; returns ``(d_u, n_utt)``."""
    d_in, d_h = params.dims
    dtype = params.W.dtype
    n = layout.utt_tokens.shape[0]
    padded = np.vstack([vectors.astype(dtype), np.zeros((1, vectors.shape[1]), dtype=dtype)])
    h = Tensor(np.zeros((d_h, n), dtype=dtype))
    for j in range(layout.utt_tokens.shape[1]):
        live = layout.utt_len > j
        if not live.any():
            break
        x = Tensor(padded[layout.utt_tokens[:, j]].T.copy())
        new = gru_step(h, x, params)
        if live.all():
            h = new
        else:
            h = add(mul(_mask(d_h, live, dtype), new), mul(_mask(d_h, ~live, dtype), h))
    return h


def _step_masks(layout: BatchLayout, t: int):
    B, S = layout.B, layout.S
    act = layout.active[t]
    slot_of_col = np.repeat(np.arange(S), B)
    b_of_col = np.tile(np.arange(B), S)
    is_sdr = act[b_of_col] & (slot_of_col == layout.sender_slot[t][b_of_col])
    is_adr = act[b_of_col] & (slot_of_col == layout.adr_slot[t][b_of_col])
    in_ctx = act[b_of_col] & layout.ctx_slot
    return is_sdr, is_adr, in_ctx


def encode_batch_sirnn(layout: BatchLayout, U_all: Tensor, params: SIRNNParams) -> Tensor:
    """Final speaker embeddings ``(d_s, S*B)`` for every slot of every sample."""
    d_s = params.igru_s.U.shape[0]
    dtype = params.igru_s.U.dtype
    S = layout.S
    A = Tensor(np.zeros((d_s, layout.N), dtype=dtype))
    tile = layout.tile(S)
    for t in range(layout.T):
        is_sdr, is_adr, in_ctx = _step_masks(layout, t)
        is_obs = in_ctx & ~is_sdr & ~is_adr
        keep = ~(is_sdr | is_adr | is_obs)
        has_adr = layout.adr_slot[t] >= 0
        sdr_prev = take_cols(A, layout.cols(layout.sender_slot[t]))
        adr_prev = mul(take_cols(A, layout.cols(np.maximum(layout.adr_slot[t], 0))),
                       _mask(d_s, has_adr, dtype))
        u = take_cols(U_all, layout.turn_utt[t])
        u_in = concat_rows(sdr_prev, u)
        new_s = igru_step("sender", sdr_prev, adr_prev, u_in, params.igru_s)
        new_a = igru_step("addressee", adr_prev, sdr_prev, u_in, params.igru_a)
        new_o = gru_o_step(A, take_cols(u_in, tile), params.gru_o)
        A = add(add(mul(take_cols(new_s, tile), _mask(d_s, is_sdr, dtype)),
                    mul(take_cols(new_a, tile), _mask(d_s, is_adr, dtype))),
                add(mul(new_o, _mask(d_s, is_obs, dtype)), mul(A, _mask(d_s, keep, dtype))))
    return A


def encode_batch_dynamic(layout: BatchLayout, U_all: Tensor, params: DynamicParams) -> Tensor:
    d_s = params.dyn.U.shape[0]
    d_u = params.dyn.W.shape[1]
    dtype = params.dyn.U.dtype
    A = Tensor(np.zeros((d_s, layout.N), dtype=dtype))
    tile = layout.tile(layout.S)
    for t in range(layout.T):
        is_sdr, _, in_ctx = _step_masks(layout, t)
        u = take_cols(U_all, layout.turn_utt[t])
        x = mul(take_cols(u, tile), _mask(d_u, is_sdr, dtype))
        new = gru_step(A, x, params.dyn)
        A = add(mul(new, _mask(d_s, in_ctx, dtype)), mul(A, _mask(d_s, ~in_ctx, dtype)))
    return A
