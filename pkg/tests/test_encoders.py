import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from helpers import eq1_sample, make_model, numpy_params, random_sample, zero_params
from sirnn.corpus import DialogContext, SelectionSample, Turn
from sirnn.encoders import (GRUParams, IGRUParams, encode_dialog_dynamic, encode_dialog_sirnn,
                            encode_utterance, encoder_params, gru_o_step, igru_step)
from sirnn.numkit import ShapeError, Tensor


def _tensors(arrs):
    return [Tensor(a) for a in arrs]


def _rand_igru(rng, d_s, d_in, scale=0.7):
    shapes = [(d_s, d_in)] * 4 + [(d_s, d_s)] * 8
    arrs = [rng.normal(scale=scale, size=s) for s in shapes]
    return IGRUParams(*_tensors(arrs)), dict(zip(IGRUParams.NAMES, arrs))


def _rand_gru(rng, d_h, d_in, scale=0.7):
    names = ("W_r", "W_z", "W", "U_r", "U_z", "U")
    arrs = [rng.normal(scale=scale, size=(d_h, d_in if n.startswith("W") else d_h)) for n in names]
    return GRUParams(*_tensors(arrs)), dict(zip(names, arrs))


def _prefixed(d, prefix):
    return {f"{prefix}.{k}": v for k, v in d.items()}


# single units ---------------------------------------------------------------

def test_igru_zero_params_halves_own_state():
    rng = np.random.default_rng(0)
    p, _ = _rand_igru(rng, 3, 5)
    for t in vars(p).values():
        if t is not None:
            t.data[...] = 0
    own, other, u = rng.normal(size=3), rng.normal(size=3), rng.normal(size=5)
    for role in ("sender", "addressee"):
        out = igru_step(role, Tensor(own), Tensor(other), Tensor(u), p)
        np.testing.assert_array_equal(out.data, 0.5 * own)


def test_igru_zero_state_reduces_to_tanh_proposal():
    rng = np.random.default_rng(1)
    p, raw = _rand_igru(rng, 3, 5)
    for name in ("U_r", "U_p", "U_z", "U", "V_r", "V_p", "V_z", "V", "W_z"):
        getattr(p, name).data[...] = 0
    u = rng.normal(size=5)
    out = igru_step("sender", Tensor(np.zeros(3)), Tensor(rng.normal(size=3)), Tensor(u), p)
    np.testing.assert_allclose(out.data, 0.5 * np.tanh(raw["W"] @ u), rtol=0, atol=1e-15)


def test_igru_matches_oracle():
    rng = np.random.default_rng(2)
    d_s, d_u = 3, 2
    p, raw = _rand_igru(rng, d_s, d_s + d_u)
    own, other, u = rng.normal(size=d_s), rng.normal(size=d_s), rng.normal(size=d_s + d_u)
    got = igru_step("sender", Tensor(own), Tensor(other), Tensor(u), p).data
    want = oracles.igru(own, other, u, _prefixed(raw, "x"), "x")
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_igru_dimension_mismatch():
    rng = np.random.default_rng(3)
    p, _ = _rand_igru(rng, 3, 5)
    with pytest.raises(ShapeError):
        igru_step("sender", Tensor(np.zeros(3)), Tensor(np.zeros(2)), Tensor(np.zeros(5)), p)
    with pytest.raises(ShapeError):
        igru_step("sender", Tensor(np.zeros(3)), Tensor(np.zeros(3)), Tensor(np.zeros(4)), p)
    with pytest.raises(ValueError):
        igru_step("observer", Tensor(np.zeros(3)), Tensor(np.zeros(3)), Tensor(np.zeros(5)), p)


def test_gru_o_examples_and_oracle():
    rng = np.random.default_rng(4)
    p, raw = _rand_gru(rng, 3, 5)
    own, u = rng.normal(size=3), rng.normal(size=5)
    want = oracles.gru(own, u, _prefixed(raw, "g"), "g")
    np.testing.assert_allclose(gru_o_step(Tensor(own), Tensor(u), p).data, want, rtol=0, atol=1e-12)
    for t in vars(p).values():
        if t is not None:
            t.data[...] = 0
    np.testing.assert_array_equal(gru_o_step(Tensor(own), Tensor(u), p).data, 0.5 * own)
    np.testing.assert_array_equal(gru_o_step(Tensor(np.zeros(3)), Tensor(u), p).data, np.zeros(3))


# utterance encoder ----------------------------------------------------------

def test_utterance_encoder():
    s = eq1_sample()
    m = make_model([s], d_u=4)
    enc = encoder_params(m.store, m.config)
    assert np.array_equal(encode_utterance([], m.vocab, enc.utt).data, np.zeros(4))
    P, emb, index = numpy_params(m)
    toks = ["u", "two", "never-seen"]
    want = oracles.utterance(toks, emb, index, P)
    np.testing.assert_allclose(encode_utterance(toks, m.vocab, enc.utt).data, want, rtol=0, atol=1e-12)
    zero_params(m)
    assert np.array_equal(encode_utterance(toks, m.vocab, enc.utt).data, np.zeros(4))


# dialog encoders ------------------------------------------------------------

@pytest.mark.parametrize("mode", ["sirnn", "dynamic"])
def test_zero_fixed_point(mode):
    s = eq1_sample()
    m = make_model([s], mode=mode)
    zero_params(m)
    table = m.encode(s).states
    for v in table.embeddings.values():
        assert np.array_equal(v.data, np.zeros(4))


def test_roles_at_first_step():
    s = eq1_sample()
    m = make_model([s])
    trace = []
    encode_dialog_sirnn(s.context, m.vocab, encoder_params(m.store, m.config), trace=trace)
    assert {(spk, unit) for t, spk, unit in trace if t == 1} == {
        ("a2", "IGRU_S"), ("a1", "IGRU_A"), ("a3", "GRU_O")}
    assert len(trace) == 9


def test_blank_addressee_rule():
    ctx = DialogContext([Turn("a", "b", ("x",)), Turn("b", None, ("y",))])
    s = SelectionSample(ctx, "a", [("x",), ("y",)], "b", 0)
    m = make_model([s])
    trace = []
    encode_dialog_sirnn(ctx, m.vocab, encoder_params(m.store, m.config), trace=trace)
    assert {(spk, unit) for t, spk, unit in trace if t == 2} == {("b", "IGRU_S"), ("a", "GRU_O")}


@pytest.mark.parametrize("seed", range(5))
def test_sirnn_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, n_speakers=4, T=6, responder_in_context=seed % 2 == 0)
    m = make_model([s], seed=seed)
    P, emb, index = numpy_params(m)
    turns = [(t.sender, t.addressee, t.tokens) for t in s.context.turns]
    want = oracles.sirnn_states(turns, emb, index, P, 4, s.responder)
    got = m.encode(s).states
    assert set(got.embeddings) == set(want)
    for k in want:
        np.testing.assert_allclose(got[k].data, want[k], rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dynamic_matches_oracle(seed):
    rng = np.random.default_rng(10 + seed)
    s = random_sample(rng, n_speakers=4, T=6)
    m = make_model([s], mode="dynamic", seed=seed)
    P, emb, index = numpy_params(m)
    turns = [(t.sender, t.addressee, t.tokens) for t in s.context.turns]
    want = oracles.dynamic_states(turns, emb, index, P, 4, s.responder)
    got = m.encode(s).states
    for k in want:
        np.testing.assert_allclose(got[k].data, want[k], rtol=0, atol=1e-12)


def test_dynamic_equal_observers_stay_equal():
    # neither b nor c ever sends, so both only ever see the zero input
    ctx = DialogContext([Turn("a", "b", ("x",)), Turn("a", "c", ("y",)), Turn("a", None, ("z",))])
    s = SelectionSample(ctx, "a", [("x",), ("y",)], "b", 0)
    m = make_model([s], mode="dynamic")
    table = encode_dialog_dynamic(ctx, m.vocab, encoder_params(m.store, m.config))
    np.testing.assert_array_equal(table["b"].data, table["c"].data)
    assert not np.allclose(table["a"].data, 0)


@pytest.mark.parametrize("mode", ["sirnn", "dynamic"])
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_relabel_equivariance(mode, seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, n_speakers=4, T=5)
    names = s.context.speakers + ([s.responder] if s.responder not in s.context.speakers else [])
    perm = dict(zip(names, rng.permutation([f"z{i}" for i in range(len(names))])))
    ren = lambda x: None if x is None else str(perm[x])  # noqa: E731
    s2 = SelectionSample(DialogContext([Turn(ren(t.sender), ren(t.addressee), t.tokens)
                                        for t in s.context.turns]),
                         ren(s.responder), s.candidates, ren(s.truth_addressee), s.truth_response_index)
    m = make_model([s], mode=mode)
    a, b = m.encode(s).states, m.encode(s2).states
    for k, v in a.embeddings.items():
        np.testing.assert_array_equal(v.data, b[ren(k)].data)
    pa, pb = m.predict([s])[0], m.predict([s2])[0]
    assert ren(pa.addressee) == pb.addressee and pa.response_index == pb.response_index


def test_shared_igrus_role_symmetry():
    ctx = DialogContext([Turn("a", "b", ("x", "y"))])
    s = SelectionSample(ctx, "a", [("x",), ("y",)], "b", 0)
    m = make_model([s], shared=True)
    st_ab = m.encode(s).states
    np.testing.assert_array_equal(st_ab["a"].data, st_ab["b"].data)
    swapped = SelectionSample(DialogContext([Turn("b", "a", ("x", "y"))]), "b", [("x",), ("y",)], "a", 0)
    st_ba = m.encode(swapped).states
    np.testing.assert_array_equal(st_ab["a"].data, st_ba["b"].data)
    # separate units break the symmetry
    m2 = make_model([s], shared=False)
    st2 = m2.encode(s).states
    assert not np.allclose(st2["a"].data, st2["b"].data)


# batched path ---------------------------------------------------------------

@pytest.mark.parametrize("mode,shared", [("sirnn", False), ("sirnn", True), ("dynamic", False)])
def test_batched_matches_per_sample(mode, shared):
    rng = np.random.default_rng(7)
    samples = [random_sample(rng, n_speakers=int(rng.integers(2, 6)), T=int(rng.integers(1, 7)),
                             R=int(rng.integers(1, 4)), responder_in_context=bool(rng.random() < 0.8))
               for _ in range(12)]
    m = make_model(samples, mode=mode, shared=shared)
    layout, A, _ = m.forward(samples)
    for b, s in enumerate(samples):
        states = m.encode(s).states
        for k, name in enumerate(layout.slots[b]):
            np.testing.assert_allclose(A.data[:, k * layout.B + b], states[name].data, rtol=0, atol=1e-12)
    # a sample's result does not depend on its batch-mates or position
    alone = m.tables([samples[5]])[0]
    mixed = m.tables(samples[::-1])[len(samples) - 1 - 5]
    np.testing.assert_allclose(alone.p_adr, mixed.p_adr, rtol=0, atol=1e-12)
    np.testing.assert_allclose(alone.p_res, mixed.p_res, rtol=0, atol=1e-12)
