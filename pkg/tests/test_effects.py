import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crlkit.effects import (MODES, EffectConfig, EffectModel, FineTuneConfig, StackError, effect_latents,
                            fine_tune, fit_rnn, freeze_audit, load_effect, phase_groups, predict_effect,
                            save_effect, stack, train_effect)
from crlkit.effects import _phase_loss
from crlkit.engine import ad
from crlkit.engine.autodiff import backprop
from crlkit.engine.optim import OptimizerState, step
from crlkit.represent import RepresentationModel

from harness import chain_data, fit_models, linked_pair

SMALL = dict(window=5, hidden=8)


def rand_models(ids, dim=1, seed=0):
    return {n: RepresentationModel(n, dim, seed=seed + i) for i, n in enumerate(ids)}


def rand_effect(causes, result, seed=0, window=4, hidden=8):
    ms = rand_models(list(causes) + [result], seed=seed)
    return EffectModel([ms[c] for c in causes], ms[result], window=window, hidden=hidden, seed=seed)


def identity_effect(node_in, node_out, scale=1e4):
    """tanh cell driven in its linear range, so output equals input to ~1e-8."""
    e = rand_effect([node_in], node_out, window=1, hidden=16)
    e.rnn["rnn.wx"].data[:] = np.eye(16)
    e.rnn["rnn.wo"].data[:] = scale * np.eye(16)
    for n in ("rnn.b", "rnn.bo", "rnn.wh"):
        e.rnn[n].data[:] = 0.0
    e.in_shift, e.in_scale = np.zeros(16), np.full(16, scale)
    return e


# freeze audit ----------------------------------------------------------------------

def test_freeze_audit_examples():
    a = {"rnn.w": np.zeros(2), "cause.X.enc.w": np.zeros(2)}
    assert freeze_audit(a, {k: v.copy() for k, v in a.items()}, ("rnn.",)) == []
    b = {"rnn.w": np.ones(2), "cause.X.enc.w": np.ones(2)}
    assert freeze_audit(a, b, ("rnn.",)) == ["cause.X.enc.w"]


def test_phase_groups_designation():
    e = rand_effect("AB", "C")
    g = phase_groups(e)
    assert g[1] == ("cause.A.", "cause.B.")
    assert set(g[2]) == {"cause.A.keys.", "cause.A.enc.", "cause.B.keys.", "cause.B.enc.", "rnn."}
    assert g[3] == ("result.C.",)


def test_training_loop_is_isolated():
    d = linked_pair(True, years=1)
    ms = rand_models("XY", dim=2)
    _, rep = train_effect([ms["X"]], ms["Y"], d, EffectConfig(iterations=10, audit=True, **SMALL))
    assert rep.iterations == 10 and rep.violations == []
    assert all(len(v) == 10 for v in rep.losses.values())


def test_unfrozen_group_is_reported():
    d = linked_pair(True, years=1)
    ms = rand_models("XY", dim=2)
    e = EffectModel([ms["X"]], ms["Y"], **SMALL)
    g = phase_groups(e)
    # wrong update set for phase 2: the result decoder is left trainable
    _, rep = train_effect([ms["X"]], ms["Y"], d, EffectConfig(iterations=2, audit=True, **SMALL),
                          groups_override={1: g[1], 2: g[2] + ("result.Y.dec.", "result.Y.mask."), 3: g[3]})
    assert rep.violations and all(ph == 2 for _, ph, _ in rep.violations)
    assert all(n.startswith("result.Y.") for _, _, names in rep.violations for n in names)


def test_rnn_unfrozen_in_phase_one_is_reported():
    d = linked_pair(True, years=1)
    e = EffectModel([RepresentationModel("X", 2)], RepresentationModel("Y", 2), **SMALL)
    g = phase_groups(e)
    e.params.only_train(*g[1], "rnn.")
    before = e.params.snapshot()
    y, ym = d.values["Y"], d.masks["Y"]
    loss = _phase_loss(e, d, 1, slice(0, 40), slice(4, 40), y, ym, 1.0)
    leak = _phase_loss(e, d, 2, slice(0, 40), slice(4, 40), y, ym, 1.0)  # a buggy loss touching the rnn
    step(e.params, backprop(loss + leak, e.params.trainable()), OptimizerState(lr=1e-3))
    bad = freeze_audit(before, e.params.snapshot(), g[1])
    assert any(n.startswith("rnn.") for n in bad)


def test_phase_two_moves_posterior_and_rnn_only():
    d = linked_pair(True, years=1)
    ms = rand_models("XY", dim=2)
    e0 = EffectModel([ms["X"]], ms["Y"], **SMALL)
    before = e0.params.snapshot()
    e, _ = train_effect([ms["X"]], ms["Y"], d, EffectConfig(iterations=1, phases=(2,), **SMALL))
    after = e.params.snapshot()
    changed = {n for n in before if not np.array_equal(before[n], after[n])}
    assert any(n.startswith("rnn.") for n in changed)
    assert any(n.startswith(("cause.X.enc.", "cause.X.keys.")) for n in changed)
    assert not any(n.startswith(("result.", "cause.X.dec.", "cause.X.mask.")) for n in changed)


@settings(max_examples=5)
@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_isolation_holds_for_random_runs(seed, iterations):
    d = linked_pair(True, years=1, seed=seed % 7)
    ms = rand_models("XY", dim=2, seed=seed % 5)
    _, rep = train_effect([ms["X"]], ms["Y"], d,
                          EffectConfig(iterations=iterations, audit=True, seed=seed, **SMALL))
    assert rep.violations == []


def test_private_copies_leave_inputs_untouched():
    d = linked_pair(True, years=1)
    ms = rand_models("XY", dim=2)
    snap = {n: m.params.snapshot() for n, m in ms.items()}
    train_effect([ms["X"]], ms["Y"], d, EffectConfig(iterations=3, **SMALL))
    for n, m in ms.items():
        assert all(np.array_equal(v, m.params.snapshot()[k]) for k, v in snap[n].items())


# prediction ---------------------------------------------------------------------------

def test_input_width_and_key():
    e = rand_effect("ECD", "G")
    assert e.input_width == 48 and e.cause_ids == ("C", "D", "E") and e.key == "CDE-G"
    with pytest.raises(ValueError):
        rand_effect("X", "X")
    with pytest.raises(ValueError):
        predict_effect(e, np.zeros((10, 16)))


def test_prediction_needs_a_full_window(rng):
    e = rand_effect("X", "Y", window=4)
    u = rng.normal(size=(12, 16))
    u[7] = np.nan
    v = predict_effect(e, u)
    absent = ~np.all(np.isfinite(v), axis=1)
    assert absent.tolist() == [True] * 3 + [False] * 4 + [True] * 4 + [False]
    assert np.all(np.isnan(predict_effect(e, u[:3])))


def test_prediction_matches_tensor_path(rng):
    e = rand_effect("AB", "C", window=3)
    u = rng.normal(size=(10, 32))
    ref = e.rnn_t(ad.as_tensor(u), 8).data
    assert np.allclose(predict_effect(e, u)[2:], ref, atol=1e-12)
    assert np.array_equal(predict_effect(e, [u[:, :16], u[:, 16:]]), predict_effect(e, u), equal_nan=True)


def test_identity_fixture_learned():
    rng = np.random.default_rng(0)
    h = np.cumsum(rng.normal(size=(600, 16)), axis=0) * 0.05
    h = np.tanh(h)
    e = rand_effect("X", "Y", window=3, hidden=32)
    e.set_input_stats(h)
    losses = fit_rnn(e, h, h, iterations=1500, lr=1e-2, block=600)
    losses += fit_rnn(e, h, h, iterations=1500, lr=1e-3, block=600)
    assert losses[-1] < 1e-3 * losses[0]
    v = predict_effect(e, h)[2:]
    assert np.sqrt(np.mean((v - h[2:]) ** 2)) < 1e-2


def test_checkpoint_round_trip(tmp_path, rng):
    e = rand_effect("AB", "C")
    e.set_input_stats(rng.normal(size=(50, 32)))
    save_effect(e, tmp_path / "AB-C.effect.ckpt")
    back = load_effect(tmp_path / "AB-C.effect.ckpt")
    u = rng.normal(size=(20, 32))
    assert back.key == "AB-C"
    assert np.array_equal(predict_effect(back, u), predict_effect(e, u), equal_nan=True)
    assert np.array_equal(predict_effect(back, u), predict_effect(back, u), equal_nan=True)


def test_missing_node_data_rejected():
    d = linked_pair(True, years=1)
    ms = rand_models("XZ", dim=2)
    with pytest.raises(KeyError):
        train_effect([ms["X"]], ms["Z"], d, EffectConfig(iterations=1, **SMALL))


@pytest.fixture(scope="module")
def linked_run():
    d = linked_pair(True)
    ms = fit_models(d)
    return train_effect([ms["X"]], ms["Y"], d, EffectConfig(iterations=800))


def test_linear_link_is_learnable(linked_run):
    e, rep = linked_run
    assert rep.kld < 1.0
    assert rep.effect_nse is not None and rep.effect_nse > 0.5


# stacking --------------------------------------------------------------------------------

@pytest.fixture
def xyz(rng):
    a, b, c = rand_effect("X", "Y", seed=1), rand_effect("Y", "Z", seed=2), rand_effect("Z", "W", seed=3)
    return a, b, c, rng.normal(size=(40, 16))


def test_chain_equals_sequential_composition(xyz):
    a, b, _, hx = xyz
    ch = stack(a, b, "result-bottom/result-top")
    assert ch.entrance == ("X",) and ch.exit == "Z" and ch.junctions == ["Y"]
    assert np.array_equal(ch.predict({"X": hx}), predict_effect(b, predict_effect(a, hx)), equal_nan=True)


def test_identity_top_effect_passes_through(rng):
    a = rand_effect("X", "Y", seed=1)
    hx = rng.normal(size=(30, 16))
    ch = stack(a, identity_effect("Y", "Z"), "result-bottom/result-top")
    want = predict_effect(a, hx)
    got = ch.predict({"X": hx})
    assert np.array_equal(np.isnan(got), np.isnan(want))
    assert np.nanmax(np.abs(got - want)) < 1e-6


def test_stacking_is_associative(xyz):
    a, b, c, hx = xyz
    left = stack(stack(a, b, MODES[3]), c, MODES[3])
    right = stack(a, stack(b, c, MODES[3]), MODES[3])
    assert np.array_equal(left.predict({"X": hx}), right.predict({"X": hx}), equal_nan=True)


def test_cause_bottom_cause_top_runs_downstream(xyz):
    a, b, _, hx = xyz
    ch = stack(b, a, "cause-bottom/cause-top")  # junction Y is a cause in Y=>Z, X=>Y feeds it
    assert ch.entrance == ("X",) and ch.exit == "Z"
    assert np.array_equal(ch.predict({"X": hx}), predict_effect(b, predict_effect(a, hx)), equal_nan=True)


def test_fork_and_collider(rng):
    hx = rng.normal(size=(30, 16))
    a, b = rand_effect("Y", "X", seed=1), rand_effect("Y", "Z", seed=2)
    fork = stack(a, b, "cause-bottom/result-top")
    assert fork.entrance == ("Y",) and fork.exit == "Z"
    assert np.array_equal(fork.predict({"Y": hx}), predict_effect(b, hx), equal_nan=True)
    c, d = rand_effect("X", "Y", seed=3), rand_effect("Z", "Y", seed=4)
    col = stack(c, d, "result-bottom/cause-top")
    assert col.exit == "Y"
    assert np.array_equal(col.predict({"X": hx}), predict_effect(c, hx), equal_nan=True)


def test_stack_rejections(xyz):
    a, b, c, _ = xyz
    with pytest.raises(StackError):
        stack(a, b, "sideways")
    with pytest.raises(StackError):
        stack(a, c, MODES[3])  # no shared node
    with pytest.raises(StackError):
        stack(a, b, "cause-bottom/cause-top")  # Y is a result in X=>Y
    with pytest.raises(StackError):
        stack(stack(a, b, MODES[3]), rand_effect("Z", "X", seed=9), MODES[3])  # X=>Y=>Z=>X


def test_fine_tune_keeps_junction_representative():
    d = chain_data("XYZ")
    ms = fit_models(d, epochs=30)
    cfg = EffectConfig(iterations=300, lr=3e-3, window=10)
    a, _ = train_effect([ms["X"]], ms["Y"], d, cfg)
    b, _ = train_effect([ms["Y"]], ms["Z"], d, cfg)
    ch = stack(a, b, MODES[3])
    frozen = {n: t.data.copy() for n, t in ch.effects[0].params._params.items() if not n.startswith("result.Y.enc.")}
    hx = ch.entrance_latents(d)
    rep = fine_tune(ch, d, config=FineTuneConfig(iterations=100, warmup=50))
    assert rep.junction == "Y" and len(rep.losses) == 150
    assert rep.degradation <= 0.2
    # the producer's result copy now serves both effects at the junction
    assert ch.effects[1].causes[0] is ch.effects[0].result
    for n, v in frozen.items():
        if not n.startswith("rnn."):
            assert np.array_equal(ch.effects[0].params[n].data, v), n
    assert np.all(np.isfinite(ch.predict(hx)[20:]))


def test_warmup_moves_only_reader_rnn():
    d = chain_data("XYZ", years=1)
    ms = rand_models("XYZ")
    a = EffectModel([ms["X"]], ms["Y"], window=5, hidden=8, seed=1)
    b = EffectModel([ms["Y"]], ms["Z"], window=5, hidden=8, seed=2)
    for e in (a, b):
        e.set_input_stats(e.cause_latents(d))
    ch = stack(a, b, MODES[3])
    before = {id(t): t.data.copy() for e in ch.effects for t in e.params.tensors()}
    fine_tune(ch, d, config=FineTuneConfig(iterations=0, warmup=5))
    moved = {n for e in ch.effects for n, t in e.params._params.items() if not np.array_equal(before[id(t)], t.data)}
    assert moved and all(n.startswith("rnn.") for n in moved)
    assert all(np.array_equal(before[id(t)], t.data) for t in a.rnn.tensors())
