"""Latent causal effects: a recurrent map from cause latents to result latents.

Training runs three updates per iteration, each on its own parameter group:

1. cause autoencoders on their own reconstruction,
2. cause encoders (keys included) and the RNN on reconstructing the result
   through the frozen result decoder,
3. the result autoencoder on the result's reconstruction.

Every effect owns private copies of the autoencoders it touches, under the
name prefixes ``cause.<id>.`` and ``result.<id>.``; RNN weights live under
``rnn.``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .datagen import Dataset
from .engine import ad
from .engine.autodiff import Tensor, backprop
from .engine.optim import OptimizerState, step
from .engine.params import ParamSet, init_params
from .metrics import bce as bce_metric
from .metrics import fit_diag_gaussian, gaussian_kld, nse, rmse
from .represent import POSTERIOR, RepresentationModel, TrainingError, reconstruction_loss

log = logging.getLogger(__name__)

MODES = ("cause-bottom/cause-top", "cause-bottom/result-top",
         "result-bottom/cause-top", "result-bottom/result-top")


class AlignmentError(ValueError):
    pass


class StackError(ValueError):
    pass


@dataclass
class EffectConfig:
    window: int = 30
    hidden: int = 32
    iterations: int = 600
    lr: float = 1e-3
    block: int = 64  # consecutive target days per update
    seed: int = 0
    align_weight: float = 1.0  # pull predicted latents onto the result encoder's
    train_frac: float = 0.8
    audit: bool = False
    phases: Tuple[int, ...] = (1, 2, 3)  # ablations only; training proper runs all three

    def __post_init__(self):
        if not set(self.phases) <= {1, 2, 3}:
            raise ValueError(f"phases must be drawn from 1, 2, 3; got {self.phases}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0 < self.train_frac <= 1:
            raise ValueError("train_frac must be in (0, 1]")


def cause_prefix(node: str) -> str:
    return f"cause.{node}."


def result_prefix(node: str) -> str:
    return f"result.{node}."


class EffectModel:
    """RNN over the last ``window`` days of concatenated cause latents."""

    def __init__(self, causes: Sequence[RepresentationModel], result: RepresentationModel,
                 window: int = 30, hidden: int = 32, seed: int = 0,
                 rnn: Optional[ParamSet] = None, copy_models: bool = True):
        if not causes:
            raise ValueError("an effect needs at least one cause")
        ids = [c.node for c in causes]
        if len(set(ids)) != len(ids) or result.node in ids:
            raise ValueError(f"causes {ids} and result {result.node} must be distinct")
        if window < 1:
            raise ValueError("window must be >= 1")
        order = np.argsort(ids, kind="stable")
        causes = [causes[i] for i in order]
        if copy_models:
            causes = [c.copy(cause_prefix(c.node)) for c in causes]
            result = result.copy(result_prefix(result.node))
        self.causes: List[RepresentationModel] = list(causes)
        self.result = result
        self.window = window
        self.hidden = hidden
        lat_in = sum(c.latent_dim for c in self.causes)
        if rnn is None:
            rnn = init_params({"rnn.wx": (lat_in, hidden), "rnn.b": (hidden,),
                               "rnn.wh": (hidden, hidden),
                               "rnn.wo": (hidden, result.latent_dim), "rnn.bo": (result.latent_dim,)}, seed)
        self.rnn = rnn
        # fixed input standardisation, set from the cause latents when training starts
        self.in_shift = np.zeros(lat_in)
        self.in_scale = np.ones(lat_in)
        self._assemble()

    def _assemble(self) -> None:
        self.params = ParamSet()
        self.params.merge(self.rnn)
        seen = set()
        for m in self.causes + [self.result]:
            for n in m.names():
                if n not in seen:
                    self.params._params[n] = m.params[n]
                    seen.add(n)

    @property
    def cause_ids(self) -> Tuple[str, ...]:
        return tuple(c.node for c in self.causes)

    @property
    def key(self) -> str:
        return "".join(self.cause_ids) + "-" + self.result.node

    @property
    def input_width(self) -> int:
        return self.rnn["rnn.wx"].shape[0]

    def models(self) -> Dict[str, RepresentationModel]:
        out = {c.node: c for c in self.causes}
        out[self.result.node] = self.result
        return out

    # forward ---------------------------------------------------------------
    def rnn_t(self, u: Tensor, n_out: int) -> Tensor:
        """Run the cell over ``u`` rows ``[k, k + n_out)`` for k = 0..window-1."""
        p = self.rnn
        u = (u - self.in_shift) * (1.0 / self.in_scale)
        h = None
        for k in range(self.window):
            pre = ad.affine(u[k:k + n_out], p["rnn.wx"], p["rnn.b"])
            if h is not None:
                pre = pre + ad.matmul(h, p["rnn.wh"])
            h = ad.tanh(pre)
        return ad.affine(h, p["rnn.wo"], p["rnn.bo"])

    def cause_latents_t(self, data: Dataset, rows: slice) -> Tensor:
        parts = [c.encode_t(data.values[c.node][rows], data.months[rows]) for c in self.causes]
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)

    def cause_latents(self, data: Dataset) -> np.ndarray:
        return np.concatenate([c.encode(data.values[c.node], data.months) for c in self.causes], axis=1)

    def set_input_stats(self, latents: np.ndarray) -> None:
        self.in_shift = latents.mean(axis=0)
        sd = latents.std(axis=0)
        self.in_scale = np.where(sd > 1e-6, sd, 1.0)

    def copy(self) -> "EffectModel":
        e = EffectModel([c.copy() for c in self.causes], self.result.copy(), self.window,
                        self.hidden, rnn=self.rnn.copy(), copy_models=False)
        e.in_shift, e.in_scale = self.in_shift.copy(), self.in_scale.copy()
        return e


def freeze_audit(before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray],
                 allowed: Iterable[str]) -> List[str]:
    """Names outside the ``allowed`` prefixes whose values changed."""
    allowed = tuple(allowed)
    return sorted(n for n in before if n in after and not n.startswith(allowed)
                  and not np.array_equal(before[n], after[n]))


def phase_groups(e: EffectModel) -> Dict[int, Tuple[str, ...]]:
    """Designated update set (name prefixes) of each training phase."""
    causes = tuple(cause_prefix(c) for c in e.cause_ids)
    posterior = tuple(cause_prefix(c) + g for c in e.cause_ids for g in POSTERIOR)
    return {1: causes, 2: posterior + ("rnn.",), 3: (result_prefix(e.result.node),)}


def predict_effect(e: EffectModel, cause_latents) -> np.ndarray:
    """Predicted result latents per day; rows without a full window are NaN.

    ``cause_latents`` is a ``(T, 16*|causes|)`` array or a list of per-cause
    ``(T, 16)`` arrays. Any NaN inside a row's window also marks it absent.
    """
    if isinstance(cause_latents, (list, tuple)):
        cause_latents = np.concatenate([np.asarray(c, dtype=np.float64) for c in cause_latents], axis=1)
    u = np.asarray(cause_latents, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != e.input_width:
        raise ValueError(f"cause latents must be (T, {e.input_width}); got {u.shape}")
    T, W = u.shape[0], e.window
    out = np.full((T, e.result.latent_dim), np.nan)
    if T < W:
        return out
    bad = ~np.all(np.isfinite(u), axis=1)
    # a row is valid when none of its last W inputs is absent
    bad_win = np.convolve(bad.astype(float), np.ones(W), mode="full")[W - 1:T] > 0
    valid = np.flatnonzero(~bad_win) + (W - 1)
    if valid.size == 0:
        return out
    u = (u - e.in_shift) * (1.0 / e.in_scale)
    p = e.rnn
    h = None
    for k in range(W):
        x = u[valid - (W - 1) + k]
        pre = x @ p["rnn.wx"].data + p["rnn.b"].data
        if h is not None:
            pre = pre + h @ p["rnn.wh"].data
        h = np.tanh(pre)
    out[valid] = h @ p["rnn.wo"].data + p["rnn.bo"].data
    return out


def effect_latents(e: EffectModel, data: Dataset) -> np.ndarray:
    return predict_effect(e, e.cause_latents(data))


# training ----------------------------------------------------------------------

def align_datasets(parts: Mapping[str, Dataset]) -> Dataset:
    """Merge per-node datasets that share one calendar."""
    items = list(parts.items())
    if not items:
        raise AlignmentError("no datasets given")
    ref = items[0][1]
    for node, d in items[1:]:
        if d.calendar.shape != ref.calendar.shape or not np.array_equal(d.calendar, ref.calendar):
            raise AlignmentError(f"dataset for {node} is not aligned by date with {items[0][0]}")
    vals = {n: d.values[n] for n, d in items}
    masks = {n: d.masks[n] for n, d in items}
    return Dataset(vals, masks, ref.calendar, ref.individual_id, ref.graph)


@dataclass
class EffectReport:
    causes: Tuple[str, ...]
    result: str
    iterations: int = 0
    losses: Dict[int, List[float]] = field(default_factory=lambda: {1: [], 2: [], 3: []})
    violations: List[Tuple[int, int, List[str]]] = field(default_factory=list)
    result_rmse_scaled: float = math.nan
    result_rmse_original: float = math.nan
    result_bce: float = math.nan
    effect_rmse_scaled: float = math.nan
    effect_rmse_original: float = math.nan
    effect_bce: float = math.nan
    effect_nse: Optional[float] = None
    kld: float = math.nan
    kld_floored: bool = False

    @property
    def subject(self) -> str:
        return "".join(self.causes) + "=>" + self.result


def _data_for(e: EffectModel, data) -> Dataset:
    if isinstance(data, Mapping):
        data = align_datasets(data)
    for n in list(e.cause_ids) + [e.result.node]:
        if n not in data.values:
            raise KeyError(f"no data for node {n}")
    return data


def _split_rows(n: int, frac: float, window: int) -> Tuple[int, int]:
    cut = int(round(n * frac))
    if cut < window + 1:
        raise ValueError(f"training split of {cut} days is shorter than the window")
    return cut, n


def train_effect(causes: Sequence[RepresentationModel], result: RepresentationModel,
                 data: Union[Dataset, Mapping[str, Dataset]], config: EffectConfig = EffectConfig(),
                 groups_override: Optional[Dict[int, Tuple[str, ...]]] = None
                 ) -> Tuple[EffectModel, EffectReport]:
    """Learn ``causes => result`` on scaled, date-aligned data.

    The first ``train_frac`` of days train; the rest evaluate (their windows
    may reach back into training days). ``groups_override`` replaces the
    phase update sets and exists to test the audit.
    """
    for m in list(causes) + [result]:
        if m is None:
            raise KeyError("missing autoencoder")
    e = EffectModel(causes, result, config.window, config.hidden, seed=config.seed)
    data = _data_for(e, data)
    cut, _ = _split_rows(data.n_days, config.train_frac, e.window)
    rep = EffectReport(e.cause_ids, e.result.node)
    e.set_input_stats(e.cause_latents(data.rows(slice(0, cut))))
    run_iterations(e, data, config, cut, rep, groups_override)
    evaluate_effect(e, data, rep, start=cut if cut < data.n_days else 0)
    return e, rep


def run_iterations(e: EffectModel, data: Dataset, config: EffectConfig, cut: int,
                   rep: EffectReport, groups_override=None) -> None:
    rng = np.random.default_rng(config.seed)
    W, B = e.window, config.block
    B = min(B, cut - W + 1)
    groups = phase_groups(e)
    use = groups_override or groups
    states = {k: OptimizerState(lr=config.lr) for k in (1, 2, 3)}
    y, ymask = data.values[e.result.node], data.masks[e.result.node]
    for it in range(config.iterations):
        s = int(rng.integers(W - 1, cut - B + 1))
        hist = slice(s - W + 1, s + B)
        tgt = slice(s, s + B)
        for phase in config.phases:
            e.params.only_train(*use[phase])
            before = e.params.snapshot() if config.audit else None
            loss = _phase_loss(e, data, phase, hist, tgt, y, ymask, config.align_weight)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise TrainingError(f"effect {e.key}: non-finite loss in phase {phase} at iteration {it} "
                                    f"(lr={config.lr})")
            step(e.params, backprop(loss, e.params.trainable()), states[phase])
            rep.losses[phase].append(lv)
            if config.audit:
                bad = freeze_audit(before, e.params.snapshot(), groups[phase])
                if bad:
                    rep.violations.append((it, phase, bad))
        rep.iterations = it + 1
    e.params.unfreeze()


def _phase_loss(e: EffectModel, data: Dataset, phase: int, hist: slice, tgt: slice,
                y, ymask, align_weight: float) -> Tensor:
    months = data.months
    if phase == 1:
        total = None
        for c in e.causes:
            l = c.loss_t(data.values[c.node][hist], data.masks[c.node][hist], months[hist])
            total = l if total is None else total + l
        return total
    if phase == 2:
        n = tgt.stop - tgt.start
        v_hat = e.rnn_t(e.cause_latents_t(data, hist), n)
        values, mprob = e.result.decode_t(v_hat)
        loss = reconstruction_loss(values, mprob, y[tgt], ymask[tgt])
        if align_weight:
            target = e.result.encode(y[tgt], months[tgt])
            loss = loss + align_weight * ad.mse(v_hat, target)
        return loss
    return e.result.loss_t(y[tgt], ymask[tgt], months[tgt])


def latent_kld(pred: np.ndarray, target: np.ndarray) -> Tuple[float, bool]:
    """KL( N(pred fit) || N(target fit) ) over rows where ``pred`` is present."""
    ok = np.all(np.isfinite(pred), axis=1)
    if not ok.any():
        raise ValueError("no predicted rows to score")
    mu1, var1, f1 = fit_diag_gaussian(pred[ok])
    mu2, var2, f2 = fit_diag_gaussian(target[ok])
    return gaussian_kld(mu1, var1, mu2, var2), bool(np.any(f1) or np.any(f2))


def evaluate_effect(e: EffectModel, data: Dataset, rep: EffectReport, start: int = 0) -> EffectReport:
    r = e.result
    node = r.node
    y, ymask, months = data.values[node], data.masks[node], data.months
    ev = slice(start, data.n_days)
    h = r.encode(y, months)
    _, mp, rec = r.decode(h[ev])
    hard = (mp > 0.5).astype(float)
    rep.result_rmse_scaled = rmse(rec, y[ev])
    rep.result_rmse_original = rmse(r.unscale(rec, hard), r.unscale(y[ev], ymask[ev]))
    rep.result_bce = bce_metric(mp, ymask[ev])
    v = effect_latents(e, data)[ev]
    ok = np.all(np.isfinite(v), axis=1)
    _, mp2, rec2 = r.decode(v[ok])
    yo, mo = y[ev][ok], ymask[ev][ok]
    hard2 = (mp2 > 0.5).astype(float)
    rep.effect_rmse_scaled = rmse(rec2, yo)
    rep.effect_rmse_original = rmse(r.unscale(rec2, hard2), r.unscale(yo, mo))
    rep.effect_bce = bce_metric(mp2, mo)
    rep.effect_nse = nse(r.unscale(rec2, hard2).sum(axis=1), r.unscale(yo, mo).sum(axis=1))
    rep.kld, rep.kld_floored = latent_kld(v, h[ev])
    return rep


def fit_rnn(e: EffectModel, inputs: np.ndarray, targets: np.ndarray, iterations: int = 500,
            lr: float = 1e-2, block: int = 64, seed: int = 0) -> List[float]:
    """Train only the RNN on fixed latent pairs (no autoencoders involved)."""
    rng = np.random.default_rng(seed)
    W = e.window
    T = inputs.shape[0]
    B = min(block, T - W + 1)
    e.params.only_train("rnn.")
    state = OptimizerState(lr=lr)
    losses = []
    for _ in range(iterations):
        s = int(rng.integers(W - 1, T - B + 1))
        v_hat = e.rnn_t(ad.as_tensor(inputs[s - W + 1:s + B]), B)
        loss = ad.mse(v_hat, targets[s:s + B])
        step(e.params, backprop(loss, e.params.trainable()), state)
        losses.append(float(loss.data))
    e.params.unfreeze()
    return losses


# stacking --------------------------------------------------------------------------

def _roles(effects: Sequence[EffectModel]) -> Tuple[set, set]:
    causes = {c for e in effects for c in e.cause_ids}
    results = {e.result.node for e in effects}
    return causes, results


class ChainedEffect:
    """Effects sharing junction nodes, evaluated by propagating latents.

    Prediction starts from the entrance nodes' latents and fires every effect
    whose causes are all known, in list order, until nothing changes. A node
    is predicted once; in a collider the first effect able to fire wins.
    """

    def __init__(self, effects: Sequence[EffectModel], modes: Sequence[str],
                 entrance: Tuple[str, ...], exit: str, junctions: Sequence[str] = ()):
        self.effects = list(effects)
        self.modes = list(modes)
        self.entrance = tuple(entrance)
        self.exit = exit
        self.junctions = list(junctions)
        nodes = self.nodes()
        if self.exit not in nodes or not set(self.entrance) <= nodes:
            raise StackError("entrance and exit must be chain nodes")

    def nodes(self) -> set:
        c, r = _roles(self.effects)
        return c | r

    def propagate(self, latents: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        known = {n: np.asarray(v, dtype=np.float64) for n, v in latents.items()}
        fired = True
        while fired:
            fired = False
            for e in self.effects:
                if e.result.node in known or not all(c in known for c in e.cause_ids):
                    continue
                known[e.result.node] = predict_effect(e, [known[c] for c in e.cause_ids])
                fired = True
        return known

    def predict(self, latents: Mapping[str, np.ndarray]) -> np.ndarray:
        missing = [n for n in self.entrance if n not in latents]
        if missing:
            raise KeyError(f"missing entrance latents {missing}")
        out = self.propagate({n: latents[n] for n in self.entrance})
        if self.exit not in out:
            raise StackError(f"exit {self.exit} is unreachable from entrance {self.entrance}")
        return out[self.exit]

    def entrance_latents(self, data: Dataset) -> Dict[str, np.ndarray]:
        """Latents of the entrance nodes from their first encoding model in the chain."""
        out = {}
        for n in self.entrance:
            m = self.model_for(n)
            out[n] = m.encode(data.values[n], data.months)
        return out

    def model_for(self, node: str) -> RepresentationModel:
        for e in self.effects:
            for c in e.causes:
                if c.node == node:
                    return c
        for e in self.effects:
            if e.result.node == node:
                return e.result
        raise KeyError(node)


def _as_chain(a) -> ChainedEffect:
    if isinstance(a, ChainedEffect):
        return a
    return ChainedEffect([a], [], a.cause_ids, a.result.node)


def stack(a: Union[EffectModel, ChainedEffect], b: Union[EffectModel, ChainedEffect], mode: str,
          entrance: Optional[Tuple[str, ...]] = None, exit: Optional[str] = None) -> ChainedEffect:
    """Compose ``a`` and ``b`` at their single shared node.

    ``mode`` is ``"<bottom>/<top>"``: the junction's role in ``a`` and the role
    of ``b``'s other node relative to the junction.

    * result-bottom/result-top: x=>y, y=>z; chain x -> z
    * cause-bottom/cause-top:   y=>x, z=>y; chain z -> x
    * result-bottom/cause-top:  x=>y, z=>y; collider, entrance x (or z) -> y
    * cause-bottom/result-top:  y=>x, y=>z; fork y -> z (or x)
    """
    if mode not in MODES:
        raise StackError(f"unknown mode {mode!r}; expected one of {MODES}")
    A, Bc = _as_chain(a), _as_chain(b)
    shared = A.nodes() & Bc.nodes()
    if len(shared) != 1:
        raise StackError(f"chains must share exactly one junction node, found {sorted(shared)}")
    y = shared.pop()
    bottom, top = (s.split("-")[0] for s in mode.split("/"))
    a_causes, a_results = _roles(A.effects)
    b_causes, b_results = _roles(Bc.effects)
    if bottom == "result" and y not in a_results or bottom == "cause" and y not in a_causes:
        raise StackError(f"junction {y} is not a {bottom} in the bottom effect")
    # top names the new node's role in b; the junction then has the opposite role
    if top == "result" and y not in b_causes or top == "cause" and y not in b_results:
        raise StackError(f"mode {mode} does not match the edge directions of the top effect at {y}")
    if bottom == "result" and top == "result":      # x -> y -> z
        effects, ent, ex = A.effects + Bc.effects, A.entrance, Bc.exit
    elif bottom == "cause" and top == "cause":      # z -> y -> x
        effects, ent, ex = Bc.effects + A.effects, Bc.entrance, A.exit
    elif bottom == "result":                        # collider at y
        effects, ent, ex = A.effects + Bc.effects, A.entrance, y
    else:                                           # fork at y
        effects, ent, ex = A.effects + Bc.effects, A.entrance, Bc.exit
    chain = ChainedEffect(effects, A.modes + [mode] + Bc.modes, entrance or ent, exit or ex,
                          A.junctions + [y] + Bc.junctions)
    # acyclic: no node may be predicted by a chain it feeds
    _check_acyclic(chain)
    return chain


def _check_acyclic(chain: ChainedEffect) -> None:
    adj: Dict[str, set] = {}
    for e in chain.effects:
        for c in e.cause_ids:
            adj.setdefault(c, set()).add(e.result.node)
    state: Dict[str, int] = {}

    def visit(n):
        state[n] = 1
        for m in adj.get(n, ()):
            if state.get(m) == 1 or (state.get(m) is None and visit(m)):
                return True
        state[n] = 2
        return False

    if any(state.get(n) is None and visit(n) for n in list(adj)):
        raise StackError("stacked chain contains a cycle")


@dataclass
class FineTuneConfig:
    iterations: int = 200
    warmup: int = 200  # reader-RNN-only steps before the junction encoder joins
    lr: float = 1e-3
    anchor_weight: float = 100.0  # junction recon loss is ~50x smaller than the readers' loss
    align_weight: float = 1.0
    seed: int = 0
    train_frac: float = 0.8
    max_degradation: float = 0.2


@dataclass
class FineTuneReport:
    junction: str
    rmse_before: float
    rmse_after: float
    losses: List[float] = field(default_factory=list)

    @property
    def degradation(self) -> float:
        return self.rmse_after / self.rmse_before - 1.0 if self.rmse_before > 0 else 0.0


def share_junction(chain: ChainedEffect, junction: str) -> RepresentationModel:
    """Make every effect at ``junction`` read one representation: the producer's.

    The producer is the effect predicting the junction (or, in a fork, the
    first effect reading it). Its copy replaces the others so predicted and
    encoded junction latents live in one space.
    """
    producer = next((e.result for e in chain.effects if e.result.node == junction), None)
    if producer is None:
        producer = next(c for e in chain.effects for c in e.causes if c.node == junction)
    for e in chain.effects:
        changed = False
        for i, c in enumerate(e.causes):
            if c.node == junction and c is not producer:
                e.causes[i] = producer
                changed = True
        if e.result.node == junction and e.result is not producer:
            e.result = producer
            changed = True
        if changed:
            e._assemble()
    return producer


def junction_rmse(m: RepresentationModel, data: Dataset, rows: slice) -> float:
    x = data.values[m.node][rows]
    _, _, rec = m.decode(m.encode(x, data.months[rows]))
    return rmse(rec, x)


def fine_tune(chain: ChainedEffect, data: Dataset, junction: Optional[str] = None,
              config: FineTuneConfig = FineTuneConfig()) -> FineTuneReport:
    """Adapt a stacked chain at its junction.

    The junction encoder (keys frozen) and the RNNs of effects reading the
    junction take phase-2 style steps, with the junction's own reconstruction
    as an anchor so its latents stay decodable. Sharing swaps the readers'
    input encoder, so the readers' RNNs first adapt alone for ``warmup``
    steps; otherwise their initial error drags the junction encoder away. In
    a collider nothing reads the junction, so the second producer's RNN
    adapts to the shared decoder.
    """
    y = junction or chain.junctions[-1]
    J = share_junction(chain, y)
    ev = slice(int(round(data.n_days * config.train_frac)), data.n_days)
    if ev.start >= data.n_days:
        ev = slice(0, data.n_days)
    before = junction_rmse(J, data, ev)
    readers = [e for e in chain.effects if y in e.cause_ids]
    if readers:
        tuned, enc_names = readers, J.names("enc.")
    else:
        tuned, enc_names = [e for e in chain.effects if e.result is J][1:], []
    enc = ParamSet()
    for n in enc_names:
        enc._params[n] = J.params[n]
    rnns = ParamSet()
    renamed = []
    for e in tuned:
        for n in e.rnn.names():
            t = e.rnn[n]
            renamed.append((t, t.name))
            t.name = f"{e.key}.{n}"  # distinct leaf names across RNNs
            rnns._params[t.name] = t
    params = ParamSet()
    params.merge(rnns)
    params.merge(enc)
    all_tensors = {id(t): t for e in chain.effects for t in e.params.tensors()}
    flags = {k: t.requires_grad for k, t in all_tensors.items()}
    for t in all_tensors.values():
        t.requires_grad = False
    for t in params.tensors():
        t.requires_grad = True
    rng = np.random.default_rng(config.seed)
    cut = ev.start if ev.start > 0 else data.n_days
    state = OptimizerState(lr=config.lr)
    rep = FineTuneReport(y, before, before)
    try:
        for it in range(config.warmup + config.iterations):
            joint = it >= config.warmup and bool(enc_names)
            for t in enc.tensors():
                t.requires_grad = joint
            live = params if joint else rnns
            total = None
            for e in tuned:
                W = e.window
                B = min(64, cut - W + 1)
                s = int(rng.integers(W - 1, cut - B + 1))
                hist, tgt = slice(s - W + 1, s + B), slice(s, s + B)
                yv, ym = data.values[e.result.node], data.masks[e.result.node]
                l = _phase_loss(e, data, 2, hist, tgt, yv, ym, config.align_weight)
                total = l if total is None else total + l
            if joint:
                s = int(rng.integers(0, cut - 64 + 1))
                rows = slice(s, s + 64)
                anchor = J.loss_t(data.values[y][rows], data.masks[y][rows], data.months[rows])
                total = total + config.anchor_weight * anchor
            lv = float(total.data)
            if not math.isfinite(lv):
                raise TrainingError(f"fine-tune at {y}: non-finite loss at iteration {it} (lr={config.lr})")
            step(live, backprop(total, live.tensors()), state)
            rep.losses.append(lv)
    finally:
        for t, name in renamed:
            t.name = name
        for k, t in all_tensors.items():
            t.requires_grad = flags[k]
    rep.rmse_after = junction_rmse(J, data, ev)
    if rep.degradation > config.max_degradation:
        log.warning("junction %s reconstruction degraded by %.0f%% (limit %.0f%%)", y,
                    100 * rep.degradation, 100 * config.max_degradation)
    return rep


# checkpoints -------------------------------------------------------------------------

def save_effect(e: EffectModel, path) -> None:
    from .engine.checkpoint import save

    def stats(m):
        if m.stats is None:
            return None
        mu, sd, pt = m.stats
        return {"mean": list(map(float, mu)), "std": list(map(float, sd)), "passthrough": list(map(bool, pt))}

    meta = {"kind": "effect", "window": e.window, "hidden": e.hidden,
            "in_shift": list(map(float, e.in_shift)), "in_scale": list(map(float, e.in_scale)),
            "causes": [{**c.config(), "stats": stats(c)} for c in e.causes],
            "result": {**e.result.config(), "stats": stats(e.result)}}
    save(path, e.params, meta)


def load_effect(path) -> EffectModel:
    from .engine.checkpoint import load
    params, meta = load(path)

    def model(cfg):
        own = ParamSet()
        for n in params.names(cfg["prefix"]):
            own.add(n, params[n].data)
        st = cfg.get("stats")
        stats = None if st is None else (np.array(st["mean"]), np.array(st["std"]),
                                         np.array(st["passthrough"], dtype=bool))
        return RepresentationModel(cfg["node"], cfg["dim"], cfg["latent_dim"], cfg["hidden"],
                                   cfg["keys_per_pair"], stats=stats, params=own, prefix=cfg["prefix"])

    rnn = ParamSet()
    for n in params.names("rnn."):
        rnn.add(n, params[n].data)
    e = EffectModel([model(c) for c in meta["causes"]], model(meta["result"]), meta["window"],
                    meta["hidden"], rnn=rnn, copy_models=False)
    e.in_shift = np.array(meta["in_shift"])
    e.in_scale = np.array(meta["in_scale"])
    return e
