"""Per-node higher-dimensional representation autoencoder.

    x (d) -> expand (24) -> Encrypt (576) -> affine-tanh-affine -> h (16)
    h -> affine-tanh-affine (576) -> Decrypt (24) -> values (d)
    h -> affine-sigmoid (24) -> mask probabilities (d)

The Keys are encoder parameters; the decoder reads the same tensors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import coupling
from .coupling import INPUT_WIDTH, KeySet, amplified_length
from .datagen import Dataset, ScaleStats, unscale_array
from .engine import ad
from .engine.autodiff import Tensor, backprop
from .engine.optim import OptimizerState, step
from .engine.params import ParamSet, init_params
from .metrics import bce as bce_metric
from .metrics import rmse

log = logging.getLogger(__name__)

POSTERIOR = ("keys.", "enc.")
LIKELIHOOD = ("dec.", "mask.")


class TrainingError(RuntimeError):
    pass


class RankError(ValueError):
    pass


def rank_lower_bound(X, tol: float = 1e-10) -> int:
    """Numerical rank: singular values above ``tol * sigma_max``."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise ValueError("empty matrix")
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def check_latent_dim(latent_dim: int, X, tol: float = 1e-10) -> int:
    r = rank_lower_bound(X, tol)
    if latent_dim < r:
        raise RankError(f"latent_dim {latent_dim} < rank lower bound {r}")
    return r


@dataclass
class AEConfig:
    epochs: int = 300
    lr: float = 1e-3
    batch: int = 64
    seed: int = 0
    patience: int = 30
    key_scale: float = 0.05


class RepresentationModel:
    def __init__(self, node: str, dim: int, latent_dim: int = 16, hidden: int = 64,
                 keys_per_pair: int = 1, seed: int = 0, key_scale: float = 0.05,
                 stats: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
                 params: Optional[ParamSet] = None, strict_rank: bool = False,
                 rank_matrix=None, prefix: str = ""):
        if not 1 <= dim <= coupling.EXPANDED_VALUES:
            raise ValueError(f"node width {dim} outside 1..12")
        if strict_rank:
            if rank_matrix is None:
                raise RankError("strict_rank needs the node's data matrix")
            check_latent_dim(latent_dim, rank_matrix)
        self.node = node
        self.dim = dim
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.keys_per_pair = keys_per_pair
        self.stats = stats  # (mean, std, passthrough) for this node
        self.prefix = prefix  # namespace of this model's names inside a shared ParamSet
        amp = amplified_length(INPUT_WIDTH, keys_per_pair)
        if params is None:
            params = init_params({
                "enc.w1": (amp, hidden), "enc.b1": (hidden,),
                "enc.w2": (hidden, latent_dim), "enc.b2": (latent_dim,),
                "dec.w1": (latent_dim, hidden), "dec.b1": (hidden,),
                "dec.w2": (hidden, amp), "dec.b2": (amp,),
                "mask.w": (latent_dim, INPUT_WIDTH), "mask.b": (INPUT_WIDTH,),
            }, seed)
            ks = KeySet.random(INPUT_WIDTH, np.random.default_rng([seed, 1]), key_scale, keys_per_pair)
            params.add("keys.ws", ks.ws)
            params.add("keys.wt", ks.wt)
            if prefix:
                params = params.copy({"": prefix})
        self.params = params

    # structure ---------------------------------------------------------------
    def w(self, name: str) -> Tensor:
        return self.params[self.prefix + name]

    def names(self, *groups: str) -> List[str]:
        """Full parameter names under the given groups (``"enc."``, ...); all if none."""
        groups = groups or POSTERIOR + LIKELIHOOD
        return [n for g in groups for n in self.params.names(self.prefix + g)]

    @property
    def keys(self) -> KeySet:
        return KeySet(INPUT_WIDTH, self.w("keys.ws"), self.w("keys.wt"))

    def config(self) -> dict:
        return {"node": self.node, "dim": self.dim, "latent_dim": self.latent_dim,
                "hidden": self.hidden, "keys_per_pair": self.keys_per_pair, "prefix": self.prefix}

    def copy(self, prefix: Optional[str] = None) -> "RepresentationModel":
        """Independent copy, optionally moved to a new name prefix."""
        m = RepresentationModel.__new__(RepresentationModel)
        m.__dict__.update(self.__dict__)
        if prefix is None or prefix == self.prefix:
            m.params = self.params.copy()
        else:
            own = ParamSet()
            for n in self.names():
                own.add(n, self.params[n].data, self.params[n].requires_grad)
            m.params = own.copy({self.prefix: prefix})
            m.prefix = prefix
        return m

    def scale_stats(self, stats: ScaleStats) -> None:
        self.stats = (stats.mean[self.node], stats.std[self.node], stats.passthrough[self.node])

    def _stats_obj(self) -> ScaleStats:
        mu, sd, pt = self.stats
        return ScaleStats({self.node: mu}, {self.node: sd}, {self.node: pt})

    def unscale(self, z: np.ndarray, mask: np.ndarray) -> np.ndarray:
        if self.stats is None:
            return z
        return unscale_array(z, mask, self._stats_obj(), self.node)

    # forward pieces ------------------------------------------------------------
    def encode_t(self, x_scaled, months) -> Tensor:
        w = self.w
        x = np.asarray(x_scaled, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite input for node {self.node}")
        inp = coupling.expand_input(x.reshape(-1, self.dim), np.asarray(months).reshape(-1))
        y = coupling.encrypt(inp, self.keys)
        hid = ad.tanh(ad.affine(y, w("enc.w1"), w("enc.b1")))
        return ad.affine(hid, w("enc.w2"), w("enc.b2"))

    def decode_t(self, h) -> Tuple[Tensor, Tensor]:
        """Collapsed ``(values, mask_prob)`` tensors, each ``(rows, d)``."""
        w = self.w
        h = ad.as_tensor(h)
        if h.shape[-1] != self.latent_dim:
            raise ValueError(f"latent length {h.shape[-1]} != {self.latent_dim}")
        hid = ad.tanh(ad.affine(h, w("dec.w1"), w("dec.b1")))
        amp = ad.affine(hid, w("dec.w2"), w("dec.b2"))
        rec = coupling.decrypt(amp, self.keys)
        collapse = coupling.collapse_matrix(self.dim)
        values = ad.matmul(rec[..., :coupling.EXPANDED_VALUES], collapse)
        mprob = ad.sigmoid(ad.affine(h, w("mask.w"), w("mask.b")))
        mask = ad.matmul(mprob[..., :coupling.EXPANDED_VALUES], collapse)
        return values, mask

    def loss_t(self, x_scaled, mask, months) -> Tensor:
        values, mprob = self.decode_t(self.encode_t(x_scaled, months))
        return reconstruction_loss(values, mprob, x_scaled, mask)

    # numpy-facing API -------------------------------------------------------
    def encode(self, x_scaled, months) -> np.ndarray:
        single = np.ndim(x_scaled) == 1
        h = self.encode_t(x_scaled, months).data
        return h[0] if single else h

    def decode(self, h) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(values, mask_prob, reconstruction)`` with ``reconstruction = values * [mask_prob > 0.5]``."""
        single = np.ndim(h) == 1
        v, m = self.decode_t(np.atleast_2d(h))
        v, m = v.data, m.data
        rec = v * (m > 0.5)
        if single:
            return v[0], m[0], rec[0]
        return v, m, rec


def reconstruction_loss(values: Tensor, mprob: Tensor, target, mask) -> Tensor:
    return ad.mse(values, target) + ad.bce(mprob, mask)


def _node_arrays(d: Dataset, node: str):
    return d.values[node], d.masks[node], d.months


@dataclass
class ReconstructionReport:
    node: str
    length: int
    epochs_run: int
    losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)  # monitored RMSE per epoch
    rmse_scaled: float = math.nan
    rmse_original: float = math.nan
    bce_mask: float = math.nan
    val_rmse_scaled: float = math.nan
    initial_loss: float = math.nan
    final_loss: float = math.nan


def evaluate(m: RepresentationModel, x_scaled, mask, months) -> Dict[str, float]:
    h = m.encode(x_scaled, months)
    _, mprob, rec = m.decode(h)
    hard = (mprob > 0.5).astype(float)
    out = {"rmse_scaled": rmse(rec, x_scaled), "bce_mask": bce_metric(mprob, mask)}
    if m.stats is not None:
        out["rmse_original"] = rmse(m.unscale(rec, hard), m.unscale(x_scaled, mask))
    else:
        out["rmse_original"] = out["rmse_scaled"]
    return out


def _batched_loss(m: RepresentationModel, x, mask, months, batch: int = 1024) -> float:
    tot = 0.0
    for s in range(0, x.shape[0], batch):
        sl = slice(s, s + batch)
        tot += float(m.loss_t(x[sl], mask[sl], months[sl]).data) * (min(s + batch, x.shape[0]) - s)
    return tot / x.shape[0]


def train_autoencoder(m: RepresentationModel, train: Dataset, config: AEConfig = AEConfig(),
                      val: Optional[Dataset] = None) -> ReconstructionReport:
    """Jointly minimise value MSE and mask BCE with Adam on scaled data.

    The best parameters by monitored RMSE are kept, with early stopping after
    ``patience`` epochs without improvement. The monitor is ``val`` when given,
    otherwise the training data itself (in-sample reconstruction).
    """
    x, mask, months = _node_arrays(train, m.node)
    n = x.shape[0]
    rng = np.random.default_rng(config.seed)
    m.params.unfreeze()
    state = OptimizerState(lr=config.lr)
    rep = ReconstructionReport(m.node, m.dim, 0)
    rep.initial_loss = _batched_loss(m, x, mask, months)
    mon = _node_arrays(val if val is not None else train, m.node)
    best, best_score, bad = None, math.inf, 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        tot = 0.0
        for s in range(0, n, config.batch):
            idx = perm[s:s + config.batch]
            loss = m.loss_t(x[idx], mask[idx], months[idx])
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise TrainingError(f"node {m.node}: non-finite loss at epoch {epoch} (lr={config.lr})")
            step(m.params, backprop(loss, m.params.trainable()), state)
            tot += lv * len(idx)
        rep.losses.append(tot / n)
        rep.epochs_run = epoch + 1
        score = evaluate(m, *mon)["rmse_scaled"]
        rep.val_losses.append(score)
        if score < best_score - 1e-12:
            best, best_score, bad = m.params.snapshot(), score, 0
        else:
            bad += 1
            if bad >= config.patience:
                log.info("node %s: early stop at epoch %d", m.node, epoch)
                break
    if best is not None:
        m.params.load(best)
    rep.final_loss = _batched_loss(m, x, mask, months)
    ev = evaluate(m, x, mask, months)
    rep.rmse_scaled, rep.rmse_original, rep.bce_mask = ev["rmse_scaled"], ev["rmse_original"], ev["bce_mask"]
    if val is not None:
        vx, vm, vmo = _node_arrays(val, m.node)
        rep.val_rmse_scaled = evaluate(m, vx, vm, vmo)["rmse_scaled"]
    return rep


def mean_baseline_rmse(x_scaled) -> float:
    x = np.asarray(x_scaled)
    return rmse(np.broadcast_to(x.mean(axis=0), x.shape), x)


# checkpoints ------------------------------------------------------------------

def save_model(m: RepresentationModel, path) -> None:
    from .engine.checkpoint import save
    meta = {"kind": "representation", **m.config()}
    if m.stats is not None:
        mu, sd, pt = m.stats
        meta["stats"] = {"mean": list(map(float, mu)), "std": list(map(float, sd)),
                         "passthrough": list(map(bool, pt))}
    own = ParamSet()
    for n in m.names():
        own.add(n, m.params[n].data, m.params[n].requires_grad)
    save(path, own, meta)


def load_model(path) -> RepresentationModel:
    from .engine.checkpoint import load
    params, meta = load(path)
    stats = None
    if "stats" in meta:
        s = meta["stats"]
        stats = (np.array(s["mean"]), np.array(s["std"]), np.array(s["passthrough"], dtype=bool))
    return RepresentationModel(meta["node"], meta["dim"], meta["latent_dim"], meta["hidden"],
                               meta["keys_per_pair"], stats=stats, params=params,
                               prefix=meta.get("prefix", ""))
