"""Evaluation primitives shared by the reconstruction, effect and discovery reports."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

BCE_CLAMP = 1e-7
VAR_FLOOR = 1e-6


def _pair(pred, obs):
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {obs.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    return pred, obs


def rmse(pred, obs) -> float:
    pred, obs = _pair(pred, obs)
    return float(np.sqrt(np.mean((pred - obs) ** 2)))


def bce(prob, mask) -> float:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7]."""
    p, y = _pair(prob, mask)
    p = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def nse(pred, obs) -> Optional[float]:
    """Nash-Sutcliffe efficiency; ``None`` when ``obs`` is constant."""
    pred, obs = _pair(pred, obs)
    denom = float(np.sum((obs - obs.mean()) ** 2))
    if denom == 0.0:
        return None
    return 1.0 - float(np.sum((pred - obs) ** 2)) / denom


def gaussian_kld(mu1, var1, mu2, var2) -> float:
    """KL(N(mu1, diag var1) || N(mu2, diag var2)), summed over dimensions.

    Variances below 1e-6 are floored.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    v1 = np.maximum(np.atleast_1d(np.asarray(var1, float)), VAR_FLOOR)
    v2 = np.maximum(np.atleast_1d(np.asarray(var2, float)), VAR_FLOOR)
    if not (mu1.shape == mu2.shape == v1.shape == v2.shape):
        raise ValueError("dimension mismatch")
    d = mu1 - mu2
    return float(np.sum(0.5 * np.log(v2 / v1) + (v1 + d * d) / (2.0 * v2) - 0.5))


def fit_diag_gaussian(samples) -> tuple:
    """Mean and (population) variance per column, variance floored.

    Returns ``(mu, var, floored)`` where ``floored`` flags columns whose
    variance hit the floor.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    floored = var < VAR_FLOOR
    return mu, np.maximum(var, VAR_FLOOR), floored


@dataclass
class EvalRow:
    subject: str
    rmse_scaled: float = math.nan
    rmse_original: float = math.nan
    bce_mask: float = math.nan
    nse: float = math.nan
    kld: float = math.nan

    def __post_init__(self):
        for name in ("rmse_scaled", "rmse_original", "bce_mask", "kld"):
            v = getattr(self, name)
            if v is not None and not math.isnan(v) and v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")
        if self.nse is not None and not math.isnan(self.nse) and self.nse > 1 + 1e-12:
            raise ValueError(f"nse must be <= 1, got {self.nse}")


def write_eval_rows(path, rows: Iterable[EvalRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f.name for f in fields(EvalRow)]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
    return path


def read_eval_rows(path) -> list:
    out = []
    with Path(path).open() as fh:
        for rec in csv.DictReader(fh):
            out.append(EvalRow(rec["subject"], *(float(rec[k]) for k in
                                                  ("rmse_scaled", "rmse_original", "bce_mask", "nse", "kld"))))
    return out
