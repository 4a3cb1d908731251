from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .params import ParamSet


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float = 5.0
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def step(params: ParamSet, grads: Mapping[str, np.ndarray], state: OptimizerState) -> float:
    """One Adam update with bias correction and global-norm clipping.

    Only parameters that are trainable *now* move; gradients for frozen
    names are ignored. Returns the pre-clip gradient norm.
    """
    live = {n: g for n, g in grads.items() if n in params and params.is_trainable(n)}
    for n in params.names():
        if params.is_trainable(n) and n not in live:
            raise KeyError(f"missing gradient for trainable parameter {n!r}")
    for n, g in live.items():
        if g.shape != params[n].data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {n} {params[n].data.shape}")
    norm = global_norm(live)
    scale = state.clip / norm if state.clip and norm > state.clip else 1.0
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for n, g in live.items():
        if scale != 1.0:
            g = g * scale
        m = state.m.get(n)
        if m is None:
            m = np.zeros_like(g)
            state.v[n] = np.zeros_like(g)
        v = state.v[n]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[n], state.v[n] = m, v
        p = params[n]
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return norm
