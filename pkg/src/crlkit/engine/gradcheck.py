from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .autodiff import Tensor, backprop
from .params import ParamSet


@dataclass
class GradCheckResult:
    max_rel_err: float
    n_probes: int
    worst: tuple  # (param name, flat index, analytic, numeric)

    @property
    def ok(self) -> bool:
        return self.max_rel_err < 1e-4


def rel_err(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def gradcheck(loss_fn: Callable[[], Tensor], params: ParamSet, n_probes: int = 50,
              eps: float = 1e-5, seed: int = 0, floor: float = 1e-6,
              names: Optional[list] = None) -> GradCheckResult:
    """Compare reverse-mode gradients against central differences.

    ``n_probes`` entries are drawn uniformly over all trainable scalar
    slots (or those under ``names``). Relative error uses
    ``max(|a|, |n|, floor)`` as the denominator.
    """
    grads = backprop(loss_fn(), params.trainable())
    names = names or [n for n in params.names() if params.is_trainable(n)]
    sizes = np.array([params[n].data.size for n in names])
    rng = np.random.default_rng(seed)
    slots = rng.choice(int(sizes.sum()), size=min(n_probes, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    worst, worst_err = None, 0.0
    for s in slots:
        k = int(np.searchsorted(bounds, s, side="right"))
        name = names[k]
        flat = int(s - (bounds[k - 1] if k else 0))
        t = params[name]
        orig = t.data.copy()
        bumped = orig.copy().reshape(-1)
        bumped[flat] += eps
        t.data = bumped.reshape(orig.shape)
        up = float(loss_fn().data)
        bumped[flat] -= 2 * eps
        t.data = bumped.reshape(orig.shape)
        down = float(loss_fn().data)
        t.data = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name].reshape(-1)[flat])
        err = rel_err(analytic, numeric, floor)
        if worst is None or err > worst_err:
            worst, worst_err = (name, flat, analytic, numeric), err
    return GradCheckResult(worst_err, len(slots), worst)
