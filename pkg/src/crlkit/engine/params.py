from __future__ import annotations

from typing import Dict, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor


class ParamSet:
    """Named leaf tensors, each trainable or frozen.

    Names are dotted paths (``"encoder.w1"``); :meth:`freeze` and
    :meth:`unfreeze` take name prefixes so a model can switch whole groups.
    """

    def __init__(self, tensors: Optional[Mapping[str, np.ndarray]] = None):
        self._params: Dict[str, Tensor] = {}
        for name, arr in (tensors or {}).items():
            self.add(name, arr)

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list:
        return [n for n in self._params if n.startswith(prefix)]

    def tensors(self) -> list:
        return list(self._params.values())

    def trainable(self) -> list:
        return [t for t in self._params.values() if t.requires_grad]

    def is_trainable(self, name: str) -> bool:
        return self._params[name].requires_grad

    def set_trainable(self, prefixes: Sequence[str], flag: bool) -> None:
        for name, t in self._params.items():
            if any(name.startswith(p) for p in prefixes):
                t.requires_grad = flag

    def freeze(self, *prefixes: str) -> None:
        self.set_trainable(prefixes or ("",), False)

    def unfreeze(self, *prefixes: str) -> None:
        self.set_trainable(prefixes or ("",), True)

    def only_train(self, *prefixes: str) -> None:
        """Make exactly the parameters under ``prefixes`` trainable."""
        self.freeze()
        if prefixes:
            self.unfreeze(*prefixes)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def flags(self) -> Dict[str, bool]:
        return {n: t.requires_grad for n, t in self._params.items()}

    def load(self, values: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for name, arr in values.items():
            if name not in self._params:
                if strict:
                    raise KeyError(f"unknown parameter {name!r}")
                continue
            t = self._params[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def copy(self, prefix_map: Optional[Mapping[str, str]] = None) -> "ParamSet":
        """Deep copy; ``prefix_map`` renames leading name components."""
        out = ParamSet()
        for name, t in self._params.items():
            new = name
            for old, rep in (prefix_map or {}).items():
                if name.startswith(old):
                    new = rep + name[len(old):]
                    break
            out.add(new, t.data.copy(), t.requires_grad)
        return out

    def merge(self, other: "ParamSet") -> None:
        """Adopt ``other``'s tensors (shared, not copied)."""
        for name, t in other.items():
            if name in self._params:
                raise KeyError(f"duplicate parameter name {name!r}")
            self._params[name] = t

    def n_values(self) -> int:
        return int(sum(t.data.size for t in self._params.values()))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(shape_spec: Mapping[str, Tuple[int, ...]], seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases.

    A 1-d shape is treated as a bias; a 2-d shape ``(fan_in, fan_out)`` as a
    weight matrix. Draws happen in ``shape_spec`` order from one generator.
    """
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    for name, shape in shape_spec.items():
        shape = tuple(int(s) for s in shape)
        if not shape or any(s <= 0 for s in shape):
            raise ValueError(f"parameter {name!r} has empty shape {shape}")
        if len(shape) == 1:
            ps.add(name, np.zeros(shape))
        elif len(shape) == 2:
            a = glorot_bound(*shape)
            ps.add(name, rng.uniform(-a, a, size=shape))
        else:
            raise ValueError(f"parameter {name!r}: only 1-d or 2-d shapes supported")
    return ps


def param_delta(before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray]) -> Dict[str, float]:
    """Max abs change per parameter name present in both snapshots."""
    return {n: float(np.max(np.abs(after[n] - before[n]))) if before[n].size else 0.0
            for n in before if n in after}


def changed(before: Mapping[str, np.ndarray], after: Mapping[str, np.ndarray]) -> Iterable[str]:
    return [n for n in before if n in after and not np.array_equal(before[n], after[n])]
