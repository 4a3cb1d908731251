"""Encrypt/Decrypt: double-wise feature amplification with an exact inverse.

For every ordered digit pair ``(i, j)``, ``i != j``, the amplified slot is

    y_ij = x_j * exp(s(x_i)) + t(x_i),   s(x) = w_s x,  t(x) = w_t x

and the original ``x`` is appended, so ``n`` inputs become ``n**2`` outputs
(with one key per pair). Inversion reads ``x_i`` back from the appended
pass-through block and needs neither ``s^-1`` nor ``t^-1``:

    x_j = (y_ij - t(y_i)) * exp(-s(y_i))

Layout of an amplified vector with ``k`` keys per pair::

    [ key 0: pairs in row-major (i outer, j inner, j != i) | key 1 ... | x_0..x_{n-1} ]
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .engine import ad
from .engine.autodiff import Tensor

EXPANDED_VALUES = 12
N_MONTHS = 12
INPUT_WIDTH = EXPANDED_VALUES + N_MONTHS


@lru_cache(maxsize=None)
def pair_index(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """``(I, J)`` source indices for the ``n*(n-1)`` transformed slots."""
    if n < 2:
        raise ValueError("amplification needs at least two digits")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = ii != jj
    return ii[off].copy(), jj[off].copy()


def amplified_length(n: int, keys_per_pair: int = 1) -> int:
    return n + keys_per_pair * n * (n - 1)


def slot_sources(n: int, keys_per_pair: int = 1) -> list:
    """For each output slot: ``(key, i, j)`` for transformed slots, ``(None, j, j)`` for pass-through."""
    I, J = pair_index(n)
    out = [(k, int(i), int(j)) for k in range(keys_per_pair) for i, j in zip(I, J)]
    out += [(None, j, j) for j in range(n)]
    return out


@dataclass
class KeySet:
    """Trainable ``(w_s, w_t)`` per ordered pair, one row per key layer.

    ``ws`` and ``wt`` are ``(keys_per_pair, n*(n-1))`` arrays (or leaf
    tensors when the keys live in a model's ParamSet).
    """
    n: int
    ws: object
    wt: object
    nonlinearity: Optional[str] = None  # hook: None = linear s and t, or "tanh"

    def __post_init__(self):
        ws, wt = _data(self.ws), _data(self.wt)
        p = self.n * (self.n - 1)
        if ws.shape != wt.shape or ws.ndim != 2 or ws.shape[1] != p:
            raise ValueError(f"key arrays must both be (k, {p}); got {ws.shape} and {wt.shape}")
        if not (np.all(np.isfinite(ws)) and np.all(np.isfinite(wt))):
            raise ValueError("keys must be finite")
        if self.nonlinearity not in (None, "tanh"):
            raise ValueError(f"unknown key nonlinearity {self.nonlinearity!r}")

    @property
    def keys_per_pair(self) -> int:
        return _data(self.ws).shape[0]

    @property
    def n_entries(self) -> int:
        return _data(self.ws).size

    @classmethod
    def zeros(cls, n: int, keys_per_pair: int = 1) -> "KeySet":
        p = n * (n - 1)
        return cls(n, np.zeros((keys_per_pair, p)), np.zeros((keys_per_pair, p)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, scale: float = 0.1,
               keys_per_pair: int = 1) -> "KeySet":
        p = n * (n - 1)
        return cls(n, rng.normal(0, scale, (keys_per_pair, p)), rng.normal(0, scale, (keys_per_pair, p)))

    def key(self, i: int, j: int, layer: int = 0) -> Tuple[float, float]:
        I, J = pair_index(self.n)
        s = int(np.flatnonzero((I == i) & (J == j))[0])
        return float(_data(self.ws)[layer, s]), float(_data(self.wt)[layer, s])

    def with_key(self, i: int, j: int, ws: float, wt: float, layer: int = 0) -> "KeySet":
        I, J = pair_index(self.n)
        s = int(np.flatnonzero((I == i) & (J == j))[0])
        a, b = _data(self.ws).copy(), _data(self.wt).copy()
        a[layer, s], b[layer, s] = ws, wt
        return KeySet(self.n, a, b, self.nonlinearity)


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _st(w, x, nonlinearity):
    z = w * x
    return ad.tanh(z) if nonlinearity == "tanh" else z


def _flat_keys(keys: KeySet):
    k = keys.keys_per_pair
    ws = keys.ws if isinstance(keys.ws, Tensor) else Tensor(keys.ws)
    wt = keys.wt if isinstance(keys.wt, Tensor) else Tensor(keys.wt)
    return ad.reshape(ws, (k * keys.n * (keys.n - 1),)), ad.reshape(wt, (k * keys.n * (keys.n - 1),))


def _check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise ValueError(f"non-finite values in {what}")


def encrypt(x, keys: KeySet) -> Tensor:
    """Amplify ``x`` (shape ``(..., n)``) to ``(..., n + k*n*(n-1))``."""
    x = ad.as_tensor(x)
    if x.shape[-1] != keys.n:
        raise ValueError(f"input length {x.shape[-1]} does not match key size {keys.n}")
    _check_finite(x, "encrypt input")
    I, J = pair_index(keys.n)
    k = keys.keys_per_pair
    xi = ad.take(x, np.tile(I, k))
    xj = ad.take(x, np.tile(J, k))
    ws, wt = _flat_keys(keys)
    body = xj * ad.exp(_st(ws, xi, keys.nonlinearity)) + _st(wt, xi, keys.nonlinearity)
    return ad.concat([body, x], axis=-1)


@lru_cache(maxsize=None)
def _average_matrix(n: int, k: int) -> np.ndarray:
    I, J = pair_index(n)
    A = np.zeros((k * len(J), n))
    A[np.arange(k * len(J)), np.tile(J, k)] = 1.0 / (k * (n - 1))
    A.setflags(write=False)
    return A


def decrypt(y, keys: KeySet) -> Tensor:
    """Invert :func:`encrypt`, averaging the ``k*(n-1)`` recoveries of each digit."""
    y = ad.as_tensor(y)
    n, k = keys.n, keys.keys_per_pair
    p = k * n * (n - 1)
    if y.shape[-1] != p + n:
        raise ValueError(f"amplified length {y.shape[-1]} != {p + n}")
    I, _ = pair_index(n)
    body = y[..., :p]
    passthru = y[..., p:]
    yi = ad.take(passthru, np.tile(I, k))
    ws, wt = _flat_keys(keys)
    rec = (body - _st(wt, yi, keys.nonlinearity)) * ad.exp(-_st(ws, yi, keys.nonlinearity))
    return ad.matmul(rec, _average_matrix(n, k))


def expand_input(raw, month) -> np.ndarray:
    """Round-robin repeat ``d`` columns into 12 slots and append a month one-hot.

    ``raw`` is ``(d,)`` or ``(rows, d)``; ``month`` is 1..12 (scalar or per row).
    """
    raw = np.asarray(raw, dtype=np.float64)
    single = raw.ndim == 1
    raw2 = raw[None, :] if single else raw
    d = raw2.shape[1]
    if not 1 <= d <= EXPANDED_VALUES:
        raise ValueError(f"node width {d} outside 1..{EXPANDED_VALUES}")
    month = np.atleast_1d(np.asarray(month, dtype=int))
    if np.any(month < 1) or np.any(month > 12):
        raise ValueError("month must be in 1..12")
    if month.size == 1 and raw2.shape[0] > 1:
        month = np.repeat(month, raw2.shape[0])
    if month.size != raw2.shape[0]:
        raise ValueError("one month per row required")
    out = np.zeros((raw2.shape[0], INPUT_WIDTH))
    out[:, :EXPANDED_VALUES] = raw2[:, repeat_index(d)]
    out[np.arange(raw2.shape[0]), EXPANDED_VALUES + month - 1] = 1.0
    return out[0] if single else out


@lru_cache(maxsize=None)
def repeat_index(d: int) -> np.ndarray:
    idx = np.arange(EXPANDED_VALUES) % d
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=None)
def collapse_matrix(d: int) -> np.ndarray:
    """``(12, d)`` matrix averaging the round-robin repeats back to ``d`` columns."""
    idx = repeat_index(d)
    M = np.zeros((EXPANDED_VALUES, d))
    M[np.arange(EXPANDED_VALUES), idx] = 1.0
    M /= M.sum(axis=0, keepdims=True)
    M.setflags(write=False)
    return M
