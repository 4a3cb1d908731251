"""Small synthetic cause/result datasets shared by the effect and acceptance tests."""
import numpy as np

from crlkit.datagen import Dataset, ar1_noise, fit_scaler, make_calendar, scale
from crlkit.represent import AEConfig, RepresentationModel, train_autoencoder

MIX = np.array([[0.8, 0.3], [-0.4, 0.9]])


def linked_pair(linked: bool, years: int = 3, seed: int = 0, dim: int = 2) -> Dataset:
    """Scaled AR(1) cause X; Y is X mixed linearly one day later, or fresh noise."""
    rng = np.random.default_rng(seed)
    cal = make_calendar(years)
    x = ar1_noise(rng, (cal.shape[0], dim), 0.9)
    if linked:
        y = np.zeros_like(x)
        y[1:] = x[:-1] @ MIX[:dim, :dim].T
    else:
        y = ar1_noise(rng, x.shape, 0.9)
    vals = {"X": x, "Y": y}
    d = Dataset(vals, {k: np.ones_like(v) for k, v in vals.items()}, cal, "toy", None)
    return scale(d, fit_scaler(d))


def chain_data(nodes="XYZ", years: int = 2, seed: int = 0) -> Dataset:
    """Each node is the previous one lagged a day, plus a little noise."""
    rng = np.random.default_rng(seed)
    cal = make_calendar(years)
    T = cal.shape[0]
    vals = {nodes[0]: ar1_noise(rng, (T, 1), 0.9)}
    for a, b in zip(nodes, nodes[1:]):
        y = np.zeros((T, 1))
        y[1:] = 0.9 * vals[a][:-1]
        vals[b] = y + 0.1 * rng.standard_normal((T, 1))
    d = Dataset(vals, {k: np.ones_like(v) for k, v in vals.items()}, cal, "toy", None)
    return scale(d, fit_scaler(d))


def fit_models(data: Dataset, epochs: int = 30, seed: int = 0, **kw):
    out = {}
    for n in data.nodes:
        m = RepresentationModel(n, data.values[n].shape[1], seed=seed, **kw)
        train_autoencoder(m, data, AEConfig(epochs=epochs, seed=seed))
        out[n] = m
    return out


ACCEPTANCE = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    """Record and print one criterion line; the terminal summary repeats them in order."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
