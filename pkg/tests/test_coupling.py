import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from crlkit.coupling import (INPUT_WIDTH, KeySet, amplified_length, collapse_matrix, decrypt, encrypt,
                             expand_input, pair_index, slot_sources)
from crlkit.engine import ParamSet, ad, gradcheck

finite = st.floats(-3, 3, allow_nan=False)


def encrypt_loop(x, keys):
    """Straight-line reference: one slot per (layer, i, j) in the documented order."""
    n = len(x)
    out = []
    for layer in range(keys.keys_per_pair):
        for i in range(n):
            for j in range(n):
                if i != j:
                    ws, wt = keys.key(i, j, layer)
                    out.append(x[j] * math.exp(ws * x[i]) + wt * x[i])
    return np.array(out + list(x))


def test_zero_keys_tile_input():
    x = np.array([1.0, -2.0, 3.0])
    y = encrypt(x, KeySet.zeros(3)).data
    I, J = pair_index(3)
    assert np.array_equal(y[:6], x[J]) and np.array_equal(y[6:], x)
    assert np.allclose(decrypt(y, KeySet.zeros(3)).data, x)


def test_zero_input_maps_to_zero(rng):
    assert np.array_equal(encrypt(np.zeros(4), KeySet.random(4, rng)).data, np.zeros(16))


def test_worked_example():
    keys = KeySet.zeros(2).with_key(1, 0, math.log(2), 3.0)  # digit 2 drives digit 1
    y = encrypt(np.array([2.0, 1.0]), keys).data
    slot = [k for k, (_, i, j) in enumerate(slot_sources(2)) if (i, j) == (1, 0)][0]
    assert y[slot] == pytest.approx(7.0)
    assert (7.0 - 3.0 * 1.0) * math.exp(-math.log(2) * 1.0) == pytest.approx(2.0)
    assert decrypt(y, keys).data == pytest.approx([2.0, 1.0])


def test_matches_loop_reference(rng):
    for k in (1, 2):
        keys = KeySet.random(5, rng, scale=0.4, keys_per_pair=k)
        x = rng.normal(size=5)
        assert np.allclose(encrypt(x, keys).data, encrypt_loop(x, keys), atol=1e-13)


def test_round_trip_24_digits(rng):
    worst = 0.0
    for _ in range(200):
        keys = KeySet.random(24, rng, scale=0.3)
        x = rng.normal(size=24) * 2
        worst = max(worst, float(np.max(np.abs(decrypt(encrypt(x, keys), keys).data - x))))
    assert worst < 1e-9


@given(arrays(np.float64, st.integers(2, 6), elements=finite), st.integers(0, 2 ** 31), st.integers(1, 3))
def test_round_trip_property(x, seed, k):
    keys = KeySet.random(len(x), np.random.default_rng(seed), scale=0.5, keys_per_pair=k)
    y = encrypt(x, keys)
    assert y.shape[-1] == amplified_length(len(x), k)
    assert np.max(np.abs(decrypt(y, keys).data - x)) < 1e-9


@given(st.integers(2, 7), st.integers(1, 3))
def test_layout_bijective(n, k):
    src = slot_sources(n, k)
    assert len(src) == amplified_length(n, k) == len(set(src))
    for d in range(n):
        assert sum(1 for layer, _, j in src if j == d and layer is not None) == k * (n - 1)
        assert sum(1 for layer, _, j in src if j == d and layer is None) == 1


def test_keyset_validation():
    with pytest.raises(ValueError):
        KeySet(3, np.zeros((1, 6)), np.zeros((1, 5)))
    with pytest.raises(ValueError):
        KeySet(2, np.array([[np.nan, 0.0]]), np.zeros((1, 2)))
    assert KeySet.zeros(24).n_entries == 24 * 23


def test_length_checks(rng):
    keys = KeySet.random(3, rng)
    with pytest.raises(ValueError):
        encrypt(np.zeros(4), keys)
    with pytest.raises(ValueError):
        decrypt(np.zeros(8), keys)
    with pytest.raises(ValueError):
        encrypt(np.array([1.0, np.inf, 0.0]), keys)


def test_encrypt_gradcheck(rng):
    ps = ParamSet({"ws": rng.normal(0, 0.3, (1, 12)), "wt": rng.normal(0, 0.3, (1, 12)),
                   "x": rng.normal(size=(5, 4))})
    w = rng.normal(size=(5, 16))

    def loss():
        keys = KeySet(4, ps["ws"], ps["wt"])
        return ad.tsum(encrypt(ps["x"], keys) * w) + ad.tsum(decrypt(ad.tanh(encrypt(ps["x"], keys)), keys))
    assert gradcheck(loss, ps, n_probes=40).max_rel_err < 1e-4


def test_tanh_hook_round_trip(rng):
    keys = KeySet(4, rng.normal(size=(1, 12)), rng.normal(size=(1, 12)), nonlinearity="tanh")
    x = rng.normal(size=4)
    assert np.allclose(decrypt(encrypt(x, keys), keys).data, x, atol=1e-12)


def test_expand_input_examples():
    v = expand_input(np.array([5.0]), 1)
    assert v.shape == (INPUT_WIDTH,) == (24,)
    assert np.array_equal(v[:12], np.full(12, 5.0)) and v[12] == 1 and v[13:].sum() == 0
    raw = np.arange(12.0)
    assert np.array_equal(expand_input(raw, 7)[:12], raw)
    assert np.array_equal(expand_input(np.array([1.0, 2.0, 3.0]), 2)[:12], np.tile([1.0, 2.0, 3.0], 4))
    with pytest.raises(ValueError):
        expand_input(np.zeros(13), 1)
    with pytest.raises(ValueError):
        expand_input(np.zeros(2), 13)


@given(st.integers(1, 12), st.integers(1, 12))
def test_collapse_inverts_repetition(d, month):
    raw = np.arange(1.0, d + 1)
    assert np.allclose(expand_input(raw, month)[:12] @ collapse_matrix(d), raw)
