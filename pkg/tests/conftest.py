import itertools

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from crlkit.dodag import DoDag, EdgeSpec, NodeSpec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

IDS = "ABCDEFGH"


@st.composite
def random_graphs(draw, max_nodes=6, acyclic=True):
    """Random graphs over single-letter ids; acyclic ones only use forward edges of a random order."""
    n = draw(st.integers(1, max_nodes))
    ids = list(IDS[:n])
    order = draw(st.permutations(ids)) if acyclic else ids
    pairs = [(a, b) for a, b in itertools.permutations(ids, 2)
             if not acyclic or order.index(a) < order.index(b)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    nodes = [NodeSpec(i, draw(st.integers(1, 4))) for i in ids]
    edges = [EdgeSpec(a, b, draw(st.one_of(st.none(), st.integers(1, 3)))) for a, b in chosen]
    return DoDag(nodes, edges)


def chain(*ids, dim=1):
    return DoDag([NodeSpec(i, dim) for i in ids], [EdgeSpec(a, b) for a, b in zip(ids, ids[1:])])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from harness import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def hydro():
    """Six years of hydrology data (seed 0), scaled on the training split, with one autoencoder per node."""
    from crlkit.datagen import StretchProfile, fit_scaler, generate_individual, hydrology_spec, scale
    from crlkit.represent import AEConfig, RepresentationModel, train_autoencoder
    spec = hydrology_spec(years=6, seed=0)
    data = generate_individual(spec, StretchProfile("default"))
    scaled = scale(data, fit_scaler(data.split(0.8)[0]))
    models = {}
    for n in spec.graph.ids:
        m = RepresentationModel(n, spec.graph.node(n).dim, seed=0)
        train_autoencoder(m, scaled.split(0.8)[0], AEConfig(epochs=40, seed=0))
        models[n] = m
    return spec, scaled, models


@pytest.fixture(scope="session")
def hydro_pairs(hydro):
    """Trained pair effects along B=>E=>F=>I=>J. Stacking rewires effects, so callers should copy them."""
    from crlkit.effects import EffectConfig, train_effect
    spec, scaled, models = hydro
    path = "BEFIJ"
    return [train_effect([models[a]], models[b], scaled, EffectConfig(seed=0, iterations=800, lr=3e-3))[0]
            for a, b in zip(path, path[1:])]
