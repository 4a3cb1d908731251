"""Desk-scale effect examples on the built-in hydrology data."""
import numpy as np
import pytest

from crlkit.effects import MODES, EffectConfig, FineTuneConfig, fine_tune, stack, train_effect
from crlkit.pipeline import chain_nse


def test_joint_parents_beat_every_pair(hydro):
    spec, scaled, models = hydro
    cfg = EffectConfig(seed=0, iterations=1600, lr=3e-3)
    pairs = {c: train_effect([models[c]], models["G"], scaled, cfg)[1].kld for c in "CDE"}
    joint = train_effect([models[c] for c in "CDE"], models["G"], scaled, cfg)[1].kld
    assert joint < min(pairs.values()), (joint, pairs)


@pytest.mark.xfail(reason="J is not predictable from B or I alone in the built-in data: a ridge fit on "
                          "lagged I (or B) already scores NSE < 0 on the held-out year", strict=False)
def test_stacked_chain_beats_mean_predictor(hydro, hydro_pairs):
    scaled = hydro[1]
    effects = [e.copy() for e in hydro_pairs]
    chain = effects[0]
    for e in effects[1:]:
        chain = stack(chain, e, MODES[3])
    assert chain.entrance == ("B",) and chain.exit == "J"
    for j in list(chain.junctions):
        fine_tune(chain, scaled, j, FineTuneConfig(seed=0))
    cut = int(round(scaled.n_days * 0.8))
    score = chain_nse(chain, scaled, slice(cut, None))
    assert score is not None and score > 0, score
    assert np.isfinite(score)
