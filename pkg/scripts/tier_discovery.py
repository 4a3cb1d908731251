"""Greedy discovery on the built-in hydrology data, scored against the edge tiers.

    python scripts/tier_discovery.py --seeds 0 1 2
"""
import argparse
import time

from crlkit.datagen import StretchProfile, fit_scaler, generate_individual, hydrology_spec, scale
from crlkit.discovery import EffectKld, KldCache, discover, tier_score
from crlkit.effects import EffectConfig
from crlkit.represent import AEConfig, RepresentationModel, train_autoencoder


def run_seed(seed, years=6, ae_epochs=40, iterations=800, lr=3e-3, verbose=True):
    spec = hydrology_spec(years=years, seed=seed)
    data = generate_individual(spec, StretchProfile("default"))
    scaled = scale(data, fit_scaler(data.split(0.8)[0]))
    train = scaled.split(0.8)[0]
    models = {}
    for n in spec.graph.ids:
        m = RepresentationModel(n, spec.graph.node(n).dim, seed=seed)
        train_autoencoder(m, train, AEConfig(epochs=ae_epochs, seed=seed))
        models[n] = m
    cache = KldCache()
    res = discover(spec.graph, EffectKld(models, scaled, EffectConfig(seed=seed, iterations=iterations, lr=lr)),
                   cache=cache)
    if verbose:
        tiers = {e.key: e.tier for e in spec.graph.edges}
        for e in res.edges:
            print(f"  {e.round:2d} {e.name:5s} tier {tiers[(e.cause, e.result)]} kld {e.kld:7.3f} gain {e.gain:7.3f}")
    return tier_score(res, spec.graph), res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--years", type=int, default=6)
    ap.add_argument("--ae-epochs", type=int, default=40)
    ap.add_argument("--iterations", type=int, default=800)
    ap.add_argument("--lr", type=float, default=3e-3)
    a = ap.parse_args()
    scores = []
    for s in a.seeds:
        t = time.time()
        score, _ = run_seed(s, a.years, a.ae_epochs, a.iterations, a.lr)
        scores.append(score.precedence)
        print(f"seed {s}: precedence {score.precedence:.4f} mean rank {score.mean_rank} ({time.time() - t:.0f} s)")
    print(f"mean precedence {sum(scores) / len(scores):.4f}")


if __name__ == "__main__":
    main()
