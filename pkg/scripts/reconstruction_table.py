"""Autoencoder reconstruction per node on the hydrology data (Length, RMSE, BCE columns).

    python scripts/reconstruction_table.py --years 5 --seed 42
"""
import argparse
import statistics
import time

from crlkit.datagen import StretchProfile, fit_scaler, generate_individual, hydrology_spec, scale
from crlkit.represent import AEConfig, RepresentationModel, evaluate, train_autoencoder

AE = dict(epochs=600, batch=32, lr=1e-3, patience=100)


def reconstruction_rows(years=5, seed=42, **ae):
    spec = hydrology_spec(years=years, seed=seed)
    data = generate_individual(spec, StretchProfile("default"))
    stats = fit_scaler(data)
    scaled = scale(data, stats)
    rows = []
    for n in spec.graph.ids:
        m = RepresentationModel(n, spec.graph.node(n).dim, seed=0)
        m.scale_stats(stats)
        t = time.time()
        train_autoencoder(m, scaled, AEConfig(seed=0, **{**AE, **ae}))
        ev = evaluate(m, scaled.values[n], scaled.masks[n], scaled.months)
        rows.append({"node": n, "length": m.dim, "seconds": time.time() - t, **ev})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--years", type=int, default=5)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--epochs", type=int, default=AE["epochs"])
    a = ap.parse_args()
    rows = reconstruction_rows(a.years, a.seed, epochs=a.epochs)
    print("Node,Length,RMSE (scaled),RMSE (original),BCE (mask),seconds")
    for r in rows:
        print(f"{r['node']},{r['length']},{r['rmse_scaled']:.4f},{r['rmse_original']:.4f},{r['bce_mask']:.4f},"
              f"{r['seconds']:.0f}")
    others = [r["rmse_scaled"] for r in rows if r["node"] != "F"]
    f = next(r["rmse_scaled"] for r in rows if r["node"] == "F")
    print(f"F / median(others) = {f / statistics.median(others):.2f}")


if __name__ == "__main__":
    main()
