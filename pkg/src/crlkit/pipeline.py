"""End-to-end runs: configuration, artifact layout and the training/discovery steps.

Every step reads and writes under ``<runs_dir>/<name>/``::

    config.json
    data/            node CSVs, mask CSVs, graph.json, manifest.json
    models/          <node>.ae.ckpt, <causes>-<result>.effect.ckpt, chain-*/
    reports/         reconstruction.csv, effects.csv, discovery.csv, plots/*.svg
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .datagen import (Dataset, GenerationError, StretchProfile, fit_scaler, generate_individual, load_dataset,
                      save_dataset, scale, spec_for_graph)
from .discovery import DiscoveryConfig, DiscoveryResult, EffectKld, discover, write_discovery_csv
from .dodag import DoDag, hydrology_graph
from .effects import (ChainedEffect, EffectConfig, EffectModel, EffectReport, FineTuneConfig, FineTuneReport,
                      fine_tune, load_effect, save_effect, stack, train_effect)
from .metrics import EvalRow, nse, read_eval_rows, rmse, write_eval_rows
from .represent import (AEConfig, ReconstructionReport, RepresentationModel, evaluate, load_model, save_model,
                        train_autoencoder)

log = logging.getLogger(__name__)

CONFIG_ENV = "CRLKIT_CONFIG"


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    name: str = "default"
    runs_dir: str = "runs"
    graph_file: Optional[str] = None  # None: the built-in hydrology graph
    years: int = 6
    seed: int = 0
    train_frac: float = 0.8
    latent_dim: int = 16
    hidden: int = 64
    keys_per_pair: int = 1
    strict_rank: bool = False
    ae_epochs: int = 300
    ae_lr: float = 1e-3
    ae_batch: int = 64
    ae_patience: int = 30
    window: int = 30
    effect_hidden: int = 32
    effect_iterations: int = 800
    effect_lr: float = 3e-3
    finetune_iterations: int = 200
    finetune_lr: float = 1e-3
    mode: str = "ordering"
    strict_alg1: bool = False
    gain_threshold: float = 0.0

    def __post_init__(self):
        if self.years < 1:
            raise ConfigError("years must be positive")
        if not 0 < self.train_frac <= 1:
            raise ConfigError("train_frac must be in (0, 1]")
        if self.mode not in ("ordering", "open"):
            raise ConfigError(f"mode must be 'ordering' or 'open', got {self.mode!r}")
        for k in ("latent_dim", "hidden", "keys_per_pair", "ae_epochs", "ae_batch", "window",
                  "effect_hidden", "effect_iterations"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        if self.graph_file is not None and not Path(self.graph_file).is_file():
            raise ConfigError(f"graph file not found: {self.graph_file}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            d = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{p}: expected a JSON object")
        return cls.from_dict(d)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return self.from_dict({**asdict(self), **kw})

    # derived step configs
    def ae_config(self) -> AEConfig:
        return AEConfig(epochs=self.ae_epochs, lr=self.ae_lr, batch=self.ae_batch, seed=self.seed,
                        patience=self.ae_patience)

    def effect_config(self) -> EffectConfig:
        return EffectConfig(window=self.window, hidden=self.effect_hidden, iterations=self.effect_iterations,
                            lr=self.effect_lr, seed=self.seed, train_frac=self.train_frac)

    def finetune_config(self) -> FineTuneConfig:
        return FineTuneConfig(iterations=self.finetune_iterations, lr=self.finetune_lr, seed=self.seed,
                              train_frac=self.train_frac)

    def discovery_config(self) -> DiscoveryConfig:
        return DiscoveryConfig(mode=self.mode, gain_threshold=self.gain_threshold,
                               strict_alg1=self.strict_alg1, seed=self.seed)


def resolve_config(path: Optional[str] = None) -> RunConfig:
    """Config from ``path``, else from ``$CRLKIT_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    return RunConfig.load(path) if path else RunConfig()


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @classmethod
    def of(cls, cfg: RunConfig) -> "RunPaths":
        return cls(Path(cfg.runs_dir) / cfg.name)

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    def ae(self, node: str) -> Path:
        return self.models / f"{node}.ae.ckpt"

    def effect(self, causes: Sequence[str], result: str) -> Path:
        return self.models / f"{'+'.join(sorted(causes))}-{result}.effect.ckpt"

    def chain(self, nodes: Sequence[str]) -> Path:
        return self.models / f"chain-{'-'.join(nodes)}"

    def require(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise MissingArtifact(f"missing {what}: {path}")
        return path


def load_graph(cfg: RunConfig) -> DoDag:
    return DoDag.load(cfg.graph_file) if cfg.graph_file else hydrology_graph()


# steps ----------------------------------------------------------------------------

def generate(cfg: RunConfig) -> Path:
    paths = RunPaths.of(cfg)
    spec = spec_for_graph(load_graph(cfg), years=cfg.years, seed=cfg.seed)
    d = generate_individual(spec, StretchProfile("default"))
    save_dataset(d, paths.data, seed=cfg.seed, extra={"years": cfg.years})
    paths.root.mkdir(parents=True, exist_ok=True)
    (paths.root / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True))
    return paths.data


def load_scaled(cfg: RunConfig) -> Tuple[Dataset, Dataset]:
    """The raw dataset and its scaled copy (scaler fitted on the training split)."""
    paths = RunPaths.of(cfg)
    paths.require(paths.data / "manifest.json", "dataset (run `generate` first)")
    d = load_dataset(paths.data)
    return d, scale(d, fit_scaler(d.split(cfg.train_frac)[0]))


def _fit_one(args) -> Tuple[RepresentationModel, ReconstructionReport]:
    node, dim, cfg, train = args
    kw = {}
    if cfg.strict_rank:
        kw = dict(strict_rank=True, rank_matrix=train.values[node])
    m = RepresentationModel(node, dim, cfg.latent_dim, cfg.hidden, cfg.keys_per_pair, seed=cfg.seed, **kw)
    rep = train_autoencoder(m, train, cfg.ae_config())
    return m, rep


def fit_autoencoders(cfg: RunConfig, data: Dataset, nodes: Sequence[str],
                     jobs: int = 1) -> Dict[str, Tuple[RepresentationModel, ReconstructionReport]]:
    """Train one autoencoder per node on the training split; independent tasks."""
    train = data.split(cfg.train_frac)[0]
    tasks = [(n, data.graph.node(n).dim, cfg, train) for n in nodes]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_fit_one, tasks))
    else:
        out = [_fit_one(t) for t in tasks]
    return dict(zip(nodes, out))


def upsert_rows(path: Path, rows: Sequence[EvalRow]) -> Path:
    """Replace rows with matching subjects, keep the rest, sort by subject."""
    old = read_eval_rows(path) if path.exists() else []
    new = {r.subject: r for r in old}
    new.update({r.subject: r for r in rows})
    return write_eval_rows(path, [new[k] for k in sorted(new)])


def train_autoencoders(cfg: RunConfig, nodes: Sequence[str], jobs: int = 1) -> List[EvalRow]:
    raw, ds = load_scaled(cfg)
    unknown = [n for n in nodes if n not in raw.values]
    if unknown:
        raise ConfigError(f"unknown node ids: {', '.join(unknown)}")
    stats = fit_scaler(raw.split(cfg.train_frac)[0])
    paths = RunPaths.of(cfg)
    rows = []
    for n, (m, rep) in fit_autoencoders(cfg, ds, nodes, jobs).items():
        m.scale_stats(stats)
        save_model(m, paths.ae(n))
        tr = ds.split(cfg.train_frac)[0]
        ev = evaluate(m, tr.values[n], tr.masks[n], tr.months)
        rows.append(EvalRow(n, ev["rmse_scaled"], ev["rmse_original"], ev["bce_mask"]))
    upsert_rows(paths.reports / "reconstruction.csv", rows)
    return rows


def load_autoencoders(cfg: RunConfig, nodes: Sequence[str]) -> Dict[str, RepresentationModel]:
    paths = RunPaths.of(cfg)
    return {n: load_model(paths.require(paths.ae(n), f"autoencoder for {n} (run `train-ae`)")) for n in nodes}


def effect_row(subject: str, rep: EffectReport) -> EvalRow:
    return EvalRow(subject, rep.effect_rmse_scaled, rep.effect_rmse_original, rep.effect_bce,
                   np.nan if rep.effect_nse is None else rep.effect_nse, rep.kld)


def train_pair(cfg: RunConfig, causes: Sequence[str], result: str,
               data: Optional[Dataset] = None) -> Tuple[EffectModel, EffectReport]:
    """Train ``causes => result`` from the saved autoencoders and checkpoint it."""
    if data is None:
        data = load_scaled(cfg)[1]
    for n in list(causes) + [result]:
        if n not in data.values:
            raise ConfigError(f"unknown node id {n!r}")
    models = load_autoencoders(cfg, list(causes) + [result])
    e, rep = train_effect([models[c] for c in causes], models[result], data, cfg.effect_config())
    paths = RunPaths.of(cfg)
    save_effect(e, paths.effect(causes, result))
    upsert_rows(paths.reports / "effects.csv", [effect_row(f"{','.join(sorted(causes))}=>{result}", rep)])
    return e, rep


def chain_nse(chain: ChainedEffect, data: Dataset, rows: slice) -> Optional[float]:
    """End-to-end NSE of the chain's exit prediction on ``rows``, in original units."""
    v = chain.predict(chain.entrance_latents(data))
    m = chain.model_for(chain.exit)
    _, mp, rec = m.decode(np.nan_to_num(v))
    y, mask = data.values[chain.exit], data.masks[chain.exit]
    ok = ~np.isnan(v).any(axis=1)
    ok[:rows.start or 0] = False
    if not ok.any():
        return None
    pred = m.unscale(rec[ok], (mp[ok] > 0.5).astype(float))
    return nse(pred.sum(axis=1), m.unscale(y[ok], mask[ok]).sum(axis=1))


def build_chain(effects: Sequence[EffectModel]) -> ChainedEffect:
    """Stack effects that form a simple path, in order."""
    chain = effects[0]
    for e in effects[1:]:
        chain = stack(chain, e, "result-bottom/result-top")
    return chain


def stack_chain(cfg: RunConfig, nodes: Sequence[str],
                data: Optional[Dataset] = None) -> Tuple[ChainedEffect, List[FineTuneReport], Optional[float]]:
    """Stack pair effects along ``nodes`` and fine-tune every junction.

    Pair effects are loaded when checkpointed, otherwise trained first.
    """
    if len(nodes) < 3:
        raise ConfigError("a chain needs at least three nodes")
    if data is None:
        data = load_scaled(cfg)[1]
    paths = RunPaths.of(cfg)
    effects = []
    for c, r in zip(nodes, nodes[1:]):
        p = paths.effect([c], r)
        effects.append(load_effect(p) if p.exists() else train_pair(cfg, [c], r, data)[0])
    chain = build_chain(effects)
    reports = [fine_tune(chain, data, j, cfg.finetune_config()) for j in list(chain.junctions)]
    cut = int(round(data.n_days * cfg.train_frac))
    score = chain_nse(chain, data, slice(cut if cut < data.n_days else 0, None))
    out = paths.chain(nodes)
    out.mkdir(parents=True, exist_ok=True)
    for i, e in enumerate(chain.effects):
        save_effect(e, out / f"{i:02d}.effect.ckpt")
    (out / "chain.json").write_text(json.dumps({
        "nodes": list(nodes), "modes": chain.modes, "entrance": list(chain.entrance), "exit": chain.exit,
        "junctions": chain.junctions, "n_effects": len(chain.effects),
        "finetune": [{"junction": r.junction, "rmse_before": r.rmse_before, "rmse_after": r.rmse_after}
                     for r in reports]}, indent=2, sort_keys=True))
    upsert_rows(paths.reports / "effects.csv",
                [EvalRow("=>".join(nodes), nse=np.nan if score is None else score)])
    return chain, reports, score


def load_chain(path: Path) -> ChainedEffect:
    meta = json.loads((path / "chain.json").read_text())
    effects = [load_effect(path / f"{i:02d}.effect.ckpt") for i in range(meta["n_effects"])]
    return ChainedEffect(effects, meta["modes"], tuple(meta["entrance"]), meta["exit"], meta["junctions"])


def run_discovery(cfg: RunConfig, data: Optional[Dataset] = None,
                  models: Optional[Mapping[str, RepresentationModel]] = None) -> DiscoveryResult:
    """Greedy discovery over the run graph's candidate edges; writes discovery.csv."""
    if data is None:
        data = load_scaled(cfg)[1]
    g = data.graph if data.graph is not None else load_graph(cfg)
    if models is None:
        models = load_autoencoders(cfg, g.ids)
    source = EffectKld(models, data, cfg.effect_config())
    res = discover(g, source, cfg.discovery_config())
    write_discovery_csv(res, RunPaths.of(cfg).reports / "discovery.csv")
    return res


# reports --------------------------------------------------------------------------

def _original_sum(m: RepresentationModel, latents: np.ndarray) -> np.ndarray:
    """Decode latents to original units and sum the columns; NaN rows stay NaN."""
    bad = ~np.isfinite(latents).all(axis=1)
    _, mp, rec = m.decode(np.nan_to_num(latents))
    out = m.unscale(rec, (mp > 0.5).astype(float)).sum(axis=1)
    out[bad] = np.nan
    return out


def node_series(cfg: RunConfig, node: str, raw: Dataset, ds: Dataset) -> Dict[str, np.ndarray]:
    """Ground truth, autoencoder reconstruction and every checkpointed effect into ``node``."""
    from .effects import effect_latents
    paths = RunPaths.of(cfg)
    m = load_model(paths.require(paths.ae(node), f"autoencoder for {node} (run `train-ae`)"))
    out = {"observed": raw.values[node].sum(axis=1),
           "autoencoder": _original_sum(m, m.encode(ds.values[node], ds.months))}
    for p in sorted(paths.models.glob(f"*-{node}.effect.ckpt")):
        e = load_effect(p)
        out["effect " + e.key] = _original_sum(e.result, effect_latents(e, ds))
    for d in sorted(paths.models.glob("chain-*")):
        meta = json.loads((d / "chain.json").read_text())
        if meta["exit"] != node:
            continue
        chain = load_chain(d)
        v = chain.predict(chain.entrance_latents(ds))
        out["stacked " + "=>".join(meta["nodes"])] = _original_sum(chain.model_for(node), v)
    return out


def node_report(cfg: RunConfig, node: str, year: int) -> Path:
    from .plots import write_chart
    raw, ds = load_scaled(cfg)
    if node not in raw.values:
        raise ConfigError(f"unknown node id {node!r}")
    rows = raw.calendar[:, 0] == year
    if not rows.any():
        years = sorted(set(raw.calendar[:, 0].tolist()))
        raise ConfigError(f"year {year} not in dataset (years {years[0]}..{years[-1]})")
    series = {k: v[rows] for k, v in node_series(cfg, node, raw, ds).items()}
    obs = series["observed"]
    notes = {}
    for k, v in series.items():
        ok = np.isfinite(v)
        if k != "observed" and ok.any():
            s = nse(v[ok], obs[ok])
            notes[k] = "NSE n/a" if s is None else f"NSE {s:.3f}"
    path = RunPaths.of(cfg).reports / "plots" / f"{node}_year{year}.svg"
    return write_chart(path, series, f"node {node}, year {year}", notes)


def write_tables(cfg: RunConfig) -> List[Path]:
    """Reconstruction and effect tables with node lengths and human-readable headers."""
    import csv
    paths = RunPaths.of(cfg)
    out = []
    rec = paths.reports / "reconstruction.csv"
    if rec.exists():
        g = load_dataset(paths.data).graph if (paths.data / "manifest.json").exists() else load_graph(cfg)
        p = paths.reports / "reconstruction_table.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Node", "Length", "RMSE (scaled)", "RMSE (original)", "BCE (mask)"])
            for r in read_eval_rows(rec):
                w.writerow([r.subject, g.node(r.subject).dim, f"{r.rmse_scaled:.4f}",
                            f"{r.rmse_original:.4f}", f"{r.bce_mask:.4f}"])
        out.append(p)
    eff = paths.reports / "effects.csv"
    if eff.exists():
        p = paths.reports / "effect_table.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Effect", "KLD (latent)", "RMSE (scaled)", "RMSE (original)", "BCE (mask)", "NSE"])
            for r in read_eval_rows(eff):
                w.writerow([r.subject] + [f"{x:.4f}" for x in (r.kld, r.rmse_scaled, r.rmse_original,
                                                              r.bce_mask, r.nse)])
        out.append(p)
    return out
