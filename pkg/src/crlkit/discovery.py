"""Greedy causal discovery in latent space scored by KLD gain.

Each round scores every admissible candidate edge ``p => n`` by

    gain = K(beta + p, n) - K(beta, n)

where ``beta`` holds the parents already selected for ``n`` and ``K`` is the
KL divergence between the Gaussian fits of predicted and encoded latents of
``n``. The smallest gain wins. Selecting an edge into ``n`` bumps ``n``'s
generation, which makes every cached ``K(., n)`` stale.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .datagen import Dataset, derive_seed
from .dodag import DoDag, GraphError, roots, validate_dag
from .effects import EffectConfig, EffectModel, EffectReport, effect_latents, latent_kld, train_effect
from .represent import RepresentationModel

log = logging.getLogger(__name__)

Beta = Tuple[str, ...]


def canonical(beta) -> Beta:
    return tuple(sorted(set(beta)))


@dataclass
class KldEntry:
    value: float
    generation: int
    effect: Optional[EffectModel] = None
    report: Optional[EffectReport] = None
    floored: bool = False


class KldCache:
    """``(beta, n) -> K`` with generation-based staleness per result node."""

    def __init__(self):
        self.entries: Dict[Tuple[Beta, str], KldEntry] = {}
        self.generation: Dict[str, int] = {}
        self.reads: List[Tuple[int, Beta, str, int]] = []  # (round, beta, n, entry generation)

    def gen(self, n: str) -> int:
        return self.generation.get(n, 0)

    def is_fresh(self, beta, n) -> bool:
        e = self.entries.get((canonical(beta), n))
        return e is not None and e.generation == self.gen(n)

    def get(self, beta, n, round_: int = -1) -> KldEntry:
        key = (canonical(beta), n)
        e = self.entries.get(key)
        if e is None or e.generation != self.gen(n):
            raise KeyError(f"no fresh K for {key}")
        self.reads.append((round_, key[0], n, e.generation))
        return e

    def put(self, beta, n, entry: KldEntry) -> None:
        entry.generation = self.gen(n)
        self.entries[(canonical(beta), n)] = entry

    def mark_stale(self, n: str) -> None:
        self.generation[n] = self.gen(n) + 1

    def stale_keys(self) -> List[Tuple[Beta, str]]:
        return sorted(k for k, e in self.entries.items() if e.generation != self.gen(k[1]))


class TableKld:
    """K values from a fixed table (tests and what-if runs)."""

    def __init__(self, table: Mapping[Tuple[Sequence[str], str], float]):
        self.table = {(canonical(b), n): float(v) for (b, n), v in table.items()}

    def __call__(self, beta: Beta, n: str) -> KldEntry:
        try:
            return KldEntry(self.table[(canonical(beta), n)], 0)
        except KeyError:
            raise KeyError(f"K table has no entry for {canonical(beta)} => {n}") from None

    def selected(self, beta: Beta, n: str, entry: KldEntry) -> None:
        pass


class EffectKld:
    """K values from trained effects over a scaled dataset.

    ``models`` holds the current representation of every node. When an edge
    into ``n`` is selected, ``n``'s representation is replaced by the result
    autoencoder of the winning effect, so later scores into ``n`` are
    recomputed against it.
    """

    def __init__(self, models: Mapping[str, RepresentationModel], data: Dataset,
                 config: EffectConfig = EffectConfig(), refresh: bool = True):
        self.models = dict(models)
        self.data = data
        self.config = config
        self.refresh = refresh

    def __call__(self, beta: Beta, n: str) -> KldEntry:
        missing = [x for x in beta + (n,) if x not in self.models]
        if missing:
            raise KeyError(f"untrained autoencoder for {missing}")
        cfg = replace(self.config, seed=derive_seed(self.config.seed, "".join(beta), n) % (2 ** 31))
        e, rep = train_effect([self.models[b] for b in beta], self.models[n], self.data, cfg)
        return KldEntry(rep.kld, 0, e, rep, rep.kld_floored)

    def selected(self, beta: Beta, n: str, entry: KldEntry) -> None:
        if self.refresh and entry.effect is not None:
            self.models[n] = entry.effect.result.copy(prefix="")

    def recompute(self, entry: KldEntry) -> float:
        """K from a stored effect checkpoint, as when it was scored."""
        e = entry.effect
        start = int(round(self.data.n_days * self.config.train_frac))
        start = start if start < self.data.n_days else 0
        r = e.result
        v = effect_latents(e, self.data)[start:]
        h = r.encode(self.data.values[r.node], self.data.months)[start:]
        return latent_kld(v, h)[0]


def kld_metric(beta, n: str, source, cache: KldCache, round_: int = -1) -> float:
    """Fresh ``K(beta, n)``, training (or looking up) as needed. ``K(∅, n) = 0``."""
    beta = canonical(beta)
    if not beta:
        return 0.0
    if not cache.is_fresh(beta, n):
        cache.put(beta, n, source(beta, n))
    return cache.get(beta, n, round_).value


@dataclass
class DiscoveryConfig:
    mode: str = "ordering"  # or "open"
    gain_threshold: float = 0.0
    strict_alg1: bool = False
    seed: int = 0
    report_pair_kld: bool = True

    def __post_init__(self):
        if self.mode not in ("ordering", "open"):
            raise ValueError(f"unknown discovery mode {self.mode!r}")


@dataclass
class SelectedEdge:
    round: int
    cause: str
    result: str
    kld: float  # pair K({cause}, result)
    gain: float
    beta: Beta
    joint_kld: float  # K(beta + cause, result)
    reachable: Tuple[str, ...]

    @property
    def name(self) -> str:
        return f"{self.cause}=>{self.result}"


@dataclass
class DiscoveryResult:
    edges: List[SelectedEdge] = field(default_factory=list)
    reachable_trace: List[Tuple[str, ...]] = field(default_factory=list)
    status: str = "complete"
    diagnostic: str = ""
    config: Dict = field(default_factory=dict)
    reads: List[Tuple[int, Beta, str, int]] = field(default_factory=list)
    selections: List[Tuple[int, str, int]] = field(default_factory=list)  # (round, result, new generation)

    def order(self) -> List[Tuple[str, str]]:
        return [(e.cause, e.result) for e in self.edges]

    def staleness_violations(self) -> List[str]:
        """Reads that used a K computed before the latest selection into its result."""
        sel = sorted(self.selections)
        out = []
        for rnd, beta, n, gen in self.reads:
            current = 0
            for srnd, sn, sgen in sel:
                if sn == n and srnd < rnd:
                    current = sgen
            if gen != current:
                out.append(f"round {rnd}: K({','.join(beta)};{n}) generation {gen} < {current}")
        return out


def _candidates(g: DoDag, mode: str) -> List[Tuple[str, str]]:
    if mode == "ordering":
        return sorted(e.key for e in g.edges)
    ids = g.ids
    return [(p, n) for p in sorted(ids) for n in sorted(ids) if p != n]


def _creates_cycle(selected: Sequence[Tuple[str, str]], edge: Tuple[str, str]) -> bool:
    p, n = edge
    adj: Dict[str, List[str]] = {}
    for a, b in selected:
        adj.setdefault(a, []).append(b)
    stack, seen = [n], set()
    while stack:
        x = stack.pop()
        if x == p:
            return True
        if x in seen:
            continue
        seen.add(x)
        stack.extend(adj.get(x, ()))
    return False


def discover(g_candidates: DoDag, source, config: DiscoveryConfig = DiscoveryConfig(),
             cache: Optional[KldCache] = None) -> DiscoveryResult:
    """Greedy edge selection by minimal KLD gain.

    ``source(beta, n)`` returns a :class:`KldEntry`; use :class:`EffectKld`
    for trained effects or :class:`TableKld` for a fixed table.
    """
    rep = validate_dag(g_candidates)
    if config.mode == "ordering" and not rep.ok:
        raise GraphError("; ".join(rep.violations))
    cache = cache or KldCache()
    reach = set(roots(g_candidates)) if rep.ok else {n.id for n in g_candidates.nodes
                                                      if not g_candidates.parents(n.id)}
    cands = _candidates(g_candidates, config.mode)
    cand_parents: Dict[str, List[str]] = {}
    for p, n in cands:
        cand_parents.setdefault(n, []).append(p)
    chosen: List[Tuple[str, str]] = []
    parents: Dict[str, List[str]] = {}
    res = DiscoveryResult(config={"mode": config.mode, "gain_threshold": config.gain_threshold,
                                  "strict_alg1": config.strict_alg1, "seed": config.seed})
    res.reachable_trace.append(tuple(sorted(reach)))
    rnd = 0
    while len(chosen) < len(cands):
        rnd += 1
        scored = []
        for p, n in cands:
            if (p, n) in chosen or p not in reach:
                continue
            if config.strict_alg1:
                if n in reach:
                    continue
                beta = canonical(q for q in cand_parents[n] if q in reach and q != p)
            else:
                if config.mode == "open" and _creates_cycle(chosen, (p, n)):
                    continue
                beta = canonical(parents.get(n, ()))
            joint = kld_metric(beta + (p,), n, source, cache, rnd)
            base = kld_metric(beta, n, source, cache, rnd)
            scored.append((joint - base, n, p, beta, joint))
        if not scored:
            left = [f"{p}=>{n}" for p, n in cands if (p, n) not in chosen]
            if config.mode == "ordering":
                res.status = "partial"
                res.diagnostic = (f"no selectable edge in round {rnd}; unreachable from roots "
                                  f"{sorted(reach)}: {', '.join(left)}")
            break
        scored.sort(key=lambda s: (s[0], s[1], s[2]))
        gain, n, p, beta, joint = scored[0]
        if config.mode == "open" and gain > config.gain_threshold:
            res.status = "threshold"
            res.diagnostic = f"minimum gain {gain:.6g} above threshold {config.gain_threshold:.6g}"
            break
        pair = joint if not beta else (kld_metric((p,), n, source, cache, rnd)
                                       if config.report_pair_kld else float("nan"))
        entry = cache.entries[(canonical(beta + (p,)), n)]
        if hasattr(source, "selected"):
            source.selected(canonical(beta + (p,)), n, entry)
        chosen.append((p, n))
        parents.setdefault(n, []).append(p)
        reach.add(n)
        cache.mark_stale(n)
        res.selections.append((rnd, n, cache.gen(n)))
        res.edges.append(SelectedEdge(rnd, p, n, pair, gain, beta, joint, tuple(sorted(reach))))
        res.reachable_trace.append(tuple(sorted(reach)))
        log.info("round %d: %s=>%s gain %.4f", rnd, p, n, gain)
    res.reads = list(cache.reads)
    return res


# evaluation -----------------------------------------------------------------

@dataclass
class TierScore:
    precedence: float
    mean_rank: Dict[int, float]
    pairs: int
    skipped: int


def tier_score(result: Union[DiscoveryResult, Sequence[Tuple[str, str]]], g_truth: DoDag) -> TierScore:
    """Fraction of (tier i, tier j > i) edge pairs found in tier order."""
    order = result.order() if isinstance(result, DiscoveryResult) else list(result)
    tiers = {e.key: e.tier for e in g_truth.edges}
    ranked, skipped = [], 0
    for rank, key in enumerate(order):
        t = tiers.get(tuple(key))
        if t is None:
            skipped += 1
            continue
        ranked.append((rank, t))
    good = total = 0
    for (r1, t1), (r2, t2) in itertools.combinations(ranked, 2):
        if t1 == t2:
            continue
        total += 1
        first_lower = t1 < t2 if r1 < r2 else t2 < t1
        good += first_lower
    by: Dict[int, List[int]] = {}
    for r, t in ranked:
        by.setdefault(t, []).append(r)
    return TierScore(good / total if total else float("nan"),
                     {t: float(np.mean(v)) for t, v in sorted(by.items())}, total, skipped)


# reports ----------------------------------------------------------------------

CSV_COLUMNS = ("Round", "Edge", "KLD", "Gain", "ReachableSet")


def discovery_csv(result: DiscoveryResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in result.edges:
        w.writerow([e.round, e.name, repr(float(e.kld)), repr(float(e.gain)), " ".join(e.reachable)])
    return buf.getvalue()


def write_discovery_csv(result: DiscoveryResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(discovery_csv(result))
    return path


def read_discovery_csv(path) -> List[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
