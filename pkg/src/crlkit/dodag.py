"""do-DAG data model: nodes with dimensionalities, tiered edges, validation, ordering."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union


class GraphError(ValueError):
    """Raised when an operation needs a valid DAG and the graph is not one."""


@dataclass(frozen=True)
class NodeSpec:
    id: str
    dim: int
    label: str = ""
    zero_inflated: bool = False
    seasonal_window: Optional[Tuple[int, int]] = None  # inclusive months, may wrap (12, 3)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"node {self.id}: dim must be >= 1")
        if not self.id or any(c.isspace() for c in self.id):
            raise ValueError(f"node id must be a single token, got {self.id!r}")
        if self.seasonal_window is not None:
            lo, hi = self.seasonal_window
            if not (1 <= lo <= 12 and 1 <= hi <= 12):
                raise ValueError(f"node {self.id}: seasonal window months out of range")
            object.__setattr__(self, "seasonal_window", (int(lo), int(hi)))

    def in_season(self, month: int) -> bool:
        if self.seasonal_window is None:
            return True
        lo, hi = self.seasonal_window
        return lo <= month <= hi if lo <= hi else (month >= lo or month <= hi)


@dataclass(frozen=True)
class EdgeSpec:
    cause: str
    result: str
    tier: Optional[int] = None

    @property
    def key(self) -> Tuple[str, str]:
        return (self.cause, self.result)

    def __str__(self):
        return f"{self.cause}=>{self.result}"


@dataclass
class ValidationReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class DoDag:
    nodes: Tuple[NodeSpec, ...]
    edges: Tuple[EdgeSpec, ...]

    def __init__(self, nodes: Sequence[NodeSpec], edges: Sequence[EdgeSpec]):
        object.__setattr__(self, "nodes", tuple(nodes))
        object.__setattr__(self, "edges", tuple(edges))

    @property
    def ids(self) -> List[str]:
        return [n.id for n in self.nodes]

    def node(self, nid: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def parents(self, nid: str) -> List[str]:
        return sorted(e.cause for e in self.edges if e.result == nid)

    def children(self, nid: str) -> List[str]:
        return sorted(e.result for e in self.edges if e.cause == nid)

    def edge(self, cause: str, result: str) -> EdgeSpec:
        for e in self.edges:
            if e.cause == cause and e.result == result:
                return e
        raise KeyError((cause, result))

    def has_edge(self, cause: str, result: str) -> bool:
        return any(e.cause == cause and e.result == result for e in self.edges)

    # serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "dim": n.dim, "label": n.label, "zero_inflated": n.zero_inflated,
                       "seasonal_window": list(n.seasonal_window) if n.seasonal_window else None}
                      for n in self.nodes],
            "edges": [{"cause": e.cause, "result": e.result, "tier": e.tier} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DoDag":
        nodes = [NodeSpec(id=n["id"], dim=int(n["dim"]), label=n.get("label", ""),
                          zero_inflated=bool(n.get("zero_inflated", False)),
                          seasonal_window=tuple(n["seasonal_window"]) if n.get("seasonal_window") else None)
                 for n in d["nodes"]]
        edges = [EdgeSpec(e["cause"], e["result"], e.get("tier")) for e in d["edges"]]
        return cls(nodes, edges)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "DoDag":
        return cls.from_dict(json.loads(text))

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DoDag":
        return cls.loads(Path(path).read_text())


def _find_cycle(ids: Sequence[str], adj: Dict[str, List[str]]) -> Optional[List[str]]:
    color = {n: 0 for n in ids}
    for start in sorted(ids):
        if color[start]:
            continue
        path, it = [start], [iter(adj.get(start, []))]
        color[start] = 1
        while path:
            nxt = next(it[-1], None)
            if nxt is None:
                color[path.pop()] = 2
                it.pop()
            elif color[nxt] == 1:
                return path[path.index(nxt):]
            elif color[nxt] == 0:
                color[nxt] = 1
                path.append(nxt)
                it.append(iter(adj.get(nxt, [])))
    return None


def validate_dag(g: DoDag) -> ValidationReport:
    rep = ValidationReport()
    seen = set()
    for n in g.nodes:
        if n.id in seen:
            rep.violations.append(f"duplicate id {n.id}")
        seen.add(n.id)
    adj: Dict[str, List[str]] = {}
    edge_seen = set()
    for e in g.edges:
        if e.cause == e.result:
            rep.violations.append(f"self-loop {e.cause}")
            continue
        missing = [x for x in (e.cause, e.result) if x not in seen]
        if missing:
            rep.violations.append(f"dangling edge {e}: unknown {','.join(missing)}")
            continue
        if e.key in edge_seen:
            rep.violations.append(f"duplicate edge {e}")
        edge_seen.add(e.key)
        adj.setdefault(e.cause, []).append(e.result)
    for k in adj:
        adj[k].sort()
    cyc = _find_cycle(list(seen), adj)
    if cyc:
        rep.violations.append("cycle " + ",".join(cyc))
    if g.nodes and not cyc and not any(not g.parents(n.id) for n in g.nodes):
        rep.violations.append("no root")
    return rep


def _require_valid(g: DoDag) -> None:
    rep = validate_dag(g)
    if not rep.ok:
        raise GraphError("; ".join(rep.violations))


def roots(g: DoDag) -> set:
    _require_valid(g)
    return {n.id for n in g.nodes if not g.parents(n.id)}


def topological_order(g: DoDag) -> List[str]:
    """Kahn's algorithm with a min-heap, so ties break lexicographically."""
    _require_valid(g)
    indeg = {n.id: 0 for n in g.nodes}
    for e in g.edges:
        indeg[e.result] += 1
    heap = [n for n, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in g.children(n):
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order


# The hydrology graph: node lengths and tier-coloured edges of the SWAT benchmark.
HYDROLOGY_NODES = (
    ("A", 5, "Environmental set I (wind, humidity, temperature)", True, None),
    ("B", 4, "Environmental set II (temperature, radiation, precipitation)", True, None),
    ("C", 2, "Evapotranspiration", True, None),
    ("D", 3, "Snowpack", True, (12, 3)),
    ("E", 2, "Soil water", False, None),
    ("F", 4, "Aquifer", True, None),
    ("G", 4, "Surface runoff", True, None),
    ("H", 4, "Lateral flow", True, None),
    ("I", 3, "Baseflow", True, None),
    ("J", 1, "Streamflow", True, None),
)

HYDROLOGY_EDGES = (
    ("A", "C", 1), ("B", "D", 1), ("C", "D", 1), ("C", "G", 1),
    ("D", "G", 1), ("G", "J", 1), ("D", "H", 1), ("H", "J", 1),
    ("B", "E", 2), ("E", "G", 2), ("E", "H", 2), ("C", "E", 2),
    ("E", "F", 3), ("F", "I", 3), ("I", "J", 3), ("D", "I", 3),
)


def hydrology_graph() -> DoDag:
    nodes = [NodeSpec(i, d, lab, zi, win) for i, d, lab, zi, win in HYDROLOGY_NODES]
    edges = [EdgeSpec(c, r, t) for c, r, t in HYDROLOGY_EDGES]
    return DoDag(nodes, edges)
