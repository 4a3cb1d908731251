import itertools

import pytest
from hypothesis import given

from crlkit.dodag import (DoDag, EdgeSpec, GraphError, NodeSpec, hydrology_graph, roots, topological_order,
                          validate_dag)

from conftest import chain, random_graphs


def brute_force_is_dag(g: DoDag) -> bool:
    """Acyclic iff some permutation of the nodes puts every cause first."""
    for perm in itertools.permutations(g.ids):
        pos = {n: i for i, n in enumerate(perm)}
        if all(pos[e.cause] < pos[e.result] for e in g.edges):
            return True
    return False


def test_hydrology_graph_valid():
    g = hydrology_graph()
    assert len(g.nodes) == 10 and len(g.edges) == 16
    assert validate_dag(g).violations == []


def test_self_loop_reported():
    g = DoDag([NodeSpec("A", 1)], [EdgeSpec("A", "A")])
    assert any("self-loop" in v for v in validate_dag(g).violations)


def test_three_cycle_reported():
    g = DoDag([NodeSpec(i, 1) for i in "ABC"], [EdgeSpec("A", "B"), EdgeSpec("B", "C"), EdgeSpec("C", "A")])
    assert "cycle A,B,C" in validate_dag(g).violations


def test_duplicates_and_dangling():
    g = DoDag([NodeSpec("A", 1), NodeSpec("A", 2)], [EdgeSpec("A", "Z")])
    v = validate_dag(g).violations
    assert any("duplicate id A" in x for x in v)
    assert any("dangling" in x for x in v)


def test_node_spec_checks():
    with pytest.raises(ValueError):
        NodeSpec("A", 0)
    with pytest.raises(ValueError):
        NodeSpec("A B", 1)
    with pytest.raises(ValueError):
        NodeSpec("A", 1, seasonal_window=(0, 3))


def test_seasonal_window_wraps():
    d = hydrology_graph().node("D")
    assert [m for m in range(1, 13) if d.in_season(m)] == [1, 2, 3, 12]


def test_roots():
    assert roots(hydrology_graph()) == {"A", "B"}
    assert roots(DoDag([NodeSpec("X", 3)], [])) == {"X"}
    assert roots(chain("A", "B", "C")) == {"A"}


def test_roots_rejects_invalid():
    g = DoDag([NodeSpec(i, 1) for i in "AB"], [EdgeSpec("A", "B"), EdgeSpec("B", "A")])
    with pytest.raises(GraphError):
        roots(g)


def test_topological_examples():
    assert topological_order(chain("A", "B", "C")) == ["A", "B", "C"]
    diamond = DoDag([NodeSpec(i, 1) for i in "DCBA"],
                    [EdgeSpec("A", "B"), EdgeSpec("A", "C"), EdgeSpec("B", "D"), EdgeSpec("C", "D")])
    assert topological_order(diamond) == ["A", "B", "C", "D"]


def test_hydrology_order_constraints():
    g = hydrology_graph()
    order = topological_order(g)
    assert set(order[:2]) == {"A", "B"} and order[-1] == "J"
    pos = {n: i for i, n in enumerate(order)}
    assert all(pos[e.cause] < pos[e.result] for e in g.edges)


def test_hydrology_parents():
    g = hydrology_graph()
    assert g.parents("G") == ["C", "D", "E"]
    assert g.parents("J") == ["G", "H", "I"]
    assert g.children("E") == ["F", "G", "H"]


@given(random_graphs(acyclic=False))
def test_validate_matches_brute_force(g):
    assert validate_dag(g).ok == brute_force_is_dag(g)


@given(random_graphs(acyclic=False))
def test_validate_iff_topological_order(g):
    try:
        topological_order(g)
        sorted_ok = True
    except GraphError:
        sorted_ok = False
    assert sorted_ok == validate_dag(g).ok


@given(random_graphs())
def test_order_respects_edges_and_roots(g):
    order = topological_order(g)
    pos = {n: i for i, n in enumerate(order)}
    assert sorted(order) == sorted(g.ids)
    assert all(pos[e.cause] < pos[e.result] for e in g.edges)
    for r in roots(g):
        for d in g.children(r):
            assert pos[r] < pos[d]


@given(random_graphs())
def test_order_is_lexicographic_kahn(g):
    """At each step the smallest available id comes next."""
    order = topological_order(g)
    placed = set()
    for n in order:
        avail = [m for m in g.ids if m not in placed and set(g.parents(m)) <= placed]
        assert n == min(avail)
        placed.add(n)


@given(random_graphs(acyclic=False))
def test_json_round_trip(g):
    assert DoDag.loads(g.dumps()) == g


def test_file_round_trip(tmp_path):
    g = hydrology_graph()
    assert DoDag.load(g.save(tmp_path / "g.json")) == g
