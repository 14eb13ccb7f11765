import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalpipe.dataset import Dataset
from causalpipe.discovery import (
    DiscoveryConstraints,
    Skeleton,
    benchmark_discovery,
    bootstrap_confidences,
    cpdag_best_orientation,
    oracle_test,
    parse_constraints,
    pc,
    pc_orient,
    pc_skeleton,
    shd,
    threshold,
    write_benchmark_csv,
)
from causalpipe.graph import CausalGraph, parse_graph
from causalpipe.scm import parse_scm, random_linear_gaussian, sample

import oracles
from gen import digraphs, random_dag


def skeleton_pairs(g):
    return {frozenset(e) for e in g.directed}


def v_structures(g):
    out = set()
    for b in g.nodes:
        for a, c in itertools.combinations(g.parents(b), 2):
            if not g.adjacent(a, c):
                out.add((frozenset((a, c)), b))
    return out


def cpdag_v_structures(cp):
    adj = {frozenset(e) for e in cp.directed} | set(cp.undirected)
    out = set()
    for b in cp.nodes:
        pa = [a for a in cp.nodes if (a, b) in cp.directed]
        for a, c in itertools.combinations(pa, 2):
            if frozenset((a, c)) not in adj:
                out.add((frozenset((a, c)), b))
    return out


COLLIDER = "A = linear() + gaussian(1)\nC = linear() + gaussian(1)\nB = linear(A:1, C:1) + gaussian(1)\n"
FORK = "B = linear() + gaussian(1)\nA = linear(B:1) + gaussian(1)\nC = linear(B:1) + gaussian(1)\n"


# -- skeleton and orientation


def test_collider_skeleton_and_orientation():
    ds = sample(parse_scm(COLLIDER), 2000, seed=1).select(["A", "B", "C"])
    skel = pc_skeleton(ds, "fisher_z", 0.01)
    assert skel.edges == {frozenset("AB"), frozenset("BC")}
    assert skel.sepsets[frozenset("AC")] == ()
    cp = pc_orient(skel)
    assert cp.directed == {("A", "B"), ("C", "B")} and not cp.undirected


def test_fork_skeleton_left_undirected():
    ds = sample(parse_scm(FORK), 2000, seed=2).select(["A", "B", "C"])
    skel = pc_skeleton(ds, "fisher_z", 0.01)
    assert skel.edges == {frozenset("AB"), frozenset("BC")}
    assert skel.sepsets[frozenset("AC")] == ("B",)
    cp = pc_orient(skel)
    assert not cp.directed and cp.undirected == skel.edges


def test_all_pairs_absent_gives_empty_skeleton():
    ds = sample(parse_scm(COLLIDER), 300, seed=3)
    cons = DiscoveryConstraints(absent=frozenset(frozenset(p) for p in itertools.combinations(ds.names, 2)))
    skel = pc_skeleton(ds, "fisher_z", 0.01, cons)
    assert not skel.edges and skel.n_tests == 0


def test_tier_orients_undirected_edge():
    skel = Skeleton(("A", "B"), frozenset({frozenset("AB")}), {})
    cp = pc_orient(skel, DiscoveryConstraints(tiers={"A": 0, "B": 1}))
    assert cp.directed == {("A", "B")} and not cp.undirected


def test_meek_does_not_orient_against_constraints():
    # A -> B <- C collider with B - D; R1 would orient B -> D, but D is in an earlier tier
    skel = Skeleton(("A", "B", "C", "D"), frozenset({frozenset("AB"), frozenset("CB"), frozenset("BD")}), {frozenset("AC"): (), frozenset("AD"): ("B",), frozenset("CD"): ("B",)})
    free = pc_orient(skel)
    assert ("B", "D") in free.directed
    cons = DiscoveryConstraints(tiers={"D": 0, "B": 1})
    cp = pc_orient(skel, cons)
    assert ("B", "D") not in cp.directed and ("D", "B") in cp.directed


@settings(max_examples=50)
@given(st.integers(0, 10**6))
def test_oracle_pc_recovers_skeleton_and_v_structures(seed):
    g = random_dag(np.random.default_rng(seed), int(np.random.default_rng(seed).integers(3, 7)), 0.45)
    cp = pc(None, oracle_test(g), alpha=0.5, max_cond_size=None, nodes=g.nodes)
    found = {frozenset(e) for e in cp.directed} | set(cp.undirected)
    assert found == skeleton_pairs(g)
    assert cpdag_v_structures(cp) == v_structures(g)
    # every oriented edge agrees with the truth
    assert set(cp.directed) <= set(g.directed)
    assert not cp.conflicts


def test_oracle_library_of_50():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        g = random_dag(rng, int(rng.integers(2, 7)), 0.5)
        cp = pc(None, oracle_test(g), alpha=0.5, max_cond_size=None, nodes=g.nodes)
        assert {frozenset(e) for e in cp.directed} | set(cp.undirected) == skeleton_pairs(g)
        assert cpdag_v_structures(cp) == v_structures(g)


def test_skeleton_row_order_invariant():
    scm = random_linear_gaussian(6, 7, seed=8)
    ds = sample(scm, 800, seed=4)
    perm = np.random.default_rng(0).permutation(ds.n_rows)
    assert pc_skeleton(ds).edges == pc_skeleton(ds.take(perm)).edges


# -- constraints


def test_parse_constraints():
    c = parse_constraints("# knowledge\nforbid Y T\nabsent A B\ntier C 0\ntier Y 2\n")
    assert not c.allows("Y", "T") and c.allows("T", "Y")
    assert not c.may_be_adjacent("A", "B")
    assert not c.allows("Y", "C") and c.allows("C", "Y")
    with pytest.raises(ValueError):
        parse_constraints("tier C x")
    with pytest.raises(ValueError):
        parse_constraints("forbid A")


def test_unknown_constraint_nodes_rejected():
    ds = sample(parse_scm(COLLIDER), 100, 0)
    with pytest.raises(ValueError, match="unknown"):
        pc_skeleton(ds, constraints=parse_constraints("forbid A Z"))


# -- bootstrap confidences


def test_single_run_votes():
    ds = sample(random_linear_gaussian(5, 5, seed=1), 500, 1)
    m = bootstrap_confidences(ds, runs=1, seed=3)
    assert set(np.unique(m.values)) <= {0.0, 0.5, 1.0}


def test_strong_edge_confident():
    scm = parse_scm("A = linear() + gaussian(1)\nB = linear(A:2) + gaussian(1)")
    m = bootstrap_confidences(sample(scm, 2000, 5), runs=50, seed=0)
    assert m["A", "B"] + m["B", "A"] >= 0.9


def test_forbidden_pair_zero_and_tiers_respected():
    scm = random_linear_gaussian(5, 6, seed=4)
    ds = sample(scm, 600, 2)
    cons = DiscoveryConstraints(forbidden={("X1", "X2"), ("X3", "X1")}, tiers={"X5": 0, "X4": 1})
    m = bootstrap_confidences(ds, constraints=cons, runs=20, seed=1)
    assert m["X1", "X2"] == 0.0 and m["X3", "X1"] == 0.0
    assert m["X4", "X5"] == 0.0
    for c in (0.0, 0.3, 0.5):
        g = threshold(m, c)
        assert all(cons.allows(a, b) for a, b in g.directed)


def test_confidences_reproducible_and_bounded():
    ds = sample(random_linear_gaussian(5, 5, seed=2), 400, 7)
    m1 = bootstrap_confidences(ds, runs=10, seed=9)
    m2 = bootstrap_confidences(ds, runs=10, seed=9)
    assert np.array_equal(m1.values, m2.values)
    assert (m1.values >= 0).all() and (m1.values + m1.values.T <= 1 + 1e-12).all()


def test_threshold_is_strict():
    from causalpipe.discovery import ConfidenceMatrix

    m = ConfidenceMatrix(("A", "B"), np.array([[0.0, 0.5], [0.5, 0.0]]), 2)
    assert not threshold(m, 0.5).directed
    assert threshold(m, 0.49).directed == {("A", "B"), ("B", "A")}
    assert m.edges() == [("A", "B", 0.5), ("B", "A", 0.5)]


# -- SHD


def test_shd_examples():
    g = parse_graph("A -> B\nB -> C")
    assert shd(g, g) == 0
    assert shd(parse_graph("A -> B"), parse_graph("B -> A")) == 1
    truth = random_linear_gaussian(9, 9, seed=0).graph()
    assert shd(CausalGraph(truth.nodes), truth) == 9


def test_shd_two_node_exhaustive():
    nodes = ("A", "B")
    states = [set(s) for k in range(3) for s in itertools.combinations([("A", "B"), ("B", "A")], k)]
    for s1, s2 in itertools.product(states, repeat=2):
        assert shd(CausalGraph(nodes, s1), CausalGraph(nodes, s2)) == oracles.shd_edit_bfs(nodes, s1, s2)


def test_shd_three_node_exhaustive():
    nodes = ("A", "B", "C")
    pairs = [(a, b) for a in nodes for b in nodes if a != b]
    states = [{p for i, p in enumerate(pairs) if mask >> i & 1} for mask in range(64)]
    rng = np.random.default_rng(0)
    for i in rng.choice(64, 12, replace=False):
        for s2 in states:
            assert shd(CausalGraph(nodes, states[i]), CausalGraph(nodes, s2)) == oracles.shd_edit_bfs(nodes, states[i], s2)


@given(digraphs(), digraphs(), digraphs())
def test_shd_is_a_metric(a, b, c):
    assert shd(a, b) == shd(b, a)
    assert (shd(a, b) == 0) == (a.directed == b.directed)
    assert shd(a, c) <= shd(a, b) + shd(b, c)


def test_best_orientation_uses_truth():
    truth = parse_graph("A -> B\nB -> C")
    cp = pc(None, oracle_test(truth), 0.5, nodes=truth.nodes)
    assert shd(cpdag_best_orientation(cp, truth), truth) == 0


# -- benchmark


def test_benchmark_rows_and_determinism(tmp_path):
    scm = random_linear_gaussian(5, 5, seed=1)
    r1 = benchmark_discovery(scm, [100, 400], 2, seed=3)
    r2 = benchmark_discovery(scm, [100, 400], 2, seed=3)
    assert [(r.test, r.N, r.rep, r.shd) for r in r1] == [(r.test, r.N, r.rep, r.shd) for r in r2]
    assert [(r.N, r.rep) for r in r1] == [(100, 0), (100, 1), (400, 0), (400, 1)]
    write_benchmark_csv(r1, tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "test,N,rep,shd,runtime_s" and len(lines) == 5


def test_discovered_chain_contains_adjacencies():
    scm = parse_scm("A = linear() + gaussian(1)\nB = linear(A:1.5) + gaussian(1)\nC = linear(B:1.5) + gaussian(1)")
    m = bootstrap_confidences(sample(scm, 1000, 0), runs=10, seed=0)
    g = threshold(m, 0.2)
    adj = {frozenset(e) for e in g.directed}
    assert {frozenset("AB"), frozenset("BC")} <= adj and frozenset("AC") not in adj


def test_missing_values_rejected():
    ds = Dataset.from_columns({"a": [1.0, np.nan, 3.0, 4.0, 5.0], "b": [1.0, 2.0, 3.0, 4.0, 6.0]})
    with pytest.raises(ValueError):
        pc_skeleton(ds)
