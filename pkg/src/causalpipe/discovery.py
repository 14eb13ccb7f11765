"""Constraint-based structure discovery.

PC skeleton search and orientation, background-knowledge constraints,
bootstrap edge confidences, and SHD benchmarking against a simulated truth.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .ci_tests import CITestResult, get_test
from .dataset import Dataset, DataError
from .graph import CausalGraph, d_separated, is_acyclic

__all__ = [
    "DiscoveryConstraints",
    "Skeleton",
    "Cpdag",
    "ConfidenceMatrix",
    "BenchmarkRow",
    "pc_skeleton",
    "pc_orient",
    "pc",
    "bootstrap_confidences",
    "threshold",
    "shd",
    "cpdag_best_orientation",
    "benchmark_discovery",
    "write_benchmark_csv",
    "parse_constraints",
    "read_constraints",
    "oracle_test",
]


@dataclass(frozen=True)
class DiscoveryConstraints:
    """Background knowledge for discovery.

    ``forbidden`` holds ordered pairs that may never be oriented ``a -> b``;
    ``absent`` holds unordered pairs that may not be adjacent; ``tiers`` maps
    nodes to a temporal tier, and edges may not point to a lower tier.
    """

    forbidden: frozenset = frozenset()
    absent: frozenset = frozenset()
    tiers: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "forbidden", frozenset(tuple(p) for p in self.forbidden))
        object.__setattr__(self, "absent", frozenset(frozenset(p) for p in self.absent))
        for v, t in self.tiers.items():
            if t < 0:
                raise ValueError(f"tier of {v} is negative")

    def validate(self, nodes: Iterable[str]) -> None:
        nodes = set(nodes)
        names = {v for p in self.forbidden for v in p} | {v for p in self.absent for v in p} | set(self.tiers)
        unknown = names - nodes
        if unknown:
            raise ValueError(f"constraints name unknown nodes: {sorted(unknown)}")

    def allows(self, a: str, b: str) -> bool:
        if (a, b) in self.forbidden or frozenset((a, b)) in self.absent:
            return False
        ta, tb = self.tiers.get(a), self.tiers.get(b)
        return ta is None or tb is None or ta <= tb

    def may_be_adjacent(self, a: str, b: str) -> bool:
        return self.allows(a, b) or self.allows(b, a)


NO_CONSTRAINTS = DiscoveryConstraints()


def parse_constraints(text: str) -> DiscoveryConstraints:
    """Lines of ``forbid A B``, ``absent A B`` or ``tier A 0``."""
    forbidden, absent, tiers = set(), set(), {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "forbid" and len(tok) == 3:
            forbidden.add((tok[1], tok[2]))
        elif tok[0] == "absent" and len(tok) == 3:
            absent.add(frozenset(tok[1:]))
        elif tok[0] == "tier" and len(tok) == 3:
            try:
                tiers[tok[1]] = int(tok[2])
            except ValueError:
                raise ValueError(f"constraints line {lineno}: tier must be an integer") from None
        else:
            raise ValueError(f"constraints line {lineno}: cannot parse {raw.strip()!r}")
    return DiscoveryConstraints(frozenset(forbidden), frozenset(absent), tiers)


def read_constraints(path) -> DiscoveryConstraints:
    with open(path, encoding="utf-8") as fh:
        return parse_constraints(fh.read())


# ---------------------------------------------------------------------------
# PC


@dataclass(frozen=True)
class Skeleton:
    nodes: tuple[str, ...]
    edges: frozenset  # of frozenset pairs
    sepsets: Mapping[frozenset, tuple[str, ...]]
    n_tests: int = 0

    def adjacent(self, a, b) -> bool:
        return frozenset((a, b)) in self.edges

    def neighbors(self, v) -> tuple[str, ...]:
        return tuple(w for w in self.nodes if w != v and frozenset((v, w)) in self.edges)


@dataclass(frozen=True)
class Cpdag:
    nodes: tuple[str, ...]
    directed: frozenset
    undirected: frozenset
    sepsets: Mapping[frozenset, tuple[str, ...]]
    conflicts: tuple[str, ...] = ()

    def to_graph(self, undirected: str = "both") -> CausalGraph:
        """Directed graph view; undirected edges become a 2-cycle (``both``) or are dropped."""
        edges = set(self.directed)
        if undirected == "both":
            for e in self.undirected:
                a, b = sorted(e, key=self.nodes.index)
                edges |= {(a, b), (b, a)}
        return CausalGraph(self.nodes, edges)


def oracle_test(graph: CausalGraph) -> Callable[..., CITestResult]:
    """A perfect CI test: p = 1 when d-separated, else 0."""

    def test(ds, a, b, z=()):
        sep = d_separated(graph, {a}, {b}, set(z))
        return CITestResult(0.0, 1.0 if sep else 0.0, 0, "oracle", len(z))

    return test


def _resolve_test(test, test_kwargs):
    if callable(test):
        return test
    return get_test(test, **(test_kwargs or {}))


def pc_skeleton(
    ds: Dataset | None,
    test: str | Callable = "fisher_z",
    alpha: float = 0.01,
    constraints: DiscoveryConstraints | None = None,
    max_cond_size: int | None = 3,
    nodes: Sequence[str] | None = None,
    test_kwargs: Mapping | None = None,
) -> Skeleton:
    """PC adjacency search.

    Starts from the complete graph minus constrained-absent pairs and removes
    ``a - b`` as soon as some subset of the current neighbours of ``a`` (or
    ``b``) of size ``l`` gives ``p > alpha``; ``l`` runs from 0 upward. Pairs
    and subsets are visited in node order.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    constraints = constraints or NO_CONSTRAINTS
    if nodes is None:
        if ds is None:
            raise ValueError("need a dataset or an explicit node list")
        nodes = ds.names
    nodes = tuple(nodes)
    constraints.validate(nodes)
    if ds is not None and ds.has_missing(nodes):
        raise DataError("missing values present; apply make_censoring first")
    run = _resolve_test(test, test_kwargs)
    pos = {v: i for i, v in enumerate(nodes)}

    adj = {v: set() for v in nodes}
    for a, b in combinations(nodes, 2):
        if constraints.may_be_adjacent(a, b):
            adj[a].add(b)
            adj[b].add(a)
    sepsets: dict[frozenset, tuple[str, ...]] = {}
    n_tests = 0
    level = 0
    while max_cond_size is None or level <= max_cond_size:
        testable = False
        for a, b in combinations(nodes, 2):
            if b not in adj[a]:
                continue
            removed = False
            for x, y in ((a, b), (b, a)):
                cands = sorted(adj[x] - {y}, key=pos.__getitem__)
                if len(cands) < level:
                    continue
                testable = True
                for S in combinations(cands, level):
                    n_tests += 1
                    if run(ds, a, b, S).p_value > alpha:
                        adj[a].discard(b)
                        adj[b].discard(a)
                        sepsets[frozenset((a, b))] = S
                        removed = True
                        break
                if removed:
                    break
        if not testable:
            break
        level += 1
    edges = frozenset(frozenset((a, b)) for a in nodes for b in adj[a] if pos[a] < pos[b])
    return Skeleton(nodes, edges, sepsets, n_tests)


def _meek(nodes, directed: set, undirected: set, allows=lambda a, b: True) -> None:
    """Apply Meek rules 1-4 in place until nothing changes, never orienting against ``allows``."""

    def adjacent(a, b):
        return (a, b) in directed or (b, a) in directed or frozenset((a, b)) in undirected

    def orient(a, b):
        undirected.discard(frozenset((a, b)))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for e in sorted(undirected, key=lambda e: sorted(nodes.index(v) for v in e)):
            if e not in undirected:
                continue
            u, v = sorted(e, key=nodes.index)
            for a, b in ((u, v), (v, u)):
                if not allows(a, b):
                    continue
                # R1: c -> a - b, c and b nonadjacent
                r1 = any((c, a) in directed and not adjacent(c, b) for c in nodes if c not in (a, b))
                # R2: a -> c -> b
                r2 = any((a, c) in directed and (c, b) in directed for c in nodes if c not in (a, b))
                # R3: a - c -> b, a - d -> b, c and d nonadjacent
                r3 = False
                if not (r1 or r2):
                    cs = [
                        c
                        for c in nodes
                        if c not in (a, b) and frozenset((a, c)) in undirected and (c, b) in directed
                    ]
                    r3 = any(not adjacent(c, d) for c, d in combinations(cs, 2))
                # R4: a - d (or adjacent), d -> c -> b, a adjacent c, d and b nonadjacent
                r4 = False
                if not (r1 or r2 or r3):
                    for c in nodes:
                        if c in (a, b) or (c, b) not in directed or not adjacent(a, c):
                            continue
                        for d in nodes:
                            if d in (a, b, c):
                                continue
                            if (d, c) in directed and frozenset((a, d)) in undirected and not adjacent(d, b):
                                r4 = True
                                break
                        if r4:
                            break
                if r1 or r2 or r3 or r4:
                    orient(a, b)
                    changed = True
                    break


def pc_orient(skeleton: Skeleton, constraints: DiscoveryConstraints | None = None) -> Cpdag:
    """Orient a PC skeleton into a CPDAG.

    Unshielded colliders are oriented first; conflicting or constraint-violating
    collider orientations are recorded and left undirected. Constraint-implied
    orientations follow, then Meek's rules run to closure.
    """
    constraints = constraints or NO_CONSTRAINTS
    nodes = skeleton.nodes
    conflicts: list[str] = []
    intents: set[tuple[str, str]] = set()
    for b in nodes:
        nbrs = skeleton.neighbors(b)
        for a, c in combinations(nbrs, 2):
            if skeleton.adjacent(a, c):
                continue
            sep = skeleton.sepsets.get(frozenset((a, c)))
            if sep is not None and b in sep:
                continue
            intents.add((a, b))
            intents.add((c, b))

    directed: set[tuple[str, str]] = set()
    undirected = set(skeleton.edges)
    for a, b in sorted(intents, key=lambda e: (nodes.index(e[0]), nodes.index(e[1]))):
        if (b, a) in intents:
            conflicts.append(f"conflicting collider orientations on {a} - {b}")
            continue
        if not constraints.allows(a, b):
            conflicts.append(f"collider orientation {a} -> {b} violates constraints")
            continue
        directed.add((a, b))
        undirected.discard(frozenset((a, b)))
    conflicts = sorted(set(conflicts))

    for e in sorted(undirected, key=lambda e: sorted(nodes.index(v) for v in e)):
        a, b = sorted(e, key=nodes.index)
        ab, ba = constraints.allows(a, b), constraints.allows(b, a)
        if ab and not ba:
            directed.add((a, b))
            undirected.discard(e)
        elif ba and not ab:
            directed.add((b, a))
            undirected.discard(e)

    _meek(nodes, directed, undirected, constraints.allows)
    ok, cycle = is_acyclic(CausalGraph(nodes, directed))
    if not ok:
        conflicts.append("directed cycle after orientation: " + " -> ".join(cycle))
    return Cpdag(nodes, frozenset(directed), frozenset(undirected), dict(skeleton.sepsets), tuple(conflicts))


def pc(ds, test="fisher_z", alpha=0.01, constraints=None, max_cond_size=3, nodes=None, test_kwargs=None) -> Cpdag:
    skel = pc_skeleton(ds, test, alpha, constraints, max_cond_size, nodes, test_kwargs)
    return pc_orient(skel, constraints)


# ---------------------------------------------------------------------------
# bootstrap confidences


@dataclass(frozen=True, eq=False)
class ConfidenceMatrix:
    """Entry (i, j) is the share of bootstrap runs proposing ``nodes[i] -> nodes[j]``."""

    nodes: tuple[str, ...]
    values: np.ndarray
    runs: int = 0

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.nodes.index(a), self.nodes.index(b)])

    def edges(self) -> list[tuple[str, str, float]]:
        """Nonzero entries sorted by descending confidence, then node order."""
        out = [
            (self.nodes[i], self.nodes[j], float(self.values[i, j]))
            for i in range(len(self.nodes))
            for j in range(len(self.nodes))
            if self.values[i, j] > 0
        ]
        return sorted(out, key=lambda e: (-e[2], self.nodes.index(e[0]), self.nodes.index(e[1])))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cause"] + list(self.nodes))
            for v, row in zip(self.nodes, self.values):
                w.writerow([v] + [repr(float(x)) for x in row])


def bootstrap_confidences(
    ds: Dataset,
    test: str | Callable = "fisher_z",
    alpha: float = 0.01,
    constraints: DiscoveryConstraints | None = None,
    runs: int = 50,
    seed: int = 0,
    max_cond_size: int | None = 3,
    test_kwargs: Mapping | None = None,
) -> ConfidenceMatrix:
    """Average PC output over ``runs`` bootstrap resamples.

    Directed edges count 1 for their direction; undirected edges count 0.5 for
    each direction.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    nodes = ds.names
    pos = {v: i for i, v in enumerate(nodes)}
    total = np.zeros((len(nodes), len(nodes)))
    for child in np.random.SeedSequence(seed).spawn(runs):
        rng = np.random.default_rng(child)
        boot = ds.take(rng.integers(0, ds.n_rows, ds.n_rows))
        kwargs = dict(test_kwargs or {})
        if test == "knn_cmi":
            kwargs.setdefault("seed", int(rng.integers(2**31)))
        cp = pc(boot, test, alpha, constraints, max_cond_size, None, kwargs)
        for a, b in cp.directed:
            total[pos[a], pos[b]] += 1.0
        for e in cp.undirected:
            a, b = tuple(e)
            total[pos[a], pos[b]] += 0.5
            total[pos[b], pos[a]] += 0.5
    values = total / runs
    values.setflags(write=False)
    return ConfidenceMatrix(nodes, values, runs)


def threshold(matrix: ConfidenceMatrix, c: float = 0.5) -> CausalGraph:
    """Keep edges whose confidence strictly exceeds ``c``."""
    n = len(matrix.nodes)
    edges = [(matrix.nodes[i], matrix.nodes[j]) for i in range(n) for j in range(n) if matrix.values[i, j] > c]
    return CausalGraph(matrix.nodes, edges)


# ---------------------------------------------------------------------------
# structural Hamming distance


def shd(g1: CausalGraph, g2: CausalGraph) -> int:
    """Edge insertions, deletions and reversals turning ``g1`` into ``g2``.

    A reversal costs 1. Bidirected edges are not allowed.
    """
    if set(g1.nodes) != set(g2.nodes):
        raise ValueError("graphs have different node sets")
    if g1.bidirected or g2.bidirected:
        raise ValueError("shd is defined on directed graphs only")
    pairs = {frozenset(e) for e in g1.directed | g2.directed}
    dist = 0
    for pair in pairs:
        a, b = tuple(pair)
        s1 = {e for e in ((a, b), (b, a)) if e in g1.directed}
        s2 = {e for e in ((a, b), (b, a)) if e in g2.directed}
        if s1 == s2:
            continue
        dist += len(s1 ^ s2) if (len(s1) == 2 or len(s2) == 2) else 1
    return dist


def cpdag_best_orientation(cpdag: Cpdag, truth: CausalGraph) -> CausalGraph:
    """Orient each undirected CPDAG edge the way the true graph does, if it has the edge."""
    edges = set(cpdag.directed)
    for e in cpdag.undirected:
        a, b = sorted(e, key=cpdag.nodes.index)
        edges.add((b, a) if truth.has_directed(b, a) else (a, b))
    return CausalGraph(cpdag.nodes, edges)


@dataclass(frozen=True)
class BenchmarkRow:
    test: str
    N: int
    rep: int
    shd: int
    runtime_s: float


def benchmark_discovery(
    scm,
    sample_sizes: Sequence[int],
    reps: int,
    tests: Sequence[str] = ("fisher_z",),
    alpha: float = 0.01,
    seed: int = 0,
    max_cond_size: int | None = 3,
    test_kwargs: Mapping[str, Mapping] | None = None,
) -> list[BenchmarkRow]:
    """SHD and wall time of PC against the SCM's true DAG.

    Every test sees the same simulated datasets for a given ``(N, rep)``.
    """
    from .scm import sample

    truth = scm.graph()
    test_kwargs = test_kwargs or {}
    rows = []
    seeds = np.random.SeedSequence(seed).generate_state(len(sample_sizes) * reps)
    for i, n in enumerate(sample_sizes):
        for rep in range(reps):
            ds = sample(scm, n, int(seeds[i * reps + rep]))
            for name in tests:
                kwargs = dict(test_kwargs.get(name, {}))
                if name == "knn_cmi":
                    kwargs.setdefault("seed", int(seeds[i * reps + rep]))
                start = time.perf_counter()
                cp = pc(ds, name, alpha, None, max_cond_size, None, kwargs)
                elapsed = time.perf_counter() - start
                rows.append(BenchmarkRow(name, n, rep, shd(cpdag_best_orientation(cp, truth), truth), elapsed))
    return rows


def write_benchmark_csv(rows: Sequence[BenchmarkRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test", "N", "rep", "shd", "runtime_s"])
        for r in rows:
            w.writerow([r.test, r.N, r.rep, r.shd, f"{r.runtime_s:.6f}"])
