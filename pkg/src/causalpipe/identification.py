"""Backdoor identification on mixed graphs.

Backdoor-path enumeration, adjustment-set search, variable roles, the most
plausible identifiable subgraph, and estimand rendering.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

from .graph import CausalGraph, GraphError, _bikey, assert_acyclic, d_separated, graph_plausibility

__all__ = [
    "IdentificationError",
    "Path",
    "EstimandSpec",
    "RoleReport",
    "PlausibleSubgraph",
    "ROLES",
    "all_paths",
    "backdoor_paths",
    "path_open",
    "is_backdoor_set",
    "find_backdoor_set",
    "minimal_backdoor_sets",
    "classify_variables",
    "most_plausible_backdoor_subgraph",
    "derive_estimand",
    "render_estimand",
    "format_level",
]

ROLES = ("confounder", "mediator", "instrument", "precision", "collider-risk", "other")


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class Path:
    """A simple path; ``edges[i]`` joins ``nodes[i]`` and ``nodes[i+1]`` and is ``->``, ``<-`` or ``<->``."""

    nodes: tuple[str, ...]
    edges: tuple[str, ...]

    @property
    def colliders(self) -> tuple[str, ...]:
        out = []
        for i in range(1, len(self.nodes) - 1):
            into_left = self.edges[i - 1] in ("->", "<->")
            into_right = self.edges[i] in ("<-", "<->")
            if into_left and into_right:
                out.append(self.nodes[i])
        return tuple(out)

    @property
    def is_causal(self) -> bool:
        return all(e == "->" for e in self.edges)

    def __str__(self) -> str:
        parts = [self.nodes[0]]
        for e, v in zip(self.edges, self.nodes[1:]):
            parts += [e, v]
        return " ".join(parts)

    def pretty(self) -> str:
        arrows = {"->": "→", "<-": "←", "<->": "↔"}
        parts = [self.nodes[0]]
        for e, v in zip(self.edges, self.nodes[1:]):
            parts.append(arrows[e] + v)
        return "".join(parts)


def _steps(graph: CausalGraph, v: str):
    for c in graph.children(v):
        yield c, "->"
    for p in graph.parents(v):
        yield p, "<-"
    for s in graph.spouses(v):
        yield s, "<->"


def all_paths(graph: CausalGraph, a: str, b: str) -> list[Path]:
    """Every simple path between ``a`` and ``b``; parallel edges give distinct paths."""
    out: list[Path] = []

    def walk(v, nodes, edges, seen):
        if v == b:
            out.append(Path(tuple(nodes), tuple(edges)))
            return
        for w, kind in _steps(graph, v):
            if w in seen:
                continue
            seen.add(w)
            nodes.append(w)
            edges.append(kind)
            walk(w, nodes, edges, seen)
            nodes.pop()
            edges.pop()
            seen.discard(w)

    walk(a, [a], [], {a})
    return out


def _check_pair(graph: CausalGraph, T: str, Y: str):
    for v in (T, Y):
        if v not in graph:
            raise GraphError(f"unknown node {v!r}")
    if T == Y:
        raise IdentificationError("treatment and outcome must differ")
    assert_acyclic(graph)


def backdoor_paths(graph: CausalGraph, T: str, Y: str) -> list[Path]:
    """Paths from T to Y whose first edge points into T."""
    _check_pair(graph, T, Y)
    return [p for p in all_paths(graph, T, Y) if p.edges[0] in ("<-", "<->")]


def path_open(graph: CausalGraph, path: Path, Z: Iterable[str]) -> bool:
    """Whether ``path`` transmits association given ``Z``."""
    Z = set(Z)
    colliders = set(path.colliders)
    an_z = graph.ancestors_of(Z)
    for v in path.nodes[1:-1]:
        if v in colliders:
            if v not in an_z:
                return False
        elif v in Z:
            return False
    return True


def _check_z(T, Y, Z):
    Z = set(Z)
    if T in Z or Y in Z:
        raise IdentificationError("adjustment set may not contain treatment or outcome")
    return Z


def is_backdoor_set(graph: CausalGraph, T: str, Y: str, Z: Iterable[str]) -> bool:
    _check_pair(graph, T, Y)
    Z = _check_z(T, Y, Z)
    unknown = Z - set(graph.nodes)
    if unknown:
        raise GraphError(f"unknown nodes {sorted(unknown)}")
    if Z & set(graph.descendants(T)):
        return False
    return d_separated(graph.without_outgoing(T), {T}, {Y}, Z)


def _candidates(graph: CausalGraph, T: str, Y: str) -> tuple[str, ...]:
    # minimal separators lie among ancestors of {T, Y} in the mutilated graph
    cut = graph.without_outgoing(T)
    pool = cut.ancestors_of({T, Y}) - set(graph.descendants(T)) - {T, Y}
    return tuple(sorted(pool))


def find_backdoor_set(graph: CausalGraph, T: str, Y: str) -> tuple[str, ...] | None:
    """Smallest valid backdoor set, lexicographically first among ties; None if none exists."""
    _check_pair(graph, T, Y)
    cands = _candidates(graph, T, Y)
    if not is_backdoor_set(graph, T, Y, cands):
        return None
    for size in range(len(cands) + 1):
        for Z in combinations(cands, size):
            if is_backdoor_set(graph, T, Y, Z):
                return Z
    return cands  # pragma: no cover


def minimal_backdoor_sets(graph: CausalGraph, T: str, Y: str, limit: int = 16) -> list[tuple[str, ...]] | None:
    """All inclusion-minimal backdoor sets, or None when the candidate pool exceeds ``limit``."""
    cands = _candidates(graph, T, Y)
    if len(cands) > limit:
        return None
    found: list[tuple[str, ...]] = []
    for size in range(len(cands) + 1):
        for Z in combinations(cands, size):
            if any(set(m) <= set(Z) for m in found):
                continue
            if is_backdoor_set(graph, T, Y, Z):
                found.append(Z)
    return found


@dataclass(frozen=True)
class RoleReport:
    treatment: str
    outcome: str
    roles: dict
    open_paths: tuple[Path, ...]
    adjustment_set: tuple[str, ...] | None

    def of(self, role: str) -> tuple[str, ...]:
        return tuple(v for v, r in self.roles.items() if r == role)


def classify_variables(graph: CausalGraph, T: str, Y: str) -> RoleReport:
    """Assign each node other than T and Y one role, first match wins.

    Order of precedence: mediator, confounder, instrument, precision,
    collider-risk, other.
    """
    _check_pair(graph, T, Y)
    bd = backdoor_paths(graph, T, Y)
    open_paths = tuple(p for p in bd if path_open(graph, p, ()))
    adjustment = find_backdoor_set(graph, T, Y)
    minimal = minimal_backdoor_sets(graph, T, Y)
    needed = {v for m in minimal for v in m} if minimal is not None else set(adjustment or ())
    on_open = {v for p in open_paths for v in p.nodes[1:-1]}
    de_t = set(graph.descendants(T))
    de_y = set(graph.descendants(Y))
    an_y = set(graph.ancestors(Y))
    an_t = set(graph.ancestors(T))
    bd_colliders = {c for p in bd for c in p.colliders}
    without_t = graph.subgraph([v for v in graph.nodes if v != T])
    an_y_avoiding_t = without_t.ancestors_of({Y}) - {Y}
    given = {T} | set(adjustment or ())

    roles = {}
    for v in graph.nodes:
        if v in (T, Y):
            continue
        if v in de_t and v in an_y:
            role = "mediator"
        elif v not in de_t and v in on_open and v in needed:
            role = "confounder"
        elif (
            v in an_t
            and v not in given
            and v not in an_y_avoiding_t
            and d_separated(graph, {v}, {Y}, given)
        ):
            role = "instrument"
        elif v in an_y and d_separated(graph, {v}, {T}, ()):
            role = "precision"
        elif (v in de_t and v in de_y) or v in bd_colliders:
            role = "collider-risk"
        else:
            role = "other"
        roles[v] = role
    return RoleReport(T, Y, roles, open_paths, adjustment)


# ---------------------------------------------------------------------------
# most plausible identifiable subgraph


@dataclass(frozen=True)
class PlausibleSubgraph:
    graph: CausalGraph
    removed: tuple[tuple[str, str], ...]
    ratio: float
    adjustment_set: tuple[str, ...]
    subsets_examined: int = 0


def _identifiable(graph: CausalGraph, T: str, Y: str) -> bool:
    return is_backdoor_set(graph, T, Y, _candidates(graph, T, Y))


def _ordered_subsets(edges: Sequence[tuple[str, str]], factors: Sequence[Fraction]):
    """Yield (product, index tuple) over all subsets in non-increasing product order.

    ``factors`` must be sorted non-increasing and lie in (0, 1].
    """
    yield Fraction(1), ()
    if not factors:
        return
    def product(idx):
        out = Fraction(1)
        for i in idx:
            out *= factors[i]
        return out

    heap = [(-factors[0], (0,))]
    while heap:
        neg, idx = heapq.heappop(heap)
        yield -neg, idx
        last = idx[-1]
        if last + 1 < len(factors):
            # extend with the next factor, or swap the last one for it
            for nxt in (idx + (last + 1,), idx[:-1] + (last + 1,)):
                heapq.heappush(heap, (-product(nxt), nxt))


def most_plausible_backdoor_subgraph(graph: CausalGraph, T: str, Y: str) -> PlausibleSubgraph:
    """Remove the least implausible set of bidirected edges that makes T -> Y backdoor-identifiable.

    Edges are independent Bernoulli events, so removing an edge with
    plausibility p scales the graph plausibility by (1 - p) / p. An already
    identifiable graph is returned unchanged with ratio 1. Otherwise subsets
    are visited best-first by exact ratio; among equal ratios the smaller and
    then lexicographically first removal wins.
    """
    _check_pair(graph, T, Y)
    if _identifiable(graph, T, Y):
        return PlausibleSubgraph(graph, (), 1.0, find_backdoor_set(graph, T, Y), 1)

    bd = graph.bidirected
    keys = sorted(bd)
    # start from the most plausible configuration: drop edges with p < 1/2
    base = frozenset(k for k in keys if bd[k] < 0.5)
    base_ratio = Fraction(1)
    toggles = []
    for k in keys:
        p = Fraction(bd[k])
        r = (1 - p) / p
        if k in base:
            base_ratio *= r
            toggles.append((1 / r, k))
        else:
            toggles.append((r, k))
    toggles.sort(key=lambda t: (-t[0], t[1]))
    factors = [f for f, _ in toggles]

    examined = 0
    best = None
    best_ratio = None
    for prod, idx in _ordered_subsets([k for _, k in toggles], factors):
        if best_ratio is not None and prod < best_ratio:
            break
        removed = set(base) ^ {toggles[i][1] for i in idx}
        examined += 1
        if not _identifiable(graph.without_bidirected(removed), T, Y):
            continue
        key = (len(removed), sorted(removed))
        if best is None or key < best[0]:
            best = (key, removed)
            best_ratio = prod
    removed = tuple(sorted(best[1]))
    sub = graph.without_bidirected(removed)
    ratio = graph_plausibility(graph, removed)[2]
    return PlausibleSubgraph(sub, removed, ratio, find_backdoor_set(sub, T, Y), examined)


# ---------------------------------------------------------------------------
# estimands


def format_level(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class EstimandSpec:
    """Target contrasts Psi_{t-t'} = E[Y | do(T=t)] - E[Y | do(T=t')].

    ``confounders`` is the adjustment set C, ``precision`` the extra outcome
    predictors R; ``censoring`` optionally names a 0/1 observed-indicator
    column that is set to 1 alongside every treatment intervention. Its model
    uses T plus ``censoring_parents``, or T, C and R when that is None.
    """

    treatment: str
    outcome: str
    contrasts: tuple[tuple[float, float], ...]
    confounders: tuple[str, ...] = ()
    precision: tuple[str, ...] = ()
    censoring: str | None = None
    provenance: str = "user"
    censoring_parents: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "contrasts", tuple((float(t), float(s)) for t, s in self.contrasts))
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "precision", tuple(self.precision))
        if self.treatment == self.outcome:
            raise IdentificationError("treatment and outcome must differ")
        if not self.contrasts:
            raise IdentificationError("at least one contrast is required")
        C, R = set(self.confounders), set(self.precision)
        if len(C) != len(self.confounders) or len(R) != len(self.precision):
            raise IdentificationError("duplicate names in adjustment sets")
        if C & R:
            raise IdentificationError(f"variables in both confounders and precision: {sorted(C & R)}")
        for s in (C, R):
            if {self.treatment, self.outcome} & s:
                raise IdentificationError("adjustment sets may not contain treatment or outcome")
        if self.censoring is not None and self.censoring in C | R | {self.treatment, self.outcome}:
            raise IdentificationError("censoring column must be distinct from the other roles")
        if self.censoring_parents is not None:
            object.__setattr__(self, "censoring_parents", tuple(self.censoring_parents))
            bad = set(self.censoring_parents) & {self.treatment, self.outcome, self.censoring}
            if bad:
                raise IdentificationError(f"censoring parents may not include {sorted(bad)}")
        if self.provenance not in ("user", "graph"):
            raise IdentificationError("provenance must be 'user' or 'graph'")

    def validate_levels(self, levels: Iterable[float]) -> None:
        levels = {float(v) for v in levels}
        for t, s in self.contrasts:
            for v in (t, s):
                if v not in levels:
                    raise IdentificationError(f"contrast value {format_level(v)} is not a level of {self.treatment}")

    def label(self, contrast) -> str:
        t, s = contrast
        return f"{format_level(t)}-{format_level(s)}"


def derive_estimand(graph: CausalGraph, T: str, Y: str, contrasts, censoring=None) -> EstimandSpec:
    """EstimandSpec with C = minimal backdoor set and R = precision variables from the graph."""
    report = classify_variables(graph, T, Y)
    if report.adjustment_set is None:
        raise IdentificationError(_unblockable_message(graph, T, Y, ()))
    C = report.adjustment_set
    R = tuple(v for v in report.of("precision") if v not in C and v != censoring)
    return EstimandSpec(T, Y, contrasts, C, R, censoring, "graph")


def _unblockable_message(graph, T, Y, Z) -> str:
    Z = set(Z)
    bad = Z & set(graph.descendants(T))
    if bad:
        return f"adjustment set contains descendants of {T}: {sorted(bad)}"
    for p in backdoor_paths(graph, T, Y):
        if path_open(graph, p, Z):
            return f"not backdoor-identifiable: path {p} stays open"
    return "not backdoor-identifiable"


def render_estimand(graph: CausalGraph, spec: EstimandSpec) -> str:
    """Adjustment formula per contrast plus the null/alternative hypothesis pair."""
    T, Y = spec.treatment, spec.outcome
    if not is_backdoor_set(graph, T, Y, spec.confounders):
        raise IdentificationError(_unblockable_message(graph, T, Y, spec.confounders))
    adj = list(spec.confounders) + list(spec.precision)
    lines = []
    for contrast in spec.contrasts:
        t, s = (format_level(v) for v in contrast)
        if adj:
            sub = adj[0] if len(adj) == 1 else "{" + ",".join(adj) + "}"
            cond = "," + ",".join(adj)
            formula = f"E_{sub}[E[{Y}|{T}={t}{cond}] − E[{Y}|{T}={s}{cond}]]"
        else:
            formula = f"E[{Y}|{T}={t}] − E[{Y}|{T}={s}]"
        label = spec.label(contrast)
        lines.append(f"Ψ_{label} = {formula}")
        lines.append(f"h0_{label}: Ψ_{label} = 0")
        lines.append(f"h1_{label}: Ψ_{label} ≠ 0")
    return "\n".join(lines)
