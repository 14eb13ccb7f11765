"""Acyclic directed mixed graphs (ADMGs) with plausibility-weighted bidirected edges.

Directed edges always carry plausibility 1.0. Bidirected edges stand in for an
unobserved common cause and carry a plausibility in (0, 1].  Graph values are
immutable; every operation returns a new graph.
"""

from __future__ import annotations

import heapq
import re
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping, Sequence

__all__ = [
    "CausalGraph",
    "GraphError",
    "GraphSyntaxError",
    "CycleError",
    "is_acyclic",
    "assert_acyclic",
    "topological_order",
    "unroll",
    "d_separated",
    "markov_factorization",
    "render_factorization",
    "latent_project",
    "graph_plausibility",
    "parse_graph",
    "serialize_graph",
    "read_graph",
    "write_graph",
]

NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.@-]*$")


class GraphError(ValueError):
    pass


class GraphSyntaxError(GraphError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class CycleError(GraphError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("directed cycle: " + " -> ".join(self.cycle + self.cycle[:1]))


def _bikey(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class CausalGraph:
    """Immutable ADMG.

    Parameters
    ----------
    nodes : sequence of str
        Node names in declaration order. Declaration order drives every
        deterministic iteration in the package.
    directed : iterable of (str, str)
        Directed edges ``a -> b``.
    bidirected : mapping or iterable
        Either ``{(a, b): p}`` or an iterable of ``(a, b, p)`` triples.
    """

    __slots__ = ("_nodes", "_index", "_directed", "_bidirected", "_pa", "_ch")

    def __init__(self, nodes: Sequence[str] = (), directed: Iterable = (), bidirected=None):
        nodes = tuple(nodes)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        for v in nodes:
            if not isinstance(v, str) or not NAME_RE.match(v):
                raise GraphError(f"invalid node name {v!r}")
        index = {v: i for i, v in enumerate(nodes)}

        dset = set()
        for a, b in directed:
            self._check_edge(index, a, b)
            if (a, b) in dset:
                raise GraphError(f"duplicate edge {a} -> {b}")
            dset.add((a, b))

        if bidirected is None:
            items = []
        elif isinstance(bidirected, Mapping):
            items = [(a, b, p) for (a, b), p in bidirected.items()]
        else:
            items = [tuple(e) for e in bidirected]
        bdict: dict[tuple[str, str], float] = {}
        for a, b, p in items:
            self._check_edge(index, a, b)
            p = float(p)
            if not (0.0 < p <= 1.0):
                raise GraphError(f"plausibility {p} of {a} <-> {b} outside (0, 1]")
            key = _bikey(a, b)
            if key in bdict:
                raise GraphError(f"duplicate edge {a} <-> {b}")
            bdict[key] = p

        self._nodes = nodes
        self._index = index
        self._directed = frozenset(dset)
        self._bidirected = bdict
        pa: dict[str, list[str]] = {v: [] for v in nodes}
        ch: dict[str, list[str]] = {v: [] for v in nodes}
        for a, b in dset:
            pa[b].append(a)
            ch[a].append(b)
        self._pa = {v: tuple(sorted(ps, key=index.__getitem__)) for v, ps in pa.items()}
        self._ch = {v: tuple(sorted(cs, key=index.__getitem__)) for v, cs in ch.items()}

    @staticmethod
    def _check_edge(index, a, b):
        if a not in index or b not in index:
            missing = a if a not in index else b
            raise GraphError(f"edge endpoint {missing!r} is not a declared node")
        if a == b:
            raise GraphError(f"self-loop on {a}")

    # -- basic accessors -------------------------------------------------
    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def directed(self) -> frozenset[tuple[str, str]]:
        return self._directed

    @property
    def bidirected(self) -> dict[tuple[str, str], float]:
        """Bidirected edges keyed by the lexicographically sorted pair."""
        return dict(self._bidirected)

    def order(self, v: str) -> int:
        return self._index[v]

    def sort(self, vs: Iterable[str]) -> tuple[str, ...]:
        return tuple(sorted(vs, key=self._index.__getitem__))

    def __contains__(self, v) -> bool:
        return v in self._index

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CausalGraph):
            return NotImplemented
        return (
            self._nodes == other._nodes
            and self._directed == other._directed
            and self._bidirected == other._bidirected
        )

    def __hash__(self):
        return hash((self._nodes, self._directed, frozenset(self._bidirected.items())))

    def __repr__(self) -> str:
        return (
            f"CausalGraph(nodes={list(self._nodes)}, directed={sorted(self._directed)}, "
            f"bidirected={dict(sorted(self._bidirected.items()))})"
        )

    def _require(self, v: str):
        if v not in self._index:
            raise GraphError(f"unknown node {v!r}")

    def has_directed(self, a: str, b: str) -> bool:
        return (a, b) in self._directed

    def has_bidirected(self, a: str, b: str) -> bool:
        return _bikey(a, b) in self._bidirected

    def plausibility(self, a: str, b: str, kind: str = "<->") -> float:
        if kind == "->":
            if (a, b) not in self._directed:
                raise GraphError(f"no edge {a} -> {b}")
            return 1.0
        try:
            return self._bidirected[_bikey(a, b)]
        except KeyError:
            raise GraphError(f"no edge {a} <-> {b}") from None

    def adjacent(self, a: str, b: str) -> bool:
        return (a, b) in self._directed or (b, a) in self._directed or self.has_bidirected(a, b)

    def spouses(self, v: str) -> tuple[str, ...]:
        self._require(v)
        out = [b if a == v else a for a, b in self._bidirected if v in (a, b)]
        return self.sort(out)

    # -- graph queries ---------------------------------------------------
    def parents(self, v: str) -> tuple[str, ...]:
        self._require(v)
        return self._pa[v]

    def children(self, v: str) -> tuple[str, ...]:
        self._require(v)
        return self._ch[v]

    def _closure(self, starts: Iterable[str], step) -> set[str]:
        seen: set[str] = set()
        stack = list(starts)
        while stack:
            v = stack.pop()
            for w in step[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    def ancestors(self, v: str) -> tuple[str, ...]:
        self._require(v)
        return self.sort(self._closure([v], self._pa) - {v})

    def descendants(self, v: str) -> tuple[str, ...]:
        self._require(v)
        return self.sort(self._closure([v], self._ch) - {v})

    def ancestors_of(self, vs: Iterable[str]) -> set[str]:
        """Ancestors of a node set, including the set itself."""
        vs = list(vs)
        for v in vs:
            self._require(v)
        return self._closure(vs, self._pa) | set(vs)

    def descendants_of(self, vs: Iterable[str]) -> set[str]:
        vs = list(vs)
        for v in vs:
            self._require(v)
        return self._closure(vs, self._ch) | set(vs)

    # -- edits (return new graphs) ----------------------------------------
    def without_bidirected(self, edges: Iterable[tuple[str, str]]) -> "CausalGraph":
        drop = {_bikey(a, b) for a, b in edges}
        for key in drop:
            if key not in self._bidirected:
                raise GraphError(f"no edge {key[0]} <-> {key[1]}")
        return CausalGraph(
            self._nodes,
            self._directed,
            {k: p for k, p in self._bidirected.items() if k not in drop},
        )

    def without_outgoing(self, v: str) -> "CausalGraph":
        self._require(v)
        return CausalGraph(
            self._nodes, [(a, b) for a, b in self._directed if a != v], self._bidirected
        )

    def subgraph(self, keep: Iterable[str]) -> "CausalGraph":
        keep = set(keep)
        return CausalGraph(
            [v for v in self._nodes if v in keep],
            [(a, b) for a, b in self._directed if a in keep and b in keep],
            {k: p for k, p in self._bidirected.items() if k[0] in keep and k[1] in keep},
        )


# ---------------------------------------------------------------------------
# acyclicity


def is_acyclic(graph: CausalGraph) -> tuple[bool, list[str] | None]:
    """Return ``(True, None)`` or ``(False, cycle)`` for the directed part."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {v: WHITE for v in graph.nodes}
    for root in graph.nodes:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(graph.children(root)))]
        path = [root]
        color[root] = GREY
        while stack:
            v, it = stack[-1]
            advanced = False
            for w in it:
                if color[w] == GREY:
                    return False, path[path.index(w):]
                if color[w] == WHITE:
                    color[w] = GREY
                    path.append(w)
                    stack.append((w, iter(graph.children(w))))
                    advanced = True
                    break
            if not advanced:
                color[v] = BLACK
                path.pop()
                stack.pop()
    return True, None


def assert_acyclic(graph: CausalGraph) -> CausalGraph:
    ok, cycle = is_acyclic(graph)
    if not ok:
        raise CycleError(cycle)
    return graph


def topological_order(graph: CausalGraph) -> list[str]:
    """Kahn's algorithm; ties resolved by declaration order."""
    indeg = {v: len(graph.parents(v)) for v in graph.nodes}
    ready = [graph.order(v) for v in graph.nodes if indeg[v] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        v = graph.nodes[heapq.heappop(ready)]
        out.append(v)
        for w in graph.children(v):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(ready, graph.order(w))
    if len(out) != len(graph.nodes):
        assert_acyclic(graph)
    return out


def _strongly_connected(graph: CausalGraph) -> dict[str, int]:
    # Tarjan, iterative
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    comp: dict[str, int] = {}
    onstack: set[str] = set()
    stack: list[str] = []
    counter = 0
    ncomp = 0
    for root in graph.nodes:
        if root in index:
            continue
        work = [(root, iter(graph.children(root)))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        onstack.add(root)
        while work:
            v, it = work[-1]
            pushed = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    onstack.add(w)
                    work.append((w, iter(graph.children(w))))
                    pushed = True
                    break
                if w in onstack:
                    low[v] = min(low[v], index[w])
            if pushed:
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    onstack.discard(w)
                    comp[w] = ncomp
                    if w == v:
                        break
                ncomp += 1
    return comp


def unroll(graph: CausalGraph, n_lags: int) -> CausalGraph:
    """Unroll a (possibly cyclic) summary graph over ``n_lags`` time steps.

    Each node ``X`` becomes ``X@0 .. X@n_lags``. Every directed edge gets a
    lagged copy ``X@k -> Y@k+1``; edges outside any directed cycle also keep a
    contemporaneous copy ``X@k -> Y@k``. Every node persists, ``X@k -> X@k+1``.
    Bidirected edges are copied within each slice.
    """
    if not isinstance(n_lags, int) or n_lags < 1:
        raise GraphError("n_lags must be a positive integer")
    comp = _strongly_connected(graph)
    name = "{}@{}".format
    nodes = [name(v, k) for k in range(n_lags + 1) for v in graph.nodes]
    directed = set()
    for k in range(n_lags + 1):
        for a, b in graph.directed:
            if comp[a] != comp[b]:
                directed.add((name(a, k), name(b, k)))
            if k < n_lags:
                directed.add((name(a, k), name(b, k + 1)))
        if k < n_lags:
            for v in graph.nodes:
                directed.add((name(v, k), name(v, k + 1)))
    bidirected = {
        (name(a, k), name(b, k)): p
        for k in range(n_lags + 1)
        for (a, b), p in graph.bidirected.items()
    }
    return assert_acyclic(CausalGraph(nodes, directed, bidirected))


# ---------------------------------------------------------------------------
# d-separation


def _canonical_dag(graph: CausalGraph):
    """Replace each bidirected edge with a hidden fork node.

    Returns parent/child adjacency over integer ids; observed nodes keep their
    declaration index, hidden nodes follow.
    """
    n = len(graph.nodes)
    idx = {v: i for i, v in enumerate(graph.nodes)}
    m = n + len(graph.bidirected)
    parents: list[list[int]] = [[] for _ in range(m)]
    children: list[list[int]] = [[] for _ in range(m)]
    for a, b in graph.directed:
        parents[idx[b]].append(idx[a])
        children[idx[a]].append(idx[b])
    for h, (a, b) in enumerate(sorted(graph.bidirected), start=n):
        for v in (a, b):
            parents[idx[v]].append(h)
            children[h].append(idx[v])
    return idx, parents, children


def _reachable(parents, children, sources: set[int], given: set[int]) -> set[int]:
    """Nodes d-connected to ``sources`` given ``given`` (Bayes-ball walk)."""
    anc = set(given)
    stack = list(given)
    while stack:
        v = stack.pop()
        for p in parents[v]:
            if p not in anc:
                anc.add(p)
                stack.append(p)
    UP, DOWN = 0, 1  # UP: arrived from a child; DOWN: arrived from a parent
    visited: set[tuple[int, int]] = set()
    reach: set[int] = set()
    stack2 = [(s, UP) for s in sources]
    while stack2:
        v, d = stack2.pop()
        if (v, d) in visited:
            continue
        visited.add((v, d))
        if v not in given:
            reach.add(v)
        if d == UP and v not in given:
            stack2.extend((p, UP) for p in parents[v])
            stack2.extend((c, DOWN) for c in children[v])
        elif d == DOWN:
            if v not in given:
                stack2.extend((c, DOWN) for c in children[v])
            if v in anc:
                stack2.extend((p, UP) for p in parents[v])
    return reach


def d_separated(graph: CausalGraph, X: Iterable[str], Y: Iterable[str], Z: Iterable[str] = ()) -> bool:
    """m-separation of ``X`` and ``Y`` given ``Z``.

    Bidirected edges are read as hidden forks, after which ordinary
    d-separation applies.
    """
    X, Y, Z = set(X), set(Y), set(Z)
    for v in X | Y | Z:
        graph._require(v)
    if X & Y or X & Z or Y & Z:
        raise GraphError("X, Y and Z must be pairwise disjoint")
    if not X or not Y:
        return True
    assert_acyclic(graph)
    idx, parents, children = _canonical_dag(graph)
    reach = _reachable(parents, children, {idx[v] for v in X}, {idx[v] for v in Z})
    return not any(idx[v] in reach for v in Y)


# ---------------------------------------------------------------------------
# factorization


def markov_factorization(graph: CausalGraph) -> list[tuple[str, tuple[str, ...]]]:
    """Factors ``(child, parents)`` in topological order.

    Parents are listed nearest-first (reverse topological order), which
    reproduces the conventional ``P(Y|X2,X1)`` rendering.
    """
    if graph.bidirected:
        raise GraphError("graph has bidirected edges; no DAG factorization exists")
    order = topological_order(graph)
    pos = {v: i for i, v in enumerate(order)}
    return [(v, tuple(sorted(graph.parents(v), key=lambda p: -pos[p]))) for v in order]


def render_factorization(factors: Sequence[tuple[str, Sequence[str]]]) -> str:
    parts = []
    for child, pa in factors:
        parts.append(f"P({child}|{','.join(pa)})" if pa else f"P({child})")
    return "·".join(parts)


# ---------------------------------------------------------------------------
# projection


def latent_project(graph: CausalGraph, keep: Iterable[str]) -> CausalGraph:
    """Latent projection of ``graph`` onto ``keep``.

    ``A -> B`` survives when a directed path from A to B runs only through
    dropped nodes. ``A <-> B`` appears when a collider-free path with
    arrowheads at both ends runs only through dropped nodes; its plausibility
    is the best product of bidirected plausibilities over such paths.
    """
    keep = set(keep)
    for v in keep:
        graph._require(v)
    assert_acyclic(graph)
    idx, parents, children = _canonical_dag(graph)
    n = len(graph.nodes)
    m = len(parents)
    weight: dict[tuple[int, int], float] = {}
    for h, ((a, b), p) in enumerate(sorted(graph.bidirected.items()), start=n):
        # the fork carries p on one arm and 1 on the other
        weight[(h, idx[a])] = p
        weight[(h, idx[b])] = 1.0
    kept = [i for i, v in enumerate(graph.nodes) if v in keep]
    kept_set = set(kept)
    dropped = [i for i in range(m) if i not in kept_set]

    directed = set()
    for a in kept:
        seen = set()
        stack = [a]
        while stack:
            v = stack.pop()
            for c in children[v]:
                if c in seen:
                    continue
                seen.add(c)
                if c in kept_set:
                    if c != a:
                        directed.add((graph.nodes[a], graph.nodes[c]))
                else:
                    stack.append(c)

    bidirected: dict[tuple[str, str], float] = {}
    for d in dropped:
        # best product path from d to each kept node through dropped nodes
        best = {d: 1.0}
        heap = [(-1.0, d)]
        done = set()
        reached: dict[int, float] = {}
        while heap:
            negw, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            w = -negw
            if v in kept_set:
                reached[v] = w
                continue
            for c in children[v]:
                cw = w * weight.get((v, c), 1.0)
                if cw > best.get(c, 0.0):
                    best[c] = cw
                    heapq.heappush(heap, (-cw, c))
        for a, b in combinations(sorted(reached), 2):
            key = _bikey(graph.nodes[a], graph.nodes[b])
            p = reached[a] * reached[b]
            if p > bidirected.get(key, 0.0):
                bidirected[key] = p
    return CausalGraph([v for v in graph.nodes if v in keep], directed, bidirected)


# ---------------------------------------------------------------------------
# plausibility


def graph_plausibility(graph: CausalGraph, removed: Iterable[tuple[str, str]] = ()):
    """Plausibility of the graph before and after removing bidirected edges.

    Each bidirected edge is an independent Bernoulli event with probability
    equal to its plausibility. Returns ``(P(kept), P(original), ratio)``.
    """
    removed = {_bikey(a, b) for a, b in removed}
    bd = graph.bidirected
    for key in removed:
        if key not in bd:
            raise GraphError(f"no edge {key[0]} <-> {key[1]}")
    p_orig = 1.0
    p_new = 1.0
    ratio = 1.0
    for key, p in sorted(bd.items()):
        p_orig *= p
        if key in removed:
            p_new *= 1.0 - p
            ratio *= (1.0 - p) / p
        else:
            p_new *= p
    return p_new, p_orig, ratio


def exact_removal_ratio(graph: CausalGraph, removed: Iterable[tuple[str, str]]) -> Fraction:
    """Removal ratio in exact rational arithmetic; used for ordering."""
    bd = graph.bidirected
    r = Fraction(1)
    for a, b in removed:
        p = Fraction(bd[_bikey(a, b)])
        r *= (1 - p) / p
    return r


# ---------------------------------------------------------------------------
# text format


_ARROW_RE = re.compile(r"(<->|->)")


def parse_graph(text: str) -> CausalGraph:
    """Parse the line-oriented graph format.

    ``node NAME`` declares a node, ``A -> B [p]`` a directed edge (p must be
    1.0 when given) and ``A <-> B p`` a bidirected edge. ``#`` starts a comment.
    """
    nodes: list[str] = []
    seen_nodes: set[str] = set()
    directed: list[tuple[str, str]] = []
    dseen: set[tuple[str, str]] = set()
    bidirected: dict[tuple[str, str], float] = {}

    def declare(name, lineno):
        if not NAME_RE.match(name):
            raise GraphSyntaxError(lineno, f"invalid node name {name!r}")
        if name not in seen_nodes:
            seen_nodes.add(name)
            nodes.append(name)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = _ARROW_RE.sub(r" \1 ", line).split()
        if len(tok) == 2 and tok[0] == "node":
            declare(tok[1], lineno)
            continue
        if len(tok) not in (3, 4) or tok[1] not in ("->", "<->"):
            raise GraphSyntaxError(lineno, f"cannot parse {raw.strip()!r}")
        a, arrow, b = tok[:3]
        declare(a, lineno)
        declare(b, lineno)
        if a == b:
            raise GraphSyntaxError(lineno, f"self-loop on {a}")
        if len(tok) == 4:
            try:
                p = float(tok[3])
            except ValueError:
                raise GraphSyntaxError(lineno, f"bad plausibility {tok[3]!r}") from None
            if not (0.0 < p <= 1.0):
                raise GraphSyntaxError(lineno, f"plausibility {p} outside (0, 1]")
        elif arrow == "<->":
            raise GraphSyntaxError(lineno, "bidirected edge requires a plausibility")
        else:
            p = 1.0
        if arrow == "->":
            if p != 1.0:
                raise GraphSyntaxError(lineno, "directed edges have plausibility 1.0")
            if (a, b) in dseen:
                raise GraphSyntaxError(lineno, f"duplicate edge {a} -> {b}")
            dseen.add((a, b))
            directed.append((a, b))
        else:
            key = _bikey(a, b)
            if key in bidirected:
                raise GraphSyntaxError(lineno, f"duplicate edge {a} <-> {b}")
            bidirected[key] = p
    return CausalGraph(nodes, directed, bidirected)


def serialize_graph(graph: CausalGraph) -> str:
    lines = [f"node {v}" for v in graph.nodes]
    lines += [f"{a} -> {b}" for a, b in sorted(graph.directed)]
    lines += [f"{a} <-> {b} {p!r}" for (a, b), p in sorted(graph.bidirected.items())]
    return "\n".join(lines) + "\n"


def read_graph(path) -> CausalGraph:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def write_graph(graph: CausalGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_graph(graph))
