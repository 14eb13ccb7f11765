"""Structural causal models: specification, sampling, interventions, true effects.

A model is a list of node equations. Each node draws its exogenous noise from a
private random stream derived from the master seed and the node's declaration
index, so two samples with the same seed share noise node by node. That is
what makes interventional contrasts use common random numbers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .dataset import BINARY, CONTINUOUS, ColumnType, Dataset
from .graph import CausalGraph, assert_acyclic, topological_order

__all__ = [
    "Linear",
    "Polynomial",
    "Logistic",
    "Threshold",
    "Table",
    "Constant",
    "Gaussian",
    "Uniform",
    "NoNoise",
    "NodeSpec",
    "ScmSpec",
    "ScmError",
    "TrueEffect",
    "sample",
    "intervene",
    "true_effect",
    "linear_gaussian_covariance",
    "random_linear_gaussian",
    "parse_scm",
    "read_scm",
    "format_scm",
]


class ScmError(ValueError):
    pass


def _linear_part(coefs: Mapping[str, float], intercept: float, values, n):
    out = np.full(n, float(intercept))
    for p, c in coefs.items():
        out = out + c * values[p]
    return out


# -- mechanisms -------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    coefs: Mapping[str, float] = field(default_factory=dict)
    intercept: float = 0.0

    @property
    def parents(self):
        return tuple(self.coefs)

    def __call__(self, values, e, u, n):
        return _linear_part(self.coefs, self.intercept, values, n) + e


@dataclass(frozen=True)
class Polynomial:
    """``intercept + sum_k coef_k * prod_j parent_j ** power_j``."""

    terms: tuple[tuple[float, tuple[tuple[str, int], ...]], ...] = ()
    intercept: float = 0.0

    @property
    def parents(self):
        seen = []
        for _, factors in self.terms:
            for p, _ in factors:
                if p not in seen:
                    seen.append(p)
        return tuple(seen)

    def __call__(self, values, e, u, n):
        out = np.full(n, float(self.intercept))
        for coef, factors in self.terms:
            term = np.full(n, float(coef))
            for p, power in factors:
                term = term * values[p] ** power
            out = out + term
        return out + e


@dataclass(frozen=True)
class Logistic:
    """Bernoulli draw with success probability ``sigmoid(linear + noise)``."""

    coefs: Mapping[str, float] = field(default_factory=dict)
    intercept: float = 0.0

    @property
    def parents(self):
        return tuple(self.coefs)

    def __call__(self, values, e, u, n):
        prob = expit(_linear_part(self.coefs, self.intercept, values, n) + e)
        return (u < prob).astype(float)


@dataclass(frozen=True)
class Threshold:
    """Ordinal level = number of cutpoints strictly below the latent value."""

    coefs: Mapping[str, float] = field(default_factory=dict)
    cutpoints: tuple[float, ...] = (0.0,)
    intercept: float = 0.0

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cutpoints)
        if not cuts or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise ScmError("cutpoints must be non-empty and strictly increasing")
        object.__setattr__(self, "cutpoints", cuts)

    @property
    def parents(self):
        return tuple(self.coefs)

    def __call__(self, values, e, u, n):
        latent = _linear_part(self.coefs, self.intercept, values, n) + e
        return np.searchsorted(np.asarray(self.cutpoints), latent, side="left").astype(float)


@dataclass(frozen=True)
class Table:
    """Lookup on discrete parents: ``entries[(v1, v2, ...)] + noise``."""

    keys: tuple[str, ...] = ()
    entries: Mapping[tuple, float] = field(default_factory=dict)
    default: float | None = None

    @property
    def parents(self):
        return tuple(self.keys)

    def __call__(self, values, e, u, n):
        if not self.keys:
            return np.full(n, float(self.entries.get((), self.default or 0.0))) + e
        cols = np.column_stack([values[p] for p in self.keys]).astype(np.int64)
        out = np.empty(n)
        for i, row in enumerate(map(tuple, cols)):
            v = self.entries.get(row, self.default)
            if v is None:
                raise ScmError(f"table has no entry for {dict(zip(self.keys, row))}")
            out[i] = v
        return out + e


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    parents = ()

    def __call__(self, values, e, u, n):
        return np.full(n, float(self.value))


# -- noise --------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    sigma: float = 1.0

    def draw(self, rng, n):
        return rng.standard_normal(n) * self.sigma


@dataclass(frozen=True)
class Uniform:
    low: float = -0.5
    high: float = 0.5

    def draw(self, rng, n):
        return rng.uniform(self.low, self.high, n)


@dataclass(frozen=True)
class NoNoise:
    def draw(self, rng, n):
        return np.zeros(n)


@dataclass(frozen=True)
class NodeSpec:
    name: str
    mechanism: object
    noise: object = NoNoise()
    ctype: ColumnType | None = None

    def __post_init__(self):
        if self.ctype is None:
            m = self.mechanism
            if isinstance(m, Logistic):
                ctype = BINARY
            elif isinstance(m, Threshold):
                ctype = ColumnType("ordinal", len(m.cutpoints) + 1)
            else:
                ctype = CONTINUOUS
            object.__setattr__(self, "ctype", ctype)

    @property
    def parents(self) -> tuple[str, ...]:
        return tuple(self.mechanism.parents)


class ScmSpec:
    """An ordered collection of node equations over an acyclic graph."""

    def __init__(self, nodes: Sequence[NodeSpec]):
        self.nodes = tuple(nodes)
        names = [nd.name for nd in self.nodes]
        if len(set(names)) != len(names):
            raise ScmError("duplicate node names")
        self._by_name = {nd.name: nd for nd in self.nodes}
        for nd in self.nodes:
            for p in nd.parents:
                if p not in self._by_name:
                    raise ScmError(f"{nd.name} refers to unknown parent {p!r}")
        self._graph = CausalGraph(names, [(p, nd.name) for nd in self.nodes for p in nd.parents])
        try:
            assert_acyclic(self._graph)
        except ValueError as exc:
            raise ScmError(str(exc)) from None
        self._order = topological_order(self._graph)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(nd.name for nd in self.nodes)

    def __getitem__(self, name: str) -> NodeSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise ScmError(f"unknown node {name!r}") from None

    def graph(self) -> CausalGraph:
        return self._graph

    def __repr__(self):
        return f"ScmSpec({list(self.names)})"


def _node_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def _simulate(scm: ScmSpec, n: int, seed: int) -> dict[str, np.ndarray]:
    if n < 1:
        raise ScmError("N must be at least 1")
    streams = {}
    for i, nd in enumerate(scm.nodes):
        rng = _node_rng(seed, i)
        e = nd.noise.draw(rng, n)
        u = rng.random(n)
        streams[nd.name] = (e, u)
    values: dict[str, np.ndarray] = {}
    for name in scm._order:
        nd = scm[name]
        e, u = streams[name]
        values[name] = np.asarray(nd.mechanism(values, e, u, n), dtype=float)
    return values


def sample(scm: ScmSpec, n: int, seed: int = 0) -> Dataset:
    """Draw ``n`` rows; bit-reproducible for a given seed."""
    values = _simulate(scm, n, seed)
    return Dataset(
        scm.names,
        tuple(nd.ctype for nd in scm.nodes),
        np.column_stack([values[nm] for nm in scm.names]),
    )


def _check_value(nd: NodeSpec, value: float):
    value = float(value)
    t = nd.ctype
    if not math.isfinite(value):
        raise ScmError(f"intervention value for {nd.name} is not finite")
    if t.discrete and (value != round(value) or not 0 <= value <= t.n_levels - 1):
        raise ScmError(f"value {value} outside the range of {nd.name} ({t})")
    return value


def intervene(scm: ScmSpec, assignments: Mapping[str, float]) -> ScmSpec:
    """``do(assignments)``: replace each assigned equation by a constant."""
    for name in assignments:
        scm[name]
    nodes = []
    for nd in scm.nodes:
        if nd.name in assignments:
            value = _check_value(nd, assignments[nd.name])
            nd = replace(nd, mechanism=Constant(value), noise=NoNoise())
        nodes.append(nd)
    return ScmSpec(nodes)


@dataclass(frozen=True)
class TrueEffect:
    value: float
    mc_se: float
    n_mc: int

    def __float__(self):
        return self.value


def true_effect(
    scm: ScmSpec, T: str, t: float, t_prime: float, Y: str, n_mc: int = 10**5, seed: int = 0
) -> TrueEffect:
    """Monte-Carlo ``E[Y | do(T=t)] - E[Y | do(T=t')]`` with common random numbers."""
    if n_mc < 10**4:
        raise ScmError("n_mc must be at least 10**4")
    scm[Y]
    y1 = _simulate(intervene(scm, {T: t}), n_mc, seed)[Y]
    y0 = _simulate(intervene(scm, {T: t_prime}), n_mc, seed)[Y]
    diff = y1 - y0
    return TrueEffect(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n_mc)), n_mc)


# -- linear-Gaussian helpers ----------------------------------------------------


def linear_gaussian_covariance(scm: ScmSpec) -> np.ndarray:
    """Population covariance of a linear SCM with Gaussian (or no) noise.

    With ``X = B^T X + E``, ``cov = (I - B)^-T D (I - B)^-1``.
    """
    names = scm.names
    idx = {v: i for i, v in enumerate(names)}
    p = len(names)
    B = np.zeros((p, p))
    D = np.zeros(p)
    for nd in scm.nodes:
        if not isinstance(nd.mechanism, (Linear, Constant)):
            raise ScmError(f"{nd.name} is not linear")
        if isinstance(nd.noise, Gaussian):
            D[idx[nd.name]] = nd.noise.sigma**2
        elif not isinstance(nd.noise, NoNoise):
            raise ScmError(f"{nd.name} noise is not Gaussian")
        if isinstance(nd.mechanism, Linear):
            for par, c in nd.mechanism.coefs.items():
                B[idx[par], idx[nd.name]] = c
    inv = np.linalg.inv(np.eye(p) - B)
    return inv.T @ np.diag(D) @ inv


def random_linear_gaussian(
    n_nodes: int,
    n_edges: int,
    seed: int = 0,
    coef_range: tuple[float, float] = (0.5, 1.5),
    sigma: float = 1.0,
    prefix: str = "X",
) -> ScmSpec:
    """Random DAG with exactly ``n_edges`` edges and signed uniform coefficients."""
    max_edges = n_nodes * (n_nodes - 1) // 2
    if not 0 <= n_edges <= max_edges:
        raise ScmError(f"n_edges must be in [0, {max_edges}]")
    rng = np.random.default_rng(seed)
    names = [f"{prefix}{i + 1}" for i in range(n_nodes)]
    order = rng.permutation(n_nodes)
    pairs = [(order[i], order[j]) for i in range(n_nodes) for j in range(i + 1, n_nodes)]
    chosen = rng.choice(len(pairs), size=n_edges, replace=False)
    coefs: dict[int, dict[str, float]] = {i: {} for i in range(n_nodes)}
    for c in sorted(chosen):
        a, b = pairs[c]
        mag = rng.uniform(*coef_range)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        coefs[b][names[a]] = float(sign * mag)
    nodes = [NodeSpec(names[i], Linear(coefs[i], 0.0), Gaussian(sigma)) for i in range(n_nodes)]
    return ScmSpec(nodes)


# -- text format ------------------------------------------------------------------

_LINE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_.@-]*)\s*=\s*(\w+)\((.*?)\)\s*(?:\+\s*(\w+)(?:\((.*?)\))?)?\s*$")


def _kv_args(text: str, lineno: int):
    out = []
    for part in filter(None, (s.strip() for s in text.split(","))):
        if ":" not in part:
            raise ScmError(f"line {lineno}: expected key:value, got {part!r}")
        key, val = part.rsplit(":", 1)
        out.append((key.strip(), val.strip()))
    return out


def _float(s: str, lineno: int) -> float:
    try:
        return float(s)
    except ValueError:
        raise ScmError(f"line {lineno}: bad number {s!r}") from None


def _parse_mechanism(kind: str, args: str, lineno: int):
    if kind == "constant":
        return Constant(_float(args.strip(), lineno))
    kv = _kv_args(args, lineno)
    if kind in ("linear", "logistic", "threshold"):
        coefs, intercept, cuts = {}, 0.0, None
        for key, val in kv:
            if key == "intercept":
                intercept = _float(val, lineno)
            elif key == "cuts" and kind == "threshold":
                cuts = tuple(_float(c, lineno) for c in val.split(";"))
            else:
                coefs[key] = _float(val, lineno)
        if kind == "linear":
            return Linear(coefs, intercept)
        if kind == "logistic":
            return Logistic(coefs, intercept)
        if cuts is None:
            raise ScmError(f"line {lineno}: threshold needs cuts:c1;c2;...")
        return Threshold(coefs, cuts, intercept)
    if kind == "polynomial":
        terms, intercept = [], 0.0
        for key, val in kv:
            if key == "intercept":
                intercept = _float(val, lineno)
                continue
            factors = []
            for f in key.split("*"):
                name, _, power = f.partition("^")
                factors.append((name.strip(), int(power) if power else 1))
            terms.append((_float(val, lineno), tuple(factors)))
        return Polynomial(tuple(terms), intercept)
    if kind == "table":
        keys: tuple[str, ...] | None = None
        entries, default = {}, None
        for key, val in kv:
            if key == "default":
                default = _float(val, lineno)
                continue
            assigns = [a.split("=") for a in key.split("&")]
            names = tuple(a[0].strip() for a in assigns)
            if keys is None:
                keys = names
            elif names != keys:
                raise ScmError(f"line {lineno}: table keys must list the same parents in the same order")
            entries[tuple(int(_float(a[1], lineno)) for a in assigns)] = _float(val, lineno)
        return Table(keys or (), entries, default)
    raise ScmError(f"line {lineno}: unknown mechanism {kind!r}")


def _parse_noise(kind: str | None, args: str | None, lineno: int):
    if kind is None or kind == "none":
        return NoNoise()
    vals = [_float(s, lineno) for s in (args or "").split(",") if s.strip()]
    if kind == "gaussian" and len(vals) == 1:
        return Gaussian(vals[0])
    if kind == "uniform" and len(vals) == 2:
        return Uniform(*vals)
    raise ScmError(f"line {lineno}: bad noise term {kind}({args})")


def parse_scm(text: str) -> ScmSpec:
    """Parse ``Y = linear(X1:0.5, X2:-0.2, intercept:0) + gaussian(1.0)`` lines."""
    nodes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise ScmError(f"line {lineno}: cannot parse {line!r}")
        name, kind, args, nkind, nargs = m.groups()
        nodes.append(NodeSpec(name, _parse_mechanism(kind, args, lineno), _parse_noise(nkind, nargs, lineno)))
    return ScmSpec(nodes)


def read_scm(path) -> ScmSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scm(fh.read())


def _fmt_kv(coefs, intercept):
    parts = [f"{k}:{v!r}" for k, v in coefs.items()]
    parts.append(f"intercept:{intercept!r}")
    return ", ".join(parts)


def format_scm(scm: ScmSpec) -> str:
    lines = []
    for nd in scm.nodes:
        m = nd.mechanism
        if isinstance(m, Linear):
            body = f"linear({_fmt_kv(m.coefs, m.intercept)})"
        elif isinstance(m, Logistic):
            body = f"logistic({_fmt_kv(m.coefs, m.intercept)})"
        elif isinstance(m, Threshold):
            cuts = ";".join(repr(c) for c in m.cutpoints)
            body = f"threshold({_fmt_kv(m.coefs, m.intercept)}, cuts:{cuts})"
        elif isinstance(m, Polynomial):
            terms = [
                "*".join(f"{p}^{k}" if k != 1 else p for p, k in factors) + f":{c!r}" for c, factors in m.terms
            ]
            body = f"polynomial({', '.join(terms + [f'intercept:{m.intercept!r}'])})"
        elif isinstance(m, Table):
            items = ["&".join(f"{k}={v}" for k, v in zip(m.keys, key)) + f":{val!r}" for key, val in m.entries.items()]
            if m.default is not None:
                items.append(f"default:{m.default!r}")
            body = f"table({', '.join(items)})"
        else:
            body = f"constant({m.value!r})"
        n = nd.noise
        if isinstance(n, Gaussian):
            body += f" + gaussian({n.sigma!r})"
        elif isinstance(n, Uniform):
            body += f" + uniform({n.low!r}, {n.high!r})"
        lines.append(f"{nd.name} = {body}")
    return "\n".join(lines) + "\n"
