"""``causalpipe`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 not
backdoor-identifiable, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .dataset import Dataset, DataError, load_csv, make_censoring, read_schema, save_csv
from .discovery import (
    benchmark_discovery,
    bootstrap_confidences,
    read_constraints,
    threshold,
    write_benchmark_csv,
)
from .graph import CausalGraph, CycleError, GraphError, assert_acyclic, is_acyclic, read_graph, write_graph
from .identification import (
    EstimandSpec,
    IdentificationError,
    backdoor_paths,
    classify_variables,
    is_backdoor_set,
    most_plausible_backdoor_subgraph,
    render_estimand,
)
from .scm import ScmError, random_linear_gaussian, read_scm, sample
from .sensitivity import sensitivity_curve, write_curve_csv, write_curve_long_csv
from .superlearner import SuperLearnerSpec
from .tmle import NumericalError, tmle_estimate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NOT_IDENTIFIABLE, EXIT_NUMERICAL = 0, 2, 3, 4, 5

DESIGN_FLAGS = (
    ("shd_reversal_cost", "1"),
    ("confidence_undirected_split", "0.5 per direction"),
    ("pc_visit_order", "column order, non-stable variant"),
    ("pc_tier_orientation", "before Meek rules"),
    ("plausibility_model", "independent Bernoulli per bidirected edge"),
    ("projection_plausibility", "max product over generating paths"),
    ("adjustment_search", "minimum size, lexicographic tie-break"),
    ("propensity_clip", "[0.025, 0.975] then renormalize rows"),
    ("logit_clamp", "[1e-4, 1-1e-4]"),
    ("targeting", "full-data refit, one fluctuation per contrast"),
    ("p_value", "two-sided on |psi|/se"),
    ("outcome_scaling", "non-binary outcomes min-max scaled to [0, 1]"),
    ("censoring_coding", "Q=1 observed, intervened to 1"),
    ("sensitivity_se", "reused from the adjusted run"),
)


class NotIdentifiable(Exception):
    pass


class Reporter:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *lines):
        if not self.quiet:
            for line in lines:
                print(line)


# ---------------------------------------------------------------------------
# shared loading


def _out_dir(cfg: PipelineConfig, override) -> Path:
    out = Path(override) if override else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_log(out: Path, cfg: PipelineConfig, command: str, seed: int, extra=()):
    lines = [
        f"command {command}",
        f"config {cfg.source.name}",
        f"config_sha256 {cfg.digest}",
        f"seed {seed}",
    ]
    lines += [f"flag {k} = {v}" for k, v in DESIGN_FLAGS]
    lines += list(extra)
    (out / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_data(cfg: PipelineConfig) -> Dataset:
    path = cfg.require("data")
    if not Path(path).exists():
        raise DataError(f"data file not found: {path}")
    schema = cfg.schema
    if schema != "auto":
        try:
            schema = read_schema(schema)
        except OSError as exc:
            raise ConfigError(f"cannot read schema {schema}: {exc.strerror}") from None
    ds = load_csv(path, schema)
    for col in cfg.censor:
        ds = make_censoring(ds, col)
    return ds


def _load_graph(cfg: PipelineConfig) -> CausalGraph:
    path = cfg.require("graph")
    try:
        g = read_graph(path)
    except OSError as exc:
        raise ConfigError(f"cannot read graph {path}: {exc.strerror}") from None
    return assert_acyclic(g)


def _sl_specs(cfg: PipelineConfig, seed: int) -> tuple[SuperLearnerSpec, SuperLearnerSpec]:
    """Outcome and propensity libraries."""
    try:
        q = SuperLearnerSpec(tuple(cfg.sl.learners), cfg.sl.folds, "regression", seed)
        g = SuperLearnerSpec(tuple(cfg.sl.propensity_learners or cfg.sl.learners), cfg.sl.folds, "propensity", seed)
    except ValueError as exc:
        raise ConfigError(f"sl: {exc}") from None
    return q, g


def _estimand(cfg: PipelineConfig, ds: Dataset | None) -> tuple[EstimandSpec, CausalGraph | None]:
    e = cfg.estimand
    T = cfg.require("estimand.treatment")
    Y = cfg.require("estimand.outcome")
    contrasts = cfg.require("estimand.contrasts")
    graph = None
    if cfg.graph is not None:
        graph = _load_graph(cfg)
    needs_graph = e.confounders == "graph" or e.precision == "graph"
    if needs_graph and graph is None:
        raise ConfigError("graph.path is required when confounders or precision come from the graph")
    censoring = f"Q_{Y}" if Y in cfg.censor else None
    cparents = None if e.censoring_parents in (None, "inherit") else tuple(e.censoring_parents)
    if needs_graph:
        report = classify_variables(graph, T, Y)
        if e.confounders == "graph" and report.adjustment_set is None:
            raise NotIdentifiable(f"no backdoor adjustment set for {T} -> {Y}")
    C = report.adjustment_set if e.confounders == "graph" else tuple(e.confounders)
    if e.precision == "graph":
        R = tuple(v for v in report.of("precision") if v not in C)
    else:
        R = tuple(e.precision)
    if ds is not None:
        for v in (T, Y, *C, *R, *(cparents or ())):
            if v not in ds.names:
                raise ConfigError(f"estimand refers to column {v!r} absent from the data")
    try:
        spec = EstimandSpec(T, Y, contrasts, C, R, censoring, "graph" if needs_graph else "user", cparents)
    except IdentificationError as exc:
        raise ConfigError(f"estimand: {exc}") from None
    return spec, graph


# ---------------------------------------------------------------------------
# commands


def cmd_discover(cfg, seed, out, say):
    ds = _load_data(cfg)
    d = cfg.discovery
    if d.columns:
        ds = ds.select(d.columns)
    else:
        ds = ds.select([v for v in ds.names if not (v.startswith("Q_") and v[2:] in cfg.censor)])
    constraints = None
    if cfg.constraints is not None:
        try:
            constraints = read_constraints(cfg.constraints)
        except OSError as exc:
            raise ConfigError(f"cannot read constraints {cfg.constraints}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    kwargs = {"k": d.knn_k, "n_perm": d.knn_permutations} if d.test == "knn_cmi" else {}
    try:
        M = bootstrap_confidences(ds, d.test, d.alpha, constraints, d.runs, seed, d.max_cond_size, kwargs)
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(f"discovery: {exc}") from None
    M.to_csv(out / "confidences.csv")
    g = threshold(M, d.threshold)
    write_graph(g, out / "discovered.graph")
    say(f"{'cause':>12} {'effect':>12}  confidence")
    for a, b, c in M.edges():
        say(f"{a:>12} {b:>12}  {c:.3f}")
    acyclic, cycle = is_acyclic(g)
    if not acyclic:
        say("thresholded graph contains a cycle: " + " -> ".join(cycle + cycle[:1]))
    _write_log(out, cfg, "discover", seed, [f"runs {d.runs}", f"test {d.test}", f"alpha {d.alpha!r}"])
    return EXIT_OK


def cmd_identify(cfg, seed, out, say):
    graph = _load_graph(cfg)
    T = cfg.require("estimand.treatment")
    Y = cfg.require("estimand.outcome")
    contrasts = cfg.estimand.contrasts or ((1.0, 0.0),)
    lines = [f"treatment {T}", f"outcome {Y}", "backdoor paths:"]
    paths = backdoor_paths(graph, T, Y)
    lines += [f"  {p}" + (f"  [colliders: {', '.join(p.colliders)}]" if p.colliders else "") for p in paths] or ["  none"]
    report = classify_variables(graph, T, Y)
    identifiable = report.adjustment_set is not None
    lines.append("adjustment set: " + ("{" + ", ".join(report.adjustment_set) + "}" if identifiable else "none"))
    lines.append("roles:")
    lines += [f"  {v}: {r}" for v, r in report.roles.items()]
    sub = most_plausible_backdoor_subgraph(graph, T, Y)
    removed = ", ".join(f"{a} <-> {b}" for a, b in sub.removed) or "none"
    lines.append(f"removed bidirected edges: {removed}")
    lines.append(f"plausibility ratio: {sub.ratio!r}")
    target = graph if identifiable else sub.graph
    C = sub.adjustment_set
    R = tuple(v for v in classify_variables(target, T, Y).of("precision") if v not in C)
    spec = EstimandSpec(T, Y, contrasts, C, R, provenance="graph")
    if not identifiable:
        lines.append("estimand below holds only in the reduced subgraph")
    lines.append(render_estimand(target, spec))
    text = "\n".join(lines) + "\n"
    (out / "identify.txt").write_text(text, encoding="utf-8")
    say(*text.rstrip("\n").split("\n"))
    _write_log(out, cfg, "identify", seed)
    if not identifiable:
        raise NotIdentifiable(f"{T} -> {Y} is not backdoor-identifiable in the supplied graph")
    return EXIT_OK


def _fmt(x):
    return "nan" if x is None else f"{x:.4f}"


def cmd_estimate(cfg, seed, out, say):
    ds = _load_data(cfg)
    spec, graph = _estimand(cfg, ds)
    result = tmle_estimate(ds, spec, *_sl_specs(cfg, seed))
    report = result.to_dict()
    report["seed"] = seed
    if graph is not None:
        try:
            report["estimand"] = render_estimand(graph, spec)
        except IdentificationError as exc:
            report["estimand"] = f"unverified: {exc}"
    (out / "estimate.json").write_text(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    say(f"adjustment set C = {{{', '.join(spec.confounders)}}}, precision R = {{{', '.join(spec.precision)}}}")
    say(f"{'contrast':>10} {'naive':>9} {'initial':>9} {'targeted':>9} {'se':>8} {'ci95':>20} {'p':>9}")
    for c in result.contrasts:
        say(
            f"{c.label:>10} {_fmt(c.psi_naive):>9} {_fmt(c.psi_initial):>9} {_fmt(c.psi):>9} "
            f"{_fmt(c.se):>8} {'[' + _fmt(c.ci_lo) + ', ' + _fmt(c.ci_hi) + ']':>20} {c.p_value:>9.3g}"
        )
    for f in result.flags:
        say(f"note: {f}")
    _write_log(out, cfg, "estimate", seed, [f"learners {'; '.join(cfg.sl.learners)}", f"folds {cfg.sl.folds}"])
    return EXIT_OK


def cmd_sensitivity(cfg, seed, out, say):
    ds = _load_data(cfg)
    spec, _ = _estimand(cfg, ds)
    s = cfg.sensitivity
    q_spec, g_spec = _sl_specs(cfg, seed)
    curves = sensitivity_curve(ds, spec, q_spec, s.multipliers, drop_precision=s.drop_precision, g_spec=g_spec)
    write_curve_csv(curves, out / "sensitivity.csv")
    write_curve_long_csv(curves, out / "sensitivity_long.csv")
    for label, c in curves.items():
        say(f"contrast {label}: psi={c.psi:.4f} se={c.se:.4f} delta={c.delta:.4f}")
        if c.crossing is None:
            say("  non-significant at baseline" if not c.significant_at_baseline else "  no listed multiplier reaches 0")
        else:
            say(f"  interval first contains 0 at m={c.crossing:g} (exact threshold {c.critical:.3f})")
    extra = [f"flag sensitivity_unadjusted = drop {'all covariates' if s.drop_precision else 'confounders, keep precision'}"]
    _write_log(out, cfg, "sensitivity", seed, extra)
    return EXIT_OK


def cmd_simulate(cfg, seed, out, say):
    path = cfg.require("simulate.scm")
    try:
        scm = read_scm(path)
    except OSError as exc:
        raise ConfigError(f"cannot read SCM {path}: {exc.strerror}") from None
    except ScmError as exc:
        raise ConfigError(str(exc)) from None
    ds = sample(scm, cfg.simulate.n, seed)
    save_csv(ds, out / "simulated.csv")
    say(f"wrote {ds.n_rows} rows x {len(ds.names)} columns to {out / 'simulated.csv'}")
    _write_log(out, cfg, "simulate", seed, [f"n {cfg.simulate.n}"])
    return EXIT_OK


def cmd_benchmark(cfg, seed, out, say):
    b = cfg.benchmark
    if b.scm is not None:
        scm = read_scm(b.scm)
    else:
        scm = random_linear_gaussian(b.nodes, b.edges, seed)
    rows = benchmark_discovery(scm, b.sample_sizes, b.reps, b.tests, b.alpha, seed)
    write_benchmark_csv(rows, out / "benchmark.csv")
    for test in b.tests:
        for n in b.sample_sizes:
            cell = [r for r in rows if r.test == test and r.N == n]
            say(
                f"{test:>9} N={n:<6} median SHD {np.median([r.shd for r in cell]):>5.1f}  "
                f"median runtime {np.median([r.runtime_s for r in cell]):.4f}s"
            )
    _write_log(out, cfg, "benchmark", seed, ["flag shd_header = reversal counts as one edit"])
    return EXIT_OK


COMMANDS = {
    "discover": cmd_discover,
    "identify": cmd_identify,
    "estimate": cmd_estimate,
    "sensitivity": cmd_sensitivity,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline config file")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    err = lambda msg: print(f"causalpipe {args.command}: {msg}", file=sys.stderr)
    try:
        cfg = load_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        out = _out_dir(cfg, args.out)
        return COMMANDS[args.command](cfg, seed, out, Reporter(args.quiet))
    except ConfigError as exc:
        err(f"config error: {exc}")
        return EXIT_CONFIG
    except CycleError as exc:
        err(f"graph is cyclic: {' -> '.join(exc.cycle + exc.cycle[:1])}")
        return EXIT_CONFIG
    except GraphError as exc:
        err(f"graph error: {exc}")
        return EXIT_CONFIG
    except NotIdentifiable as exc:
        err(str(exc))
        return EXIT_NOT_IDENTIFIABLE
    except DataError as exc:
        err(f"data error: {exc}")
        return EXIT_DATA
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        err(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (IdentificationError, ScmError) as exc:
        err(f"config error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
