"""Plug-in and targeted (TMLE) estimation of average treatment effect contrasts."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .dataset import Dataset, DataError, unscale_effect
from .identification import EstimandSpec, IdentificationError, format_level
from .superlearner import FittedSuperLearner, SuperLearnerSpec, sl_fit

__all__ = [
    "G_BOUNDS",
    "Q_CLAMP",
    "NumericalError",
    "Propensity",
    "Fluctuation",
    "ContrastResult",
    "TargetedResult",
    "clip_propensity",
    "fit_propensity",
    "clever_covariates",
    "tmle_fluctuate",
    "fit_outcome",
    "plug_in_ate",
    "naive_difference",
    "tmle_estimate",
]

G_BOUNDS = (0.025, 0.975)
Q_CLAMP = 1e-4


class NumericalError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# design matrices


def _levels(ds: Dataset, T: str) -> np.ndarray:
    ctype = ds.type_of(T)
    if not ctype.discrete:
        raise DataError(f"treatment {T!r} must be discrete")
    col = ds.column(T)
    if np.isnan(col).any():
        raise DataError(f"treatment {T!r} has missing values")
    levels = np.unique(col)
    if levels.size < 2:
        raise DataError(f"treatment {T!r} has a single observed level")
    return levels


def _onehot(t: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # drop the first level as reference
    return (t[:, None] == levels[None, 1:]).astype(float)


def _design(ds: Dataset, spec: EstimandSpec, levels, t_values=None, q_value=None) -> np.ndarray:
    n = ds.n_rows
    t = ds.column(spec.treatment) if t_values is None else np.broadcast_to(t_values, (n,)).astype(float)
    parts = [_onehot(t, levels)]
    if spec.censoring is not None:
        q = ds.column(spec.censoring) if q_value is None else np.full(n, float(q_value))
        parts.append(q[:, None])
    covs = list(spec.confounders) + list(spec.precision)
    if covs:
        parts.append(ds.columns(covs))
    return np.hstack(parts)


# ---------------------------------------------------------------------------
# propensity


@dataclass(frozen=True, eq=False)
class Propensity:
    """Clipped, renormalized P(T = level | C); columns follow ``levels``."""

    G: np.ndarray
    levels: np.ndarray
    raw_min: float
    raw_max: float
    n_clipped: int
    weights: tuple = ()
    raw: np.ndarray | None = None

    def column(self, level: float) -> np.ndarray:
        idx = np.nonzero(self.levels == level)[0]
        if idx.size == 0:
            raise IdentificationError(f"level {format_level(level)} not observed")
        return self.G[:, idx[0]]


def clip_propensity(raw: np.ndarray, bounds: tuple[float, float] = G_BOUNDS):
    """Clip each entry to ``bounds`` then renormalize rows; returns (G, number of clipped entries)."""
    lo, hi = bounds
    raw = np.asarray(raw, dtype=float)
    n_clipped = int(np.count_nonzero((raw < lo) | (raw > hi)))
    G = np.clip(raw, lo, hi)
    return G / G.sum(axis=1, keepdims=True), n_clipped


def fit_propensity(ds: Dataset, T: str, C, spec: SuperLearnerSpec | None = None, bounds=G_BOUNDS) -> Propensity:
    """Generalized propensity score; empty C gives empirical level frequencies."""
    levels = _levels(ds, T)
    t = ds.column(T)
    idx = np.searchsorted(levels, t)
    counts = np.bincount(idx, minlength=levels.size)
    if counts.min() < 2:
        raise DataError(f"treatment level {format_level(levels[counts.argmin()])} has fewer than 2 rows")
    C = list(C)
    weights = ()
    if not C:
        raw = np.tile(counts / counts.sum(), (ds.n_rows, 1))
    else:
        spec = (spec or SuperLearnerSpec()).with_task("propensity")
        fit = sl_fit(ds.columns(C), idx, spec, n_classes=levels.size)
        raw = fit.predict(ds.columns(C))
        weights = tuple(zip(fit.names, map(float, fit.weights)))
    G, n_clipped = clip_propensity(raw, bounds)
    return Propensity(G, levels, float(raw.min()), float(raw.max()), n_clipped, weights, raw)


def clever_covariates(t: np.ndarray, g_t: np.ndarray, g_tp: np.ndarray, contrast):
    """H for the observed rows and its counterfactual columns H(t), H(t')."""
    level, ref = contrast
    if np.any(g_t <= 0) or np.any(g_tp <= 0):
        raise NumericalError("zero propensity after clipping")
    h_t = 1.0 / g_t
    h_tp = -1.0 / g_tp
    H = np.where(t == level, h_t, 0.0) + np.where(t == ref, h_tp, 0.0)
    return H, h_t, h_tp


# ---------------------------------------------------------------------------
# fluctuation


@dataclass(frozen=True)
class Fluctuation:
    epsilon: float
    converged: bool
    iterations: int
    score: float


def _clamped_logit(q):
    return logit(np.clip(q, Q_CLAMP, 1 - Q_CLAMP))


def tmle_fluctuate(y, q0, H, tol: float = 1e-12, max_iter: int = 100) -> Fluctuation:
    """Solve for eps in the one-parameter logistic submodel logit Q = logit Q0 + eps H.

    Newton steps on the mean score, halved while the quasi-log-likelihood
    drops. Falls back to eps = 0 with ``converged=False`` on failure.
    """
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    if not np.any(H):
        return Fluctuation(0.0, True, 0, 0.0)
    off = _clamped_logit(np.asarray(q0, dtype=float))

    def loglik(e):
        eta = off + e * H
        return np.mean(y * eta - np.logaddexp(0.0, eta))

    def score(e):
        return float(np.mean(H * (y - expit(off + e * H))))

    eps = 0.0
    s = score(eps)
    ll = loglik(eps)
    for it in range(1, max_iter + 1):
        if abs(s) < tol:
            return Fluctuation(eps, True, it - 1, s)
        mu = expit(off + eps * H)
        info = float(np.mean(H * H * mu * (1 - mu)))
        if not info > 0:
            break
        step = s / info
        new = eps + step
        new_ll = loglik(new)
        while new_ll < ll - 1e-15 and abs(step) > 1e-15:
            step /= 2
            new = eps + step
            new_ll = loglik(new)
        if new == eps:
            # no representable progress left
            if abs(s) < 1e-8:
                return Fluctuation(eps, True, it, s)
            break
        eps, ll = new, new_ll
        s = score(eps)
    if abs(s) < tol:
        return Fluctuation(eps, True, max_iter, s)
    return Fluctuation(0.0, False, max_iter, s)


# ---------------------------------------------------------------------------
# estimators


def fit_outcome(ds: Dataset, spec: EstimandSpec, y: np.ndarray, sl_spec: SuperLearnerSpec, levels) -> FittedSuperLearner:
    X = _design(ds, spec, levels)
    return sl_fit(X, y, sl_spec.with_task("regression"), strata=ds.column(spec.treatment))


def _counterfactual(Q: FittedSuperLearner, ds, spec, levels, level) -> np.ndarray:
    q = None if spec.censoring is None else 1.0
    return Q.predict(_design(ds, spec, levels, t_values=level, q_value=q))


def plug_in_ate(Q: FittedSuperLearner, ds: Dataset, spec: EstimandSpec) -> dict:
    """Average of Q(t, row) - Q(t', row) over all rows, per contrast label."""
    levels = _levels(ds, spec.treatment)
    out = {}
    for contrast in spec.contrasts:
        if contrast[0] == contrast[1]:
            out[spec.label(contrast)] = 0.0
            continue
        for v in contrast:
            if v not in levels:
                warnings.warn(f"contrast level {format_level(v)} absent from data", stacklevel=2)
        q1 = _counterfactual(Q, ds, spec, levels, contrast[0])
        q0 = _counterfactual(Q, ds, spec, levels, contrast[1])
        out[spec.label(contrast)] = float(np.mean(q1 - q0))
    return out


def naive_difference(y, t, contrast, observed=None) -> float:
    keep = np.ones(len(y), dtype=bool) if observed is None else observed.astype(bool)
    a = y[keep & (t == contrast[0])]
    b = y[keep & (t == contrast[1])]
    if a.size == 0 or b.size == 0:
        raise DataError(f"empty treatment arm for contrast {format_level(contrast[0])}-{format_level(contrast[1])}")
    return float(a.mean() - b.mean())


@dataclass(frozen=True)
class ContrastResult:
    contrast: tuple[float, float]
    psi_naive: float
    psi_initial: float
    psi: float
    epsilon: float
    se: float
    ci_lo: float
    ci_hi: float
    p_value: float
    converged: bool
    psi_original: float | None = None
    ci_original: tuple[float, float] | None = None
    psi_naive_original: float | None = None

    @property
    def label(self) -> str:
        return f"{format_level(self.contrast[0])}-{format_level(self.contrast[1])}"


@dataclass(frozen=True, eq=False)
class TargetedResult:
    spec: EstimandSpec
    contrasts: tuple[ContrastResult, ...]
    n: int
    propensity_min: float
    propensity_max: float
    n_clipped: int
    outcome_bounds: tuple[float, float] | None
    outcome_weights: tuple
    propensity_weights: tuple
    influence: dict = field(repr=False, default_factory=dict)
    flags: tuple[str, ...] = ()

    def __getitem__(self, label) -> ContrastResult:
        for c in self.contrasts:
            if c.label == label or c.contrast == label:
                return c
        raise KeyError(label)

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float):
                return x if math.isfinite(x) else None
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        return clean(
            {
                "treatment": self.spec.treatment,
                "outcome": self.spec.outcome,
                "confounders": list(self.spec.confounders),
                "precision": list(self.spec.precision),
                "censoring": self.spec.censoring,
                "n": self.n,
                "outcome_bounds": list(self.outcome_bounds) if self.outcome_bounds else None,
                "propensity_min_raw": self.propensity_min,
                "propensity_max_raw": self.propensity_max,
                "propensity_clip_bounds": list(G_BOUNDS),
                "propensity_n_clipped": self.n_clipped,
                "outcome_weights": {k: v for k, v in self.outcome_weights},
                "propensity_weights": {k: v for k, v in self.propensity_weights},
                "flags": list(self.flags),
                "contrasts": {c.label: {k: v for k, v in asdict(c).items()} for c in self.contrasts},
            }
        )


def _outcome_scale(ds: Dataset, Y: str):
    ctype = ds.type_of(Y)
    y = ds.column(Y)
    if np.isnan(y).any():
        raise DataError(f"outcome {Y!r} has missing values; apply make_censoring first")
    if ctype.kind == "binary":
        return y.astype(float), None
    if ctype.kind == "categorical":
        raise DataError(f"outcome {Y!r} is categorical; use a binary or numeric outcome")
    if Y in ds.bounds:
        # already on [0, 1]
        return y.astype(float), ds.bounds[Y]
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DataError(f"outcome {Y!r} is constant")
    return np.clip((y - lo) / (hi - lo), 0.0, 1.0), (lo, hi)


def tmle_estimate(
    ds: Dataset,
    spec: EstimandSpec,
    sl_spec: SuperLearnerSpec | None = None,
    g_spec: SuperLearnerSpec | None = None,
) -> TargetedResult:
    """Targeted estimate, IF-based standard error and Wald inference for every contrast.

    Non-binary outcomes are min-max scaled to [0, 1]; estimates are reported on
    that scale and, alongside, in original units. ``g_spec`` sets a separate
    library for the propensity and censoring models. With a censoring column the
    intervention also sets it to 1 and the clever covariate carries the
    inverse probability of remaining observed.
    """
    sl_spec = sl_spec or SuperLearnerSpec()
    cols = [spec.treatment, spec.outcome, *spec.confounders, *spec.precision]
    if spec.censoring:
        cols.append(spec.censoring)
        cols.extend(spec.censoring_parents or ())
    for c in cols:
        ds.index(c)
    if ds.has_missing(cols):
        raise DataError("missing values present; apply make_censoring first")
    levels = _levels(ds, spec.treatment)
    spec.validate_levels(levels)
    y, bounds = _outcome_scale(ds, spec.outcome)
    t = ds.column(spec.treatment)
    n = ds.n_rows

    Q = fit_outcome(ds, spec, y, sl_spec, levels)
    g_spec = g_spec or sl_spec
    g = fit_propensity(ds, spec.treatment, spec.confounders, g_spec.with_task("propensity", g_spec.seed + 1))
    flags = []
    observed = None
    cens = None
    if spec.censoring:
        observed = ds.column(spec.censoring)
        cens = _censoring_model(ds, spec, levels, g_spec)

    q_obs = Q.predict(_design(ds, spec, levels))
    results = []
    influence = {}
    for contrast in spec.contrasts:
        level, ref = contrast
        label = spec.label(contrast)
        g_t, g_r = g.column(level), g.column(ref)
        if cens is not None:
            g_t = g_t * cens(level)
            g_r = g_r * cens(ref)
        H, h_t, h_r = clever_covariates(t, g_t, g_r, contrast)
        if observed is not None:
            H = H * observed
        q_t = _counterfactual(Q, ds, spec, levels, level)
        q_r = _counterfactual(Q, ds, spec, levels, ref)
        psi_init = float(np.mean(q_t - q_r))
        if level == ref:
            fl = Fluctuation(0.0, True, 0, 0.0)
        else:
            fl = tmle_fluctuate(y, q_obs, H)
        if not fl.converged:
            flags.append(f"fluctuation_not_converged[{label}]")
        eps = fl.epsilon
        qs_obs = expit(_clamped_logit(q_obs) + eps * H)
        qs_t = expit(_clamped_logit(q_t) + eps * h_t)
        qs_r = expit(_clamped_logit(q_r) + eps * h_r)
        psi = float(np.mean(qs_t - qs_r))
        IF = H * (y - qs_obs) + (qs_t - qs_r) - psi
        se = float(np.sqrt(np.mean(IF**2) / n))
        if not np.isfinite(se) or not np.isfinite(psi):
            raise NumericalError(f"non-finite estimate for contrast {label}")
        ci = (psi - 1.96 * se, psi + 1.96 * se)
        if se > 0:
            p = float(2.0 * stats.norm.sf(abs(psi) / se))
        else:
            p = 1.0 if psi == 0 else 0.0
        naive = naive_difference(y, t, contrast, observed) if level != ref else 0.0
        extra = {}
        if bounds is not None:
            extra = dict(
                psi_original=unscale_effect(bounds, psi),
                ci_original=(unscale_effect(bounds, ci[0]), unscale_effect(bounds, ci[1])),
                psi_naive_original=unscale_effect(bounds, naive),
            )
        results.append(
            ContrastResult(
                (float(level), float(ref)), naive, psi_init, psi, eps, se, ci[0], ci[1], p, fl.converged, **extra
            )
        )
        influence[label] = IF
    if g.n_clipped:
        flags.append(f"propensity_clipped={g.n_clipped}")
    return TargetedResult(
        spec,
        tuple(results),
        n,
        g.raw_min,
        g.raw_max,
        g.n_clipped,
        bounds,
        tuple(zip(Q.names, map(float, Q.weights))),
        g.weights,
        influence,
        tuple(flags),
    )


def _censoring_model(ds: Dataset, spec: EstimandSpec, levels, sl_spec: SuperLearnerSpec):
    """Returns level -> P(observed | T = level, C) per row, clipped like a propensity."""
    qcol = ds.column(spec.censoring)
    if set(np.unique(qcol)) - {0.0, 1.0}:
        raise DataError(f"censoring column {spec.censoring!r} must be 0/1")
    if qcol.min() == 1.0:
        return lambda level: np.ones(ds.n_rows)
    t = ds.column(spec.treatment)
    if spec.censoring_parents is None:
        C = list(spec.confounders) + list(spec.precision)
    else:
        C = list(spec.censoring_parents)

    def design(tv):
        parts = [_onehot(tv, levels)]
        if C:
            parts.append(ds.columns(C))
        return np.hstack(parts)

    fit = sl_fit(design(t), qcol.astype(int), sl_spec.with_task("propensity", sl_spec.seed + 2), n_classes=2)

    def prob(level):
        raw = fit.predict(design(np.full(ds.n_rows, float(level))))
        G, _ = clip_propensity(raw)
        return G[:, 1]

    return prob
