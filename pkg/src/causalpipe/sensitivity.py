"""Delta-family sensitivity analysis for unobserved confounding."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

from .dataset import Dataset
from .identification import EstimandSpec
from .superlearner import SuperLearnerSpec
from .tmle import ContrastResult, TargetedResult, tmle_estimate

__all__ = [
    "DEFAULT_MULTIPLIERS",
    "SensitivityRow",
    "SensitivityCurve",
    "delta_curve",
    "crossing_multiplier",
    "critical_multiplier",
    "sensitivity_curve",
    "write_curve_csv",
    "write_curve_long_csv",
]

DEFAULT_MULTIPLIERS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)
Z95 = 1.96


@dataclass(frozen=True)
class SensitivityRow:
    m: float
    lo: float
    hi: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class SensitivityCurve:
    """Bounds psi -/+ m * delta with the adjusted run's SE reused for the shifted intervals."""

    contrast: str
    psi: float
    se: float
    delta: float
    psi_unadjusted: float
    rows: tuple[SensitivityRow, ...]
    crossing: float | None
    critical: float | None

    @property
    def significant_at_baseline(self) -> bool:
        return not (self.psi - Z95 * self.se <= 0.0 <= self.psi + Z95 * self.se)


def delta_curve(psi: float, se: float, delta: float, multipliers: Sequence[float] = DEFAULT_MULTIPLIERS):
    if delta < 0 or se < 0:
        raise ValueError("delta and se must be non-negative")
    rows = []
    for m in multipliers:
        if m < 0:
            raise ValueError("multipliers must be non-negative")
        shift = m * delta
        lo, hi = psi - shift, psi + shift
        rows.append(SensitivityRow(float(m), lo, hi, lo - Z95 * se, hi + Z95 * se))
    return tuple(rows)


def crossing_multiplier(rows: Sequence[SensitivityRow], psi: float, se: float) -> float | None:
    """Smallest listed m whose shifted interval contains 0; None when psi is already non-significant."""
    if psi - Z95 * se <= 0.0 <= psi + Z95 * se:
        return None
    for r in sorted(rows, key=lambda r: r.m):
        if r.ci_lo <= 0.0 <= r.ci_hi:
            return r.m
    return None


def critical_multiplier(psi: float, se: float, delta: float) -> float | None:
    """Exact m at which the shifted interval first touches 0."""
    margin = abs(psi) - Z95 * se
    if margin <= 0 or delta <= 0:
        return None
    return margin / delta


def _curve(label, adjusted: ContrastResult, unadjusted: ContrastResult, multipliers) -> SensitivityCurve:
    delta = abs(adjusted.psi - unadjusted.psi)
    rows = delta_curve(adjusted.psi, adjusted.se, delta, multipliers)
    return SensitivityCurve(
        label,
        adjusted.psi,
        adjusted.se,
        delta,
        unadjusted.psi,
        rows,
        crossing_multiplier(rows, adjusted.psi, adjusted.se),
        critical_multiplier(adjusted.psi, adjusted.se, delta),
    )


def sensitivity_curve(
    ds: Dataset,
    spec: EstimandSpec,
    sl_spec: SuperLearnerSpec | None = None,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
    adjusted: TargetedResult | None = None,
    drop_precision: bool = False,
    g_spec: SuperLearnerSpec | None = None,
) -> dict[str, SensitivityCurve]:
    """Curves per contrast label.

    The unit shift is |psi_adjusted - psi_unadjusted| where the unadjusted run
    drops the confounders (and the precision set too with ``drop_precision``).
    """
    if adjusted is None:
        adjusted = tmle_estimate(ds, spec, sl_spec, g_spec)
    bare = replace(spec, confounders=(), precision=() if drop_precision else spec.precision)
    unadjusted = tmle_estimate(ds, bare, sl_spec, g_spec)
    return {c.label: _curve(c.label, c, unadjusted[c.label], multipliers) for c in adjusted.contrasts}


def write_curve_csv(curves: dict[str, SensitivityCurve], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["contrast", "m", "lo", "hi", "ci_lo", "ci_hi"])
        for label, curve in curves.items():
            for r in curve.rows:
                w.writerow([label, repr(r.m), repr(r.lo), repr(r.hi), repr(r.ci_lo), repr(r.ci_hi)])


def write_curve_long_csv(curves: dict[str, SensitivityCurve], path) -> None:
    """One value per row, for plotting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["contrast", "m", "quantity", "value"])
        for label, curve in curves.items():
            for r in curve.rows:
                for q in ("lo", "hi", "ci_lo", "ci_hi"):
                    w.writerow([label, repr(r.m), q, repr(getattr(r, q))])
