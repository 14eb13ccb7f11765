from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from causalpipe.identification import EstimandSpec
from causalpipe.scm import parse_scm, sample
from causalpipe.sensitivity import (
    DEFAULT_MULTIPLIERS,
    critical_multiplier,
    crossing_multiplier,
    delta_curve,
    sensitivity_curve,
    write_curve_csv,
)
from causalpipe.superlearner import SuperLearnerSpec
from causalpipe.tmle import tmle_estimate

SMALL = SuperLearnerSpec(("intercept_only", "linear_ridge(0.0)", "logistic_ridge(0.0)"), k_folds=5)
SCM = """
C = linear() + gaussian(1)
R = linear() + gaussian(1)
T = logistic(C:1.0)
Y = logistic(T:1.0, C:1.0, R:0.5, intercept:-0.5)
"""


def test_hand_arithmetic():
    rows = delta_curve(0.25, 0.03, 0.1)
    # 1.96 * 0.03 = 0.0588, margin 0.1912, so the interval first touches 0 at m = 1.912
    assert critical_multiplier(0.25, 0.03, 0.1) == pytest.approx(1.912, abs=1e-12)
    assert crossing_multiplier(rows, 0.25, 0.03) == 2.0
    r15 = rows[DEFAULT_MULTIPLIERS.index(1.5)]
    assert r15.ci_lo == pytest.approx(0.25 - 0.15 - 0.0588, abs=1e-15) and r15.ci_lo > 0


def test_negative_estimate_mirrors():
    rows = delta_curve(-0.25, 0.03, 0.1)
    assert crossing_multiplier(rows, -0.25, 0.03) == 2.0
    assert critical_multiplier(-0.25, 0.03, 0.1) == pytest.approx(1.912, abs=1e-12)


def test_non_significant_has_no_crossing():
    rows = delta_curve(0.05, 0.03, 0.1)
    assert crossing_multiplier(rows, 0.05, 0.03) is None
    assert critical_multiplier(0.05, 0.03, 0.1) is None


def test_zero_delta_rows_identical():
    rows = delta_curve(0.3, 0.05, 0.0)
    assert len({(r.lo, r.hi, r.ci_lo, r.ci_hi) for r in rows}) == 1
    assert crossing_multiplier(rows, 0.3, 0.05) is None


def test_unsorted_multipliers():
    a = delta_curve(0.25, 0.03, 0.1, [2.5, 0.0, 2.0, 1.0])
    assert crossing_multiplier(a, 0.25, 0.03) == 2.0


def test_invalid_inputs():
    with pytest.raises(ValueError):
        delta_curve(0.1, 0.01, -1.0)
    with pytest.raises(ValueError):
        delta_curve(0.1, 0.01, 0.1, [-1])


@given(
    st.integers(-1000, 1000),
    st.integers(0, 100),
    st.integers(0, 100),
    st.lists(st.integers(0, 40), min_size=1, max_size=8),
)
def test_width_exactly_linear(psi_k, se_k, delta_k, ms):
    # dyadic inputs keep every float operation exact
    psi, se, delta = psi_k / 64, se_k / 256, delta_k / 32
    mults = [m / 4 for m in ms]
    for r in delta_curve(psi, se, delta, mults):
        assert Fraction(r.hi) - Fraction(r.lo) == 2 * Fraction(r.m) * Fraction(delta)
        assert Fraction(r.lo) + Fraction(r.hi) == 2 * Fraction(psi)


@given(st.floats(-1, 1), st.floats(0, 0.2), st.floats(0, 0.5))
def test_intervals_nested_in_m(psi, se, delta):
    rows = delta_curve(psi, se, delta, [0, 0.5, 1, 2, 4])
    for a, b in zip(rows, rows[1:]):
        assert b.ci_lo <= a.ci_lo and b.ci_hi >= a.ci_hi


@pytest.fixture(scope="module")
def run():
    ds = sample(parse_scm(SCM), 1500, 21)
    spec = EstimandSpec("T", "Y", [(1, 0)], ("C",), ("R",))
    adjusted = tmle_estimate(ds, spec, SMALL)
    return ds, spec, adjusted, sensitivity_curve(ds, spec, SMALL, adjusted=adjusted)


def test_multiplier_zero_reproduces_estimate(run):
    _, _, adjusted, curves = run
    c, base = curves["1-0"], adjusted["1-0"]
    r0 = c.rows[0]
    assert r0.m == 0.0
    assert r0.lo == base.psi and r0.hi == base.psi
    assert r0.ci_lo == base.ci_lo and r0.ci_hi == base.ci_hi


def test_fixed_run_crossing_by_hand(run):
    ds, spec, adjusted, curves = run
    c = curves["1-0"]
    unadj = tmle_estimate(ds, EstimandSpec("T", "Y", [(1, 0)], (), ("R",)), SMALL)["1-0"]
    delta = abs(adjusted["1-0"].psi - unadj.psi)
    assert c.delta == delta and c.psi_unadjusted == unadj.psi
    psi, se = c.psi, c.se
    expected = None
    if abs(psi) > 1.96 * se:
        for m in DEFAULT_MULTIPLIERS:
            if psi - m * delta - 1.96 * se <= 0 <= psi + m * delta + 1.96 * se:
                expected = m
                break
        assert c.critical == (abs(psi) - 1.96 * se) / delta
    assert expected is not None and c.crossing == expected


def test_curve_csv(run, tmp_path):
    write_curve_csv(run[3], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "contrast,m,lo,hi,ci_lo,ci_hi"
    assert len(lines) == 1 + len(DEFAULT_MULTIPLIERS)
    assert lines[1].startswith("1-0,0.0,")
