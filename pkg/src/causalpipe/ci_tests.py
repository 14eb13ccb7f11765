"""Conditional-independence tests and residual-asymmetry direction scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.special import digamma

from .dataset import Dataset, DataError

__all__ = [
    "CITestResult",
    "fisher_z",
    "chi2_ci",
    "knn_cmi",
    "cmi_estimate",
    "direction_score",
    "distance_correlation",
    "get_test",
    "TESTS",
]


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    n_effective: int
    test_name: str
    cond_size: int
    flags: tuple[str, ...] = ()

    def independent(self, alpha: float) -> bool:
        return self.p_value > alpha


def _numeric(ds: Dataset, names: Sequence[str]) -> np.ndarray:
    arr = ds.columns(list(names))
    if np.isnan(arr).any():
        raise DataError("missing values present; apply make_censoring first")
    return arr


def _check_args(a, b, z):
    z = tuple(z)
    if a == b or a in z or b in z:
        raise ValueError("A, B and Z must be disjoint")
    return z


# ---------------------------------------------------------------------------
# Fisher z


def _residualize(v: np.ndarray, design: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    return v - design @ coef


def partial_correlation(x: np.ndarray, y: np.ndarray, z: np.ndarray | None) -> float:
    n = x.shape[0]
    design = np.ones((n, 1)) if z is None or z.size == 0 else np.column_stack([np.ones(n), z])
    rx = _residualize(x, design)
    ry = _residualize(y, design)
    sx = np.sqrt(rx @ rx)
    sy = np.sqrt(ry @ ry)
    if sx <= 1e-12 * max(1.0, np.abs(x).max()) or sy <= 1e-12 * max(1.0, np.abs(y).max()):
        raise DataError("degenerate column: no variation left after conditioning")
    return float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))


def fisher_z(ds: Dataset, a: str, b: str, z: Sequence[str] = ()) -> CITestResult:
    """Partial-correlation test with the Fisher z transform."""
    z = _check_args(a, b, z)
    arr = _numeric(ds, (a, b) + z)
    n = arr.shape[0]
    if n <= len(z) + 3:
        raise DataError(f"need N > |Z| + 3, got N={n}, |Z|={len(z)}")
    for j, name in enumerate((a, b) + z):
        if np.ptp(arr[:, j]) == 0:
            raise DataError(f"column {name!r} is constant")
    r = partial_correlation(arr[:, 0], arr[:, 1], arr[:, 2:])
    scale = math.sqrt(n - len(z) - 3)
    if abs(r) >= 1.0:
        stat = math.copysign(math.inf, r)
        p = 0.0
    else:
        stat = scale * math.atanh(r)
        p = float(2.0 * stats.norm.sf(abs(stat)))
    return CITestResult(stat, min(max(p, 0.0), 1.0), n, "fisher_z", len(z))


# ---------------------------------------------------------------------------
# stratified chi-squared


def chi2_ci(ds: Dataset, a: str, b: str, z: Sequence[str] = ()) -> CITestResult:
    """Pearson chi-squared test of A _||_ B summed over the strata of Z.

    Strata whose A x B table has an empty row or column are skipped.
    """
    z = _check_args(a, b, z)
    for name in (a, b) + z:
        if not ds.type_of(name).discrete:
            raise DataError(f"column {name!r} is not discrete")
    arr = _numeric(ds, (a, b) + z).astype(np.int64)
    la, ia = np.unique(arr[:, 0], return_inverse=True)
    lb, ib = np.unique(arr[:, 1], return_inverse=True)
    if z:
        _, strata = np.unique(arr[:, 2:], axis=0, return_inverse=True)
        strata = strata.reshape(-1)
    else:
        strata = np.zeros(arr.shape[0], dtype=np.int64)
    stat = 0.0
    dof = 0
    skipped = 0
    n_eff = 0
    for s in np.unique(strata):
        mask = strata == s
        table = np.zeros((la.size, lb.size))
        np.add.at(table, (ia[mask], ib[mask]), 1.0)
        rows = table.sum(axis=1)
        cols = table.sum(axis=0)
        if np.any(rows == 0) or np.any(cols == 0):
            skipped += 1
            continue
        total = table.sum()
        expected = np.outer(rows, cols) / total
        stat += float(((table - expected) ** 2 / expected).sum())
        dof += (la.size - 1) * (lb.size - 1)
        n_eff += int(total)
    flags = (f"skipped_strata={skipped}",) if skipped else ()
    p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return CITestResult(stat, p, n_eff, "chi2", len(z), flags)


# ---------------------------------------------------------------------------
# kNN conditional mutual information


def _standardize(arr: np.ndarray) -> np.ndarray:
    sd = arr.std(axis=0)
    sd[sd == 0] = 1.0
    return (arr - arr.mean(axis=0)) / sd


def _count_within(tree: cKDTree, pts: np.ndarray, radius: np.ndarray) -> np.ndarray:
    # strict inequality; the count includes the point itself
    return tree.query_ball_point(pts, np.nextafter(radius, 0), p=np.inf, return_length=True)


def cmi_estimate(x: np.ndarray, y: np.ndarray, z: np.ndarray | None, k: int = 5) -> float:
    """k-nearest-neighbour estimate of I(X; Y | Z) under the max norm.

    With empty ``z`` this reduces to the KSG mutual-information estimator.
    """
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    n = x.shape[0]
    if z is None or z.size == 0:
        xy = np.hstack([x, y])
        eps = cKDTree(xy).query(xy, k=k + 1, p=np.inf)[0][:, -1]
        nx = _count_within(cKDTree(x), x, eps)
        ny = _count_within(cKDTree(y), y, eps)
        return float(digamma(k) + digamma(n) - np.mean(digamma(nx) + digamma(ny)))
    z = z.reshape(n, -1)
    xyz = np.hstack([x, y, z])
    eps = cKDTree(xyz).query(xyz, k=k + 1, p=np.inf)[0][:, -1]
    xz = np.hstack([x, z])
    yz = np.hstack([y, z])
    nxz = _count_within(cKDTree(xz), xz, eps)
    nyz = _count_within(cKDTree(yz), yz, eps)
    nz = _count_within(cKDTree(z), z, eps)
    return float(digamma(k) - np.mean(digamma(nxz) + digamma(nyz) - digamma(nz)))


def _local_permutation(neighbors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Shuffle indices within Z-neighbourhoods, drawing each donor at most once when possible."""
    n, kp = neighbors.shape
    used = np.zeros(n, dtype=bool)
    perm = np.empty(n, dtype=np.int64)
    shuffled = rng.permuted(neighbors, axis=1)
    for i in rng.permutation(n):
        row = shuffled[i]
        j = row[-1]
        for cand in row:
            if not used[cand]:
                j = cand
                break
        perm[i] = j
        used[j] = True
    return perm


def knn_cmi(
    ds: Dataset,
    a: str,
    b: str,
    z: Sequence[str] = (),
    k: int = 5,
    n_perm: int = 200,
    seed: int = 0,
    k_perm: int = 5,
) -> CITestResult:
    """Nonparametric CI test from the kNN CMI estimate and a local-permutation null."""
    z = _check_args(a, b, z)
    arr = _numeric(ds, (a, b) + z)
    n = arr.shape[0]
    if n < 50:
        raise DataError(f"knn_cmi needs N >= 50, got {n}")
    if k < 3 or k >= n:
        raise ValueError(f"k must satisfy 3 <= k < N, got k={k}")
    arr = _standardize(arr)
    x, y = arr[:, 0], arr[:, 1]
    zz = arr[:, 2:] if z else None
    observed = cmi_estimate(x, y, zz, k)

    children = np.random.SeedSequence(seed).spawn(n_perm)
    neighbors = None
    if zz is not None:
        neighbors = cKDTree(zz).query(zz, k=min(k_perm, n), p=np.inf)[1]
        neighbors = neighbors.reshape(n, -1)
    exceed = 0
    for child in children:
        rng = np.random.default_rng(child)
        perm = rng.permutation(n) if neighbors is None else _local_permutation(neighbors, rng)
        if cmi_estimate(x[perm], y, zz, k) >= observed:
            exceed += 1
    p = (1 + exceed) / (1 + n_perm)
    return CITestResult(observed, p, n, "knn_cmi", len(z))


# ---------------------------------------------------------------------------
# direction from residual dependence


def distance_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation (V-statistic)."""

    def centered(v):
        d = np.abs(v[:, None] - v[None, :])
        return d - d.mean(axis=0) - d.mean(axis=1)[:, None] + d.mean()

    A = centered(np.asarray(x, dtype=float))
    B = centered(np.asarray(y, dtype=float))
    dcov = (A * B).mean()
    dvx = (A * A).mean()
    dvy = (B * B).mean()
    if dvx <= 0 or dvy <= 0:
        return 0.0
    return float(np.sqrt(max(dcov, 0.0) / np.sqrt(dvx * dvy)))


def _knn_residuals(x: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    idx = cKDTree(x[:, None]).query(x[:, None], k=k)[1]
    return y - y[idx].mean(axis=1)


def direction_score(ds: Dataset, x: str, y: str, tau: float = 0.02):
    """Pick a causal direction between two continuous columns.

    Regresses each variable on the other with a kNN smoother (k = ceil(sqrt N))
    and scores a direction by the distance correlation between its residuals
    and its regressor. Returns ``(direction, score_xy, score_yx)`` where
    direction is ``"X->Y"``, ``"Y->X"`` or ``"inconclusive"``.
    """
    arr = _numeric(ds, (x, y))
    n = arr.shape[0]
    if n < 100:
        raise DataError(f"direction_score needs N >= 100, got {n}")
    for j, name in enumerate((x, y)):
        if np.ptp(arr[:, j]) == 0:
            raise DataError(f"column {name!r} is constant")
    arr = _standardize(arr)
    k = math.ceil(math.sqrt(n))
    score_xy = distance_correlation(arr[:, 0], _knn_residuals(arr[:, 0], arr[:, 1], k))
    score_yx = distance_correlation(arr[:, 1], _knn_residuals(arr[:, 1], arr[:, 0], k))
    if abs(score_xy - score_yx) < tau:
        direction = "inconclusive"
    elif score_xy < score_yx:
        direction = "X->Y"
    else:
        direction = "Y->X"
    return direction, score_xy, score_yx


TESTS: dict[str, Callable[..., CITestResult]] = {
    "fisher_z": fisher_z,
    "chi2": chi2_ci,
    "knn_cmi": knn_cmi,
}


def get_test(name: str, **kwargs) -> Callable[..., CITestResult]:
    try:
        fn = TESTS[name]
    except KeyError:
        raise ValueError(f"unknown test {name!r}; choose from {sorted(TESTS)}") from None
    return partial(fn, **kwargs) if kwargs else fn
