"""Cross-validated stacking ("Super Learner") for [0,1] regression and multiclass propensities."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.ensemble import GradientBoostingClassifier, GradientBoostingRegressor
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import KFold, StratifiedKFold
from sklearn.neighbors import KNeighborsClassifier, KNeighborsRegressor

__all__ = [
    "LearnerSpec",
    "SuperLearnerSpec",
    "FittedSuperLearner",
    "parse_learner",
    "make_learner",
    "sl_fit",
    "project_simplex",
    "simplex_weights",
    "DEFAULT_LIBRARY",
]

REGRESSION = "regression"
PROPENSITY = "propensity"

_LEARNER_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(([^)]*)\))?\s*$")
_DEFAULT_ARGS = {
    "intercept_only": (),
    "linear_ridge": (1.0,),
    "logistic_ridge": (1.0,),
    "knn": (25,),
    "boosted_stumps": (100, 1, 0.1),
}


@dataclass(frozen=True)
class LearnerSpec:
    name: str
    args: tuple = ()

    def __post_init__(self):
        if self.name not in _DEFAULT_ARGS:
            raise ValueError(f"unknown learner {self.name!r}; choose from {sorted(_DEFAULT_ARGS)}")
        args = tuple(self.args) if self.args else _DEFAULT_ARGS[self.name]
        if len(args) != len(_DEFAULT_ARGS[self.name]):
            raise ValueError(f"{self.name} takes {len(_DEFAULT_ARGS[self.name])} arguments")
        if self.name in ("linear_ridge", "logistic_ridge") and args[0] < 0:
            raise ValueError("ridge penalty must be non-negative")
        if self.name == "knn":
            args = (int(args[0]),)
            if args[0] < 1:
                raise ValueError("knn needs k >= 1")
        if self.name == "boosted_stumps":
            args = (int(args[0]), int(args[1]), float(args[2]))
            if args[0] < 1 or args[1] < 1 or not args[2] > 0:
                raise ValueError("boosted_stumps needs rounds >= 1, depth >= 1, learning rate > 0")
        object.__setattr__(self, "args", args)

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({','.join(repr(a) if isinstance(a, float) else str(a) for a in self.args)})"


def parse_learner(text: str | LearnerSpec) -> LearnerSpec:
    if isinstance(text, LearnerSpec):
        return text
    m = _LEARNER_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse learner {text!r}")
    name, args = m.groups()
    vals = tuple(float(a) for a in args.split(",")) if args and args.strip() else ()
    return LearnerSpec(name, vals)


DEFAULT_LIBRARY = ("intercept_only", "linear_ridge(1.0)", "logistic_ridge(1.0)", "knn(25)", "boosted_stumps(100,1,0.1)")


@dataclass(frozen=True)
class SuperLearnerSpec:
    learners: tuple = DEFAULT_LIBRARY
    k_folds: int = 10
    task: str = REGRESSION
    seed: int = 0

    def __post_init__(self):
        learners = tuple(parse_learner(s) for s in self.learners)
        if not learners:
            raise ValueError("the learner library is empty")
        if len(set(map(str, learners))) != len(learners):
            raise ValueError("duplicate learners in library")
        if self.task not in (REGRESSION, PROPENSITY):
            raise ValueError(f"task must be {REGRESSION!r} or {PROPENSITY!r}")
        if self.k_folds < 2:
            raise ValueError("k_folds must be at least 2")
        object.__setattr__(self, "learners", learners)

    def with_task(self, task: str, seed: int | None = None) -> "SuperLearnerSpec":
        return SuperLearnerSpec(self.learners, self.k_folds, task, self.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# base learners; all take standardized-or-raw float features


class _Scaler:
    def fit(self, X):
        self.mu = X.mean(axis=0) if X.shape[1] else np.zeros(0)
        sd = X.std(axis=0) if X.shape[1] else np.zeros(0)
        self.sd = np.where(sd > 0, sd, 1.0)
        return self

    def __call__(self, X):
        return (X - self.mu) / self.sd


class _InterceptOnly:
    def fit(self, X, y, n_classes=None):
        if n_classes is None:
            self.value = float(np.mean(y))
        else:
            self.value = np.bincount(y, minlength=n_classes) / len(y)
        return self

    def predict(self, X):
        if np.ndim(self.value) == 0:
            return np.full(X.shape[0], self.value)
        return np.tile(self.value, (X.shape[0], 1))


class _LinearRidge:
    def __init__(self, lam):
        self.lam = lam

    def fit(self, X, y, n_classes=None):
        self.scale = _Scaler().fit(X)
        Z = self.scale(X)
        Y = y.astype(float) if n_classes is None else np.eye(n_classes)[y]
        self.mu = Y.mean(axis=0)
        A = Z.T @ Z + self.lam * np.eye(Z.shape[1])
        self.beta = np.linalg.lstsq(A, Z.T @ (Y - self.mu), rcond=None)[0] if Z.shape[1] else None
        self.n_classes = n_classes
        return self

    def predict(self, X):
        out = self.mu if self.beta is None else self.scale(X) @ self.beta + self.mu
        out = np.broadcast_to(out, (X.shape[0],) + np.shape(self.mu)).copy()
        if self.n_classes is None:
            return np.clip(out, 0.0, 1.0)
        out = np.clip(out, 1e-3, 1.0)
        return out / out.sum(axis=1, keepdims=True)


def _quasi_binomial_newton(Z, y, lam, iters=100, tol=1e-10):
    """Ridge-penalized logistic regression for y in [0, 1]; the intercept is unpenalized."""
    D = np.column_stack([np.ones(len(y)), Z])
    pen = np.full(D.shape[1], lam)
    pen[0] = 0.0
    beta = np.zeros(D.shape[1])
    m = float(np.clip(np.mean(y), 1e-6, 1 - 1e-6))
    beta[0] = np.log(m / (1 - m))
    for _ in range(iters):
        mu = expit(D @ beta)
        grad = D.T @ (y - mu) - pen * beta
        W = np.maximum(mu * (1 - mu), 1e-10)
        H = (D * W[:, None]).T @ D + np.diag(pen) + 1e-10 * np.eye(D.shape[1])
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


class _LogisticRidge:
    def __init__(self, lam):
        self.lam = lam

    def fit(self, X, y, n_classes=None):
        self.scale = _Scaler().fit(X)
        Z = self.scale(X)
        self.n_classes = n_classes
        if n_classes is None:
            self.beta = _quasi_binomial_newton(Z, y.astype(float), self.lam)
            return self
        C = 1.0 / self.lam if self.lam > 0 else 1e12
        self.model = LogisticRegression(C=C, max_iter=2000).fit(Z, y)
        return self

    def predict(self, X):
        Z = self.scale(X)
        if self.n_classes is None:
            return expit(self.beta[0] + Z @ self.beta[1:])
        return _align(self.model.predict_proba(Z), self.model.classes_, self.n_classes)


def _align(proba, classes, n_classes):
    out = np.zeros((proba.shape[0], n_classes))
    out[:, np.asarray(classes, dtype=int)] = proba
    return out


class _Knn:
    def __init__(self, k):
        self.k = k

    def fit(self, X, y, n_classes=None):
        self.scale = _Scaler().fit(X)
        k = min(self.k, len(y))
        self.n_classes = n_classes
        if n_classes is None:
            self.model = KNeighborsRegressor(n_neighbors=k)
        else:
            self.model = KNeighborsClassifier(n_neighbors=k)
        Z = self.scale(X) if X.shape[1] else np.zeros((len(y), 1))
        self.model.fit(Z, y)
        return self

    def predict(self, X):
        Z = self.scale(X) if X.shape[1] else np.zeros((X.shape[0], 1))
        if self.n_classes is None:
            return np.clip(self.model.predict(Z), 0.0, 1.0)
        return _align(self.model.predict_proba(Z), self.model.classes_, self.n_classes)


class _Boosted:
    def __init__(self, rounds, depth, lr, seed):
        self.params = dict(n_estimators=rounds, max_depth=depth, learning_rate=lr, random_state=seed)

    def fit(self, X, y, n_classes=None):
        self.n_classes = n_classes
        Z = X if X.shape[1] else np.zeros((len(y), 1))
        if n_classes is None:
            self.model = GradientBoostingRegressor(**self.params).fit(Z, y)
        else:
            self.model = GradientBoostingClassifier(**self.params).fit(Z, y)
        return self

    def predict(self, X):
        Z = X if X.shape[1] else np.zeros((X.shape[0], 1))
        if self.n_classes is None:
            return np.clip(self.model.predict(Z), 0.0, 1.0)
        return _align(self.model.predict_proba(Z), self.model.classes_, self.n_classes)


def make_learner(spec: LearnerSpec, seed: int = 0):
    spec = parse_learner(spec)
    if spec.name == "intercept_only":
        return _InterceptOnly()
    if spec.name == "linear_ridge":
        return _LinearRidge(float(spec.args[0]))
    if spec.name == "logistic_ridge":
        return _LogisticRidge(float(spec.args[0]))
    if spec.name == "knn":
        return _Knn(spec.args[0])
    return _Boosted(*spec.args, seed=seed)


# ---------------------------------------------------------------------------
# meta-learning on the simplex


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _finish(w):
    w = np.maximum(w, 0.0)
    return w / w.sum()


def simplex_weights(preds: np.ndarray, target: np.ndarray, task: str = REGRESSION, tol: float = 1e-8, max_iter: int = 20000):
    """Convex combination weights minimizing held-out loss by projected gradient.

    ``preds`` is N x L for regression (squared loss) or N x L x K for
    propensities, with ``target`` holding class indices (log-loss).
    """
    L = preds.shape[1]
    if L == 1:
        return np.ones(1)
    w = np.full(L, 1.0 / L)
    if task == REGRESSION:
        A = preds.T @ preds / len(target)
        b = preds.T @ target / len(target)
        step = 1.0 / max(2 * np.linalg.eigvalsh(A)[-1], 1e-12)
        for _ in range(max_iter):
            new = project_simplex(w - step * 2 * (A @ w - b))
            if np.max(np.abs(new - w)) < tol:
                w = new
                break
            w = new
        return _finish(w)

    P = np.maximum(preds[np.arange(len(target)), :, target], 1e-12)  # N x L

    def loss(w):
        return -np.mean(np.log(np.maximum(P @ w, 1e-300)))

    step = 1.0
    f = loss(w)
    for _ in range(max_iter):
        g = -(P / np.maximum(P @ w, 1e-300)[:, None]).mean(axis=0)
        while True:
            new = project_simplex(w - step * g)
            fn = loss(new)
            if fn <= f + g @ (new - w) + np.sum((new - w) ** 2) / (2 * step) or step < 1e-12:
                break
            step /= 2
        done = np.max(np.abs(new - w)) < tol
        w, f = new, fn
        step *= 2
        if done:
            break
    return _finish(w)


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FittedSuperLearner:
    spec: SuperLearnerSpec
    fits: list
    weights: np.ndarray
    cv_risk: np.ndarray
    n_classes: int | None = None
    names: tuple = field(default=())

    def _raw(self, X):
        return np.stack([f.predict(X) for f in self.fits], axis=1)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """[0,1] predictions (regression) or N x K probability rows (propensity)."""
        X = np.asarray(X, dtype=float).reshape(len(X), -1)
        raw = self._raw(X)
        if self.n_classes is None:
            return np.clip(raw @ self.weights, 0.0, 1.0)
        out = np.einsum("nlk,l->nk", raw, self.weights)
        return out / out.sum(axis=1, keepdims=True)


def _folds(n, k, strata, seed):
    if k > n:
        raise ValueError(f"k_folds={k} exceeds N={n}")
    if strata is None:
        return list(KFold(k, shuffle=True, random_state=seed).split(np.zeros(n)))
    _, counts = np.unique(strata, return_counts=True)
    if counts.min() < 2:
        raise ValueError("a stratum has fewer than 2 rows; every training fold must contain every level")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return list(StratifiedKFold(k, shuffle=True, random_state=seed).split(np.zeros(n), strata))


def sl_fit(X: np.ndarray, y: np.ndarray, spec: SuperLearnerSpec, strata: np.ndarray | None = None, n_classes: int | None = None) -> FittedSuperLearner:
    """Fit the library with K-fold CV, learn simplex weights, refit everything on all rows.

    For ``task == "propensity"`` ``y`` holds class indices 0..K-1 and folds are
    stratified on it; otherwise folds are stratified on ``strata`` when given.
    """
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y)
    n = len(y)
    if np.isnan(X).any() or np.isnan(y.astype(float)).any():
        raise ValueError("missing values in Super Learner input")
    if spec.task == PROPENSITY:
        y = y.astype(int)
        n_classes = int(n_classes or y.max() + 1)
        strata = y
    else:
        n_classes = None
        y = y.astype(float)
        if y.min() < 0 or y.max() > 1:
            raise ValueError("regression targets must lie in [0, 1]")
    folds = _folds(n, spec.k_folds, strata, spec.seed)
    L = len(spec.learners)
    cv = np.zeros((n, L)) if n_classes is None else np.zeros((n, L, n_classes))
    for j, ls in enumerate(spec.learners):
        for train, test in folds:
            fit = make_learner(ls, spec.seed).fit(X[train], y[train], n_classes)
            cv[test, j] = fit.predict(X[test])
    weights = simplex_weights(cv, y, spec.task)
    if n_classes is None:
        risk = ((cv - y[:, None]) ** 2).mean(axis=0)
    else:
        risk = -np.log(np.maximum(cv[np.arange(n), :, y], 1e-12)).mean(axis=0)
    fits = [make_learner(ls, spec.seed).fit(X, y, n_classes) for ls in spec.learners]
    return FittedSuperLearner(spec, fits, weights, risk, n_classes, tuple(map(str, spec.learners)))
