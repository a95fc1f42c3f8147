"""Conditional-mean regression backends.

Three interchangeable backends implement the fit/predict contract used
by the denoising estimators:

* ``spline_gam``     - 1-D penalized cubic B-spline smoother with a
                       second-difference penalty, smoothness chosen by
                       GCV over a fixed logarithmic grid.
* ``boosted_trees``  - gradient boosted regression trees, squared-error
                       loss, deterministic split tie-breaking.
* ``kernel_ridge``   - RBF kernel ridge regression with an unpenalized
                       intercept and median-distance bandwidth heuristic.

All backends are deterministic given (config, data) and translation
equivariant in the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

from . import _kernels


class RegressionError(ValueError):
    pass


class SingularModelError(RegressionError):
    """A linear system remained singular after regularization."""


_DEFAULTS = {
    "kernel_ridge": {"penalty": 1.0, "bandwidth": None},
    "boosted_trees": {
        "n_stages": 100,
        "learning_rate": 0.1,
        "max_depth": 3,
        "min_leaf": 1,
        "subsample": 1.0,
    },
    "spline_gam": {
        "n_knots": 20,
        "penalty": None,  # None -> GCV over penalty_grid
        "penalty_grid": tuple(np.logspace(-3.0, 3.0, 13)),
    },
}


@dataclass(frozen=True)
class RegressorConfig:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def resolved(self):
        if self.kind not in _DEFAULTS:
            raise RegressionError(f"unknown regressor kind {self.kind!r}")
        params = dict(_DEFAULTS[self.kind])
        unknown = set(self.hyperparameters) - set(params)
        if unknown:
            raise RegressionError(
                f"unknown hyperparameters for {self.kind}: {sorted(unknown)}"
            )
        params.update(self.hyperparameters)
        _validate_params(self.kind, params)
        return params

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def _validate_params(kind, p):
    if kind == "kernel_ridge":
        if p["penalty"] <= 0:
            raise RegressionError("kernel_ridge penalty must be > 0")
        if p["bandwidth"] is not None and p["bandwidth"] <= 0:
            raise RegressionError("bandwidth must be > 0")
    elif kind == "boosted_trees":
        if p["learning_rate"] <= 0:
            raise RegressionError("learning_rate must be > 0")
        if p["max_depth"] < 1:
            raise RegressionError("max_depth must be >= 1")
        if p["n_stages"] < 1:
            raise RegressionError("n_stages must be >= 1")
        if not 0 < p["subsample"] <= 1:
            raise RegressionError("subsample must be in (0, 1]")
    elif kind == "spline_gam":
        if p["n_knots"] < 1:
            raise RegressionError("n_knots must be >= 1")
        if p["penalty"] is not None and p["penalty"] <= 0:
            raise RegressionError("spline penalty must be > 0")


class FittedRegressor:
    """Immutable trained model; safe for concurrent predict calls."""

    kind = None

    def __init__(self, n_features):
        self.n_features = n_features

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise RegressionError(
                f"expected {self.n_features} features, got shape {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise RegressionError("non-finite prediction input")
        out = self._predict(x)
        if not np.all(np.isfinite(out)):
            raise RegressionError("model produced non-finite prediction")
        return out


def fit(config, features, targets):
    """Train the backend named by ``config`` on (features, targets)."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(targets, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise RegressionError("features/targets shape mismatch")
    m, d = x.shape
    if m < 2:
        raise RegressionError("need at least 2 training rows")
    if d < 1:
        raise RegressionError("need at least 1 feature")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise RegressionError("non-finite training data")
    params = config.resolved()
    if config.kind == "kernel_ridge":
        return _fit_kernel_ridge(params, x, y)
    if config.kind == "boosted_trees":
        return _fit_boosted_trees(params, x, y, config.seed)
    return _fit_spline_gam(params, x, y)


def predict(model, features):
    return model.predict(features)


# ---------------------------------------------------------------------------
# kernel ridge


class FittedKernelRidge(FittedRegressor):
    kind = "kernel_ridge"

    def __init__(self, x_train, alpha, intercept, gamma):
        super().__init__(x_train.shape[1])
        self.x_train = x_train
        self.alpha = alpha
        self.intercept = intercept
        self.gamma = gamma

    def _predict(self, x):
        k = np.exp(-self.gamma * cdist(x, self.x_train, "sqeuclidean"))
        return k @ self.alpha + self.intercept


def _median_bandwidth(x):
    d = cdist(x, x)
    iu = np.triu_indices(d.shape[0], k=1)
    med = float(np.median(d[iu])) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def _fit_kernel_ridge(params, x, y):
    bw = params["bandwidth"]
    if bw is None:
        bw = _median_bandwidth(x)
    gamma = 1.0 / (2.0 * bw * bw)
    k = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
    intercept = float(np.mean(y))
    a = k + params["penalty"] * np.eye(len(y))
    try:
        alpha = np.linalg.solve(a, y - intercept)
    except np.linalg.LinAlgError as e:
        raise SingularModelError(f"kernel system singular: {e}") from e
    if not np.all(np.isfinite(alpha)):
        raise SingularModelError("kernel system produced non-finite solution")
    return FittedKernelRidge(x.copy(), alpha, intercept, gamma)


# ---------------------------------------------------------------------------
# boosted trees


class FittedBoostedTrees(FittedRegressor):
    kind = "boosted_trees"

    def __init__(self, n_features, init, learning_rate, trees):
        super().__init__(n_features)
        self.init = init
        self.learning_rate = learning_rate
        self.trees = trees

    def _predict(self, x):
        out = np.full(x.shape[0], self.init)
        for feat, thr, left, right, value in self.trees:
            out += self.learning_rate * _kernels.tree_predict(
                feat, thr, left, right, value, x
            )
        return out


def _grow_tree(x, r, max_depth, min_leaf):
    """Depth-first CART growth; returns flat node arrays."""
    feature, threshold, left, right, value = [], [], [], [], []

    def add_leaf(vals):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(vals)))
        return len(feature) - 1

    def build(idx, depth):
        sub = r[idx]
        if depth == 0 or idx.size < 2 * min_leaf or idx.size < 2:
            return add_leaf(sub)
        parent_sse = float(np.sum((sub - np.mean(sub)) ** 2))
        sse, f, thr = _kernels.best_split(x[idx], sub, min_leaf)
        if f < 0 or not sse < parent_sse:
            return add_leaf(sub)
        go_left = x[idx, f] <= thr
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        left[node] = build(idx[go_left], depth - 1)
        right[node] = build(idx[~go_left], depth - 1)
        return node

    build(np.arange(x.shape[0]), max_depth)
    return (
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )


def _fit_boosted_trees(params, x, y, seed):
    m = x.shape[0]
    init = float(np.mean(y))
    pred = np.full(m, init)
    trees = []
    rng = None
    if params["subsample"] < 1.0:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF]))
    for _ in range(params["n_stages"]):
        resid = y - pred
        if rng is not None:
            n_sub = max(2, int(round(params["subsample"] * m)))
            idx = np.sort(rng.choice(m, size=n_sub, replace=False))
            tree = _grow_tree(x[idx], resid[idx], params["max_depth"], params["min_leaf"])
        else:
            tree = _grow_tree(x, resid, params["max_depth"], params["min_leaf"])
        trees.append(tree)
        feat, thr, left, right, value = tree
        pred = pred + params["learning_rate"] * _kernels.tree_predict(
            feat, thr, left, right, value, x
        )
    return FittedBoostedTrees(x.shape[1], init, params["learning_rate"], trees)


# ---------------------------------------------------------------------------
# penalized B-spline smoother


class FittedSplineGAM(FittedRegressor):
    kind = "spline_gam"

    def __init__(self, knots, coef, lo, hi, penalty):
        super().__init__(1)
        self.knots = knots
        self.coef = coef
        self.lo = lo
        self.hi = hi
        self.penalty = penalty
        self._spl = BSpline(knots, coef, 3, extrapolate=False)
        # representable span of the basis (can differ from lo/hi by
        # floating-point rounding of the knot grid)
        self._span_lo = float(knots[3])
        self._span_hi = float(knots[-4])
        der = self._spl.derivative()
        self._v_lo = float(self._spl(self._span_lo))
        self._v_hi = float(self._spl(self._span_hi))
        self._d_lo = float(der(self._span_lo))
        self._d_hi = float(der(self._span_hi))

    def _predict(self, x):
        t = x[:, 0]
        out = np.empty_like(t)
        inside = (t >= self.lo) & (t <= self.hi)
        out[inside] = self._spl(np.clip(t[inside], self._span_lo, self._span_hi))
        # linear extension of the boundary polynomial outside the span
        lo_side = t < self.lo
        hi_side = t > self.hi
        out[lo_side] = self._v_lo + self._d_lo * (t[lo_side] - self.lo)
        out[hi_side] = self._v_hi + self._d_hi * (t[hi_side] - self.hi)
        return out


def _spline_design(x, n_knots):
    lo = float(np.min(x))
    hi = float(np.max(x))
    if hi <= lo:
        raise SingularModelError("spline_gam needs at least 2 distinct x values")
    h = (hi - lo) / (n_knots + 1)
    knots = lo + h * np.arange(-3, n_knots + 5)
    # rounding can leave the last base-interval knot a hair below hi;
    # clip to the actual representable span of the basis
    b = BSpline.design_matrix(
        np.clip(x, knots[3], knots[n_knots + 4]), knots, 3
    ).toarray()
    return knots, b, lo, hi


def _fit_spline_gam(params, x, y):
    if x.shape[1] != 1:
        raise RegressionError("spline_gam supports exactly 1 feature")
    xv = x[:, 0]
    m = len(xv)
    knots, b, lo, hi = _spline_design(xv, params["n_knots"])
    nb = b.shape[1]
    d2 = np.diff(np.eye(nb), n=2, axis=0)
    pen = d2.T @ d2
    btb = b.T @ b
    bty = b.T @ y

    def solve(lam):
        a = btb + lam * pen
        try:
            coef = np.linalg.solve(a, bty)
        except np.linalg.LinAlgError as e:
            raise SingularModelError(f"spline system singular: {e}") from e
        if not np.all(np.isfinite(coef)):
            raise SingularModelError("spline system produced non-finite solution")
        return a, coef

    if params["penalty"] is not None:
        lam = float(params["penalty"])
        _, coef = solve(lam)
    else:
        best = (np.inf, None, None)
        for lam in params["penalty_grid"]:
            a, coef = solve(lam)
            fitvals = b @ coef
            rss = float(np.sum((y - fitvals) ** 2))
            edf = float(np.trace(np.linalg.solve(a, btb)))
            denom = m - edf
            gcv = m * rss / (denom * denom) if denom > 1e-9 else np.inf
            if gcv < best[0]:
                best = (gcv, lam, coef)
        if best[1] is None:
            raise SingularModelError("GCV failed for every penalty on the grid")
        lam, coef = best[1], best[2]
    return FittedSplineGAM(knots, coef, lo, hi, lam)
