import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from tqsreg import regress
from tqsreg.regress import (
    RegressionError,
    RegressorConfig,
    SingularModelError,
    fit,
    predict,
)


def toy_1d(rng, m=200, noise=0.1):
    x = rng.uniform(-2, 2, size=(m, 1))
    y = np.sin(2 * x[:, 0]) + noise * rng.normal(size=m)
    return x, y


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(RegressionError, match="unknown regressor kind"):
            RegressorConfig("forest").resolved()

    def test_unknown_hyperparameter(self):
        cfg = RegressorConfig("kernel_ridge", {"lambda": 1.0})
        with pytest.raises(RegressionError, match="unknown hyperparameters"):
            cfg.resolved()

    def test_defaults_match_contract(self):
        p = RegressorConfig("boosted_trees").resolved()
        assert p["n_stages"] == 100
        assert p["learning_rate"] == 0.1
        assert p["max_depth"] == 3
        p = RegressorConfig("kernel_ridge").resolved()
        assert p["penalty"] == 1.0
        p = RegressorConfig("spline_gam").resolved()
        assert p["n_knots"] == 20
        np.testing.assert_allclose(p["penalty_grid"], np.logspace(-3, 3, 13))

    def test_invalid_values(self):
        cases = [
            ("kernel_ridge", {"penalty": 0.0}),
            ("kernel_ridge", {"bandwidth": -1.0}),
            ("boosted_trees", {"learning_rate": 0.0}),
            ("boosted_trees", {"max_depth": 0}),
            ("boosted_trees", {"subsample": 0.0}),
            ("spline_gam", {"n_knots": 0}),
            ("spline_gam", {"penalty": -2.0}),
        ]
        for kind, hyper in cases:
            with pytest.raises(RegressionError):
                RegressorConfig(kind, hyper).resolved()

    def test_with_seed(self):
        cfg = RegressorConfig("boosted_trees", seed=0)
        assert cfg.with_seed(7).seed == 7
        assert cfg.seed == 0  # original unchanged


class TestFitValidation:
    @pytest.mark.parametrize("kind", ["kernel_ridge", "boosted_trees", "spline_gam"])
    def test_too_few_rows(self, kind):
        with pytest.raises(RegressionError):
            fit(RegressorConfig(kind), np.array([[1.0]]), np.array([1.0]))

    def test_shape_mismatch(self, krr_cfg):
        with pytest.raises(RegressionError):
            fit(krr_cfg, np.ones((3, 1)), np.ones(4))

    def test_non_finite(self, krr_cfg):
        with pytest.raises(RegressionError, match="non-finite"):
            fit(krr_cfg, np.array([[1.0], [np.inf]]), np.ones(2))

    def test_spline_multifeature_rejected(self, spline_cfg):
        with pytest.raises(RegressionError, match="exactly 1 feature"):
            fit(spline_cfg, np.ones((5, 2)) + np.arange(5)[:, None], np.ones(5))

    def test_predict_feature_mismatch(self, krr_cfg, rng):
        model = fit(krr_cfg, rng.normal(size=(10, 2)), rng.normal(size=10))
        with pytest.raises(RegressionError, match="expected 2 features"):
            model.predict(np.ones((3, 1)))


class TestKernelRidge:
    def test_closed_form_oracle(self):
        # 3-point problem solved by hand: alpha = (K + lam I)^-1 (y - ybar)
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1.0, 3.0, 2.0])
        lam, bw = 0.5, 1.0
        model = fit(
            RegressorConfig("kernel_ridge", {"penalty": lam, "bandwidth": bw}), x, y
        )
        gamma = 1.0 / (2.0 * bw * bw)
        k = np.exp(-gamma * cdist(x, x, "sqeuclidean"))
        alpha = np.linalg.solve(k + lam * np.eye(3), y - y.mean())
        np.testing.assert_allclose(model.alpha, alpha, atol=1e-12)
        xq = np.array([[0.5], [3.0]])
        kq = np.exp(-gamma * cdist(xq, x, "sqeuclidean"))
        np.testing.assert_allclose(
            model.predict(xq), kq @ alpha + y.mean(), atol=1e-12
        )

    def test_median_bandwidth_heuristic(self):
        x = np.array([[0.0], [1.0], [3.0]])
        # pairwise distances 1, 3, 2 -> median 2
        model = fit(RegressorConfig("kernel_ridge"), x, np.array([0.0, 1.0, 0.0]))
        assert model.gamma == pytest.approx(1.0 / (2.0 * 2.0 ** 2))

    def test_translation_equivariance(self, krr_cfg, rng):
        x, y = toy_1d(rng)
        shift = 17.3
        a = fit(krr_cfg, x, y).predict(x)
        b = fit(krr_cfg, x, y + shift).predict(x)
        np.testing.assert_allclose(b, a + shift, atol=1e-9)

    def test_interpolation_small_penalty(self, rng):
        x = np.linspace(-1, 1, 15)[:, None]
        y = np.cos(3 * x[:, 0])
        cfg = RegressorConfig("kernel_ridge", {"penalty": 1e-10})
        np.testing.assert_allclose(fit(cfg, x, y).predict(x), y, atol=1e-4)

    def test_huge_penalty_returns_mean(self, rng):
        x, y = toy_1d(rng, m=60)
        cfg = RegressorConfig("kernel_ridge", {"penalty": 1e12})
        np.testing.assert_allclose(fit(cfg, x, y).predict(x), y.mean(), atol=1e-6)

    def test_constant_features_fall_back_to_unit_bandwidth(self):
        x = np.zeros((4, 1))
        model = fit(RegressorConfig("kernel_ridge"), x, np.arange(4.0))
        assert model.gamma == pytest.approx(0.5)
        np.testing.assert_allclose(model.predict(x), 1.5, atol=1e-9)


class TestSplineGAM:
    def test_knot_layout(self, spline_cfg, rng):
        x = np.linspace(0.0, 21.0, 100)[:, None]
        model = fit(spline_cfg, x, rng.normal(size=100))
        # 20 interior knots equally spaced on (0, 21) plus cubic padding
        np.testing.assert_allclose(model.knots, np.arange(-3.0, 25.0), atol=1e-12)

    def test_de_boor_oracle_design_row(self):
        # independent de Boor recursion for cubic B-spline basis values
        def bspline_basis(t, knots, j, k):
            if k == 0:
                last = j + 1 == len(knots) - 1
                inside = (knots[j] <= t < knots[j + 1]) or (
                    last and t == knots[j + 1]
                )
                return 1.0 if inside else 0.0
            out = 0.0
            d1 = knots[j + k] - knots[j]
            if d1 > 0:
                out += (t - knots[j]) / d1 * bspline_basis(t, knots, j, k - 1)
            d2 = knots[j + k + 1] - knots[j + 1]
            if d2 > 0:
                out += (knots[j + k + 1] - t) / d2 * bspline_basis(
                    t, knots, j + 1, k - 1
                )
            return out

        x = np.linspace(0.0, 6.0, 40)
        knots, b, lo, hi = regress._spline_design(x, 5)
        for i in (0, 7, 23, 39):
            row = [
                bspline_basis(x[i], knots, j, 3) for j in range(b.shape[1])
            ]
            np.testing.assert_allclose(b[i], row, atol=1e-12)

    def test_huge_penalty_gives_straight_line(self, rng):
        # second-difference penalty leaves a linear null space
        x = np.linspace(0, 10, 120)
        y = 2.0 * x - 1.0 + 0.05 * rng.normal(size=120)
        cfg = RegressorConfig("spline_gam", {"penalty": 1e8})
        model = fit(cfg, x[:, None], y)
        fitvals = model.predict(x[:, None])
        a, b = np.polyfit(x, y, 1)
        np.testing.assert_allclose(fitvals, a * x + b, atol=1e-3)

    def test_recovers_smooth_function(self, spline_cfg, rng):
        x = np.linspace(0, 1, 400)
        truth = np.sin(2 * np.pi * x)
        y = truth + 0.1 * rng.normal(size=400)
        model = fit(spline_cfg, x[:, None], y)
        assert np.mean((model.predict(x[:, None]) - truth) ** 2) < 5e-4

    def test_linear_extrapolation(self, rng):
        x = np.linspace(0, 1, 100)
        y = 3.0 * x + 0.01 * rng.normal(size=100)
        model = fit(RegressorConfig("spline_gam", {"penalty": 100.0}), x[:, None], y)
        outside = np.array([[-0.5], [1.5], [-2.0]])
        preds = model.predict(outside)
        # outside the data span the curve continues linearly
        slope_lo = (model.predict([[0.0]]) - model.predict([[-1.0]]))[0]
        expected = model.predict([[0.0]])[0] + slope_lo * outside[0, 0]
        assert preds[0] == pytest.approx(expected, abs=1e-9)
        assert abs(preds[1] - 4.5) < 0.2  # roughly follows the line
        diffs = np.diff(model.predict(np.linspace(-3, -2, 5)[:, None]))
        np.testing.assert_allclose(diffs, diffs[0], atol=1e-12)  # exactly linear

    def test_fixed_penalty_matches_normal_equations(self, rng):
        x = np.sort(rng.uniform(0, 1, size=80))
        y = rng.normal(size=80)
        lam = 3.7
        model = fit(RegressorConfig("spline_gam", {"penalty": lam}), x[:, None], y)
        knots, b, lo, hi = regress._spline_design(x, 20)
        d2 = np.diff(np.eye(b.shape[1]), n=2, axis=0)
        coef = np.linalg.solve(b.T @ b + lam * d2.T @ d2, b.T @ y)
        np.testing.assert_allclose(model.coef, coef, atol=1e-8)

    def test_identical_x_rejected(self, spline_cfg):
        with pytest.raises(SingularModelError):
            fit(spline_cfg, np.zeros((10, 1)), np.arange(10.0))

    def test_gcv_prefers_smooth_fit_for_pure_noise(self, rng):
        x = np.linspace(0, 1, 200)
        y = rng.normal(size=200)
        model = fit(RegressorConfig("spline_gam"), x[:, None], y)
        rough = fit(
            RegressorConfig("spline_gam", {"penalty": 1e-3}), x[:, None], y
        )
        assert np.std(model.predict(x[:, None])) < np.std(rough.predict(x[:, None]))


class TestBoostedTrees:
    def test_single_stage_single_split_oracle(self):
        # depth 1, 1 stage: prediction = mean + lr * (leaf mean of residual)
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([0.0, 0.0, 10.0, 10.0])
        cfg = RegressorConfig(
            "boosted_trees", {"n_stages": 1, "max_depth": 1, "learning_rate": 1.0}
        )
        model = fit(cfg, x, y)
        np.testing.assert_allclose(model.predict(x), y, atol=1e-12)
        # split threshold is the midpoint of the best gap
        feat, thr, left, right, value = model.trees[0]
        assert thr[0] == pytest.approx(1.5)

    def test_init_is_target_mean(self, trees_cfg, rng):
        x, y = toy_1d(rng)
        assert fit(trees_cfg, x, y).init == pytest.approx(float(y.mean()))

    def test_training_mse_monotone_in_stages(self, rng):
        x, y = toy_1d(rng, m=300)
        prev = np.inf
        for n in (1, 5, 20, 100):
            cfg = RegressorConfig("boosted_trees", {"n_stages": n})
            mse = float(np.mean((fit(cfg, x, y).predict(x) - y) ** 2))
            assert mse <= prev + 1e-12
            prev = mse

    def test_translation_equivariance(self, trees_cfg, rng):
        x, y = toy_1d(rng)
        a = fit(trees_cfg, x, y).predict(x)
        b = fit(trees_cfg, x, y - 4.25).predict(x)
        np.testing.assert_allclose(b, a - 4.25, atol=1e-9)

    def test_deterministic_bitwise(self, trees_cfg, rng):
        x, y = toy_1d(rng)
        p1 = fit(trees_cfg, x, y).predict(x)
        p2 = fit(trees_cfg, x, y).predict(x)
        assert np.array_equal(p1, p2)

    def test_subsample_seeded(self, rng):
        x, y = toy_1d(rng)
        cfg = RegressorConfig("boosted_trees", {"subsample": 0.5}, seed=3)
        p1 = fit(cfg, x, y).predict(x)
        p2 = fit(cfg, x, y).predict(x)
        p3 = fit(cfg.with_seed(4), x, y).predict(x)
        assert np.array_equal(p1, p2)
        assert not np.array_equal(p1, p3)

    def test_tie_break_lowest_feature(self):
        # two identical features; the split must use feature 0
        col = np.array([0.0, 0.0, 1.0, 1.0])
        x = np.column_stack([col, col])
        y = np.array([0.0, 0.0, 1.0, 1.0])
        cfg = RegressorConfig("boosted_trees", {"n_stages": 1, "max_depth": 1})
        feat, thr, left, right, value = fit(cfg, x, y).trees[0]
        assert feat[0] == 0

    def test_constant_target_predicts_constant(self, trees_cfg):
        x = np.arange(10.0)[:, None]
        model = fit(trees_cfg, x, np.full(10, 2.5))
        np.testing.assert_allclose(model.predict(x), 2.5, atol=1e-12)

    def test_min_leaf_respected(self, rng):
        x = rng.uniform(size=(20, 1))
        y = rng.normal(size=20)
        cfg = RegressorConfig(
            "boosted_trees", {"n_stages": 1, "max_depth": 10, "min_leaf": 5}
        )
        feat, thr, left, right, value = fit(cfg, x, y).trees[0]
        for node in range(len(feat)):
            if feat[node] < 0:
                continue
            # count rows reaching each child by replaying the tree
        pred = fit(cfg, x, y).predict(x)
        leaf_vals, counts = np.unique(np.round(pred, 12), return_counts=True)
        assert counts.min() >= 5


class TestNumpyFallbackParity:
    """The numba and numpy kernel paths must build identical models."""

    SCRIPT = (
        "import numpy as np\n"
        "from tqsreg.regress import RegressorConfig, fit\n"
        "rng = np.random.default_rng(42)\n"
        "x = rng.uniform(-1, 1, size=(150, 3))\n"
        "y = np.sin(3 * x[:, 0]) - x[:, 1] ** 2 + 0.2 * rng.normal(size=150)\n"
        "model = fit(RegressorConfig('boosted_trees'), x, y)\n"
        "print(repr(model.predict(x).sum()))\n"
        "print(repr(float(np.mean((model.predict(x) - y) ** 2))))\n"
    )

    def run(self, no_numba):
        env = dict(os.environ, TQSREG_NO_NUMBA="1" if no_numba else "0")
        out = subprocess.run(
            [sys.executable, "-c", self.SCRIPT],
            env=env, capture_output=True, text=True, check=True,
        )
        return out.stdout

    def test_identical_predictions(self):
        assert self.run(False) == self.run(True)

    def test_env_flag_selects_fallback(self):
        probe = "from tqsreg._kernels import USING_NUMBA; print(USING_NUMBA)"
        for flag, expect in (("1", "False"), ("0", "True")):
            env = dict(os.environ, TQSREG_NO_NUMBA=flag)
            out = subprocess.run(
                [sys.executable, "-c", probe],
                env=env, capture_output=True, text=True, check=True,
            )
            assert out.stdout.strip() == expect
