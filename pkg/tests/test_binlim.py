import math

import numpy as np
import pytest

from ermlimits.errors import AssumptionViolated, DomainError
from ermlimits.services import binlim
from ermlimits.services.dists import BinaryLink, nu_f
from ermlimits.services.moreau import named_loss

SIGN_RATIOS = {0.5: 0.9934, 2.0: 0.8531, 4.0: 0.6199, 6.0: 0.4602, 8.0: 0.3618}
LOGISTIC10_RATIOS = {0.5: 0.9826, 2.0: 0.8721, 4.0: 0.7116, 6.0: 0.6211, 8.0: 0.5712}
TABLE_CELLS = [
    pytest.param(
        BinaryLink.sign(), d, r, id=f"sign-{d:g}",
        marks=[pytest.mark.xfail(strict=True, reason="参考值 0.6199 与重算值 0.6121 相差约 0.008")] if d == 4.0 else [],
    )
    for d, r in SIGN_RATIOS.items()
] + [pytest.param(BinaryLink.logistic(10.0), d, r, id=f"logistic10-{d:g}") for d, r in LOGISTIC10_RATIOS.items()]


def rls_opt(delta, link):
    nu = nu_f(link)
    return binlim.H_delta(delta, 1.0 / (1.0 - nu * nu))


class TestClosedForms:
    """H_δ、岭回归闭式与平均估计"""

    def test_sign_rls_optimum_at_two(self, sign_link):
        assert rls_opt(2.0, sign_link) == pytest.approx(binlim.H_delta(2.0, math.pi / (math.pi - 2.0)))
        assert rls_opt(2.0, sign_link) == pytest.approx(0.4376, abs=1e-4)

    def test_H_delta_at_infinity(self):
        assert binlim.H_delta(0.5, math.inf) == pytest.approx(1.0)
        assert binlim.H_delta(3.0, math.inf) == 0.0
        with pytest.raises(DomainError):
            binlim.H_delta(2.0, 1.0)

    def test_H_delta_vectorized(self):
        x = np.array([1.5, 3.0, 10.0])
        np.testing.assert_allclose(binlim.H_delta(2.0, x), [binlim.H_delta(2.0, v) for v in x])
        assert np.all(np.diff(binlim.H_delta(2.0, x)) < 0)

    @pytest.mark.parametrize("delta", [0.5, 2.0, 6.0])
    def test_rls_optimum_is_H_delta(self, sign_link, delta):
        nu = nu_f(sign_link)
        lam_opt = binlim.rls_lambda_opt(delta, nu)
        assert binlim.rls_sigma_sq(delta, lam_opt, nu) == pytest.approx(rls_opt(delta, sign_link), rel=1e-10)
        grid = np.linspace(0.05, 5.0, 200) * lam_opt
        assert np.all(binlim.rls_sigma_sq(delta, grid, nu) >= rls_opt(delta, sign_link) - 1e-12)

    def test_rls_domain(self):
        with pytest.raises(DomainError):
            binlim.rls_sigma_sq(2.0, -0.5, 0.5)
        with pytest.raises(AssumptionViolated):
            binlim.rls_sigma_sq(2.0, 1.0, 0.0)

    @pytest.mark.parametrize("delta", [1.5, 3.0, 8.0])
    def test_rls_lambda_limits(self, sign_link, delta):
        nu = nu_f(sign_link)
        # λ → 0 为无正则化最小二乘，λ → ∞ 为平均估计
        assert binlim.rls_sigma_sq(delta, 1e-10, nu) == pytest.approx(binlim.binary_unregularized_ls_sigma_sq(delta, nu), rel=1e-6)
        assert binlim.rls_sigma_sq(delta, 1e6, nu) == pytest.approx(binlim.averaging_sigma_sq(delta, sign_link), rel=1e-3)

    def test_averaging_for_sign(self, sign_link):
        assert binlim.averaging_sigma_sq(2.0, sign_link) == pytest.approx(math.pi / 4.0, abs=1e-10)
        assert binlim.averaging_crossover(sign_link) == pytest.approx(math.pi / 2.0, abs=1e-10)

    def test_averaging_matches_least_squares_at_crossover(self, logistic10):
        nu = nu_f(logistic10)
        d = binlim.averaging_crossover(logistic10) + 1.0
        # 越过交点后无正则化最小二乘更好
        assert binlim.binary_unregularized_ls_sigma_sq(d, nu) < binlim.averaging_sigma_sq(d, logistic10)

    def test_correlation(self):
        assert float(binlim.correlation(0.0)) == 1.0
        assert float(binlim.correlation(1.0)) == pytest.approx(1.0 / math.sqrt(2.0))


class TestClassificationError:

    @pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5])
    def test_sign_closed_form(self, sign_link, sigma):
        # P(σG + |S| < 0) = arctan(σ)/π
        assert binlim.classification_error(sigma, sign_link) == pytest.approx(math.atan(sigma) / math.pi, abs=1e-8)

    def test_monotone_and_vectorized(self, logistic10):
        s = np.array([0.2, 0.5, 1.0, 3.0])
        err = binlim.classification_error(s, logistic10)
        assert err.shape == s.shape
        assert np.all(np.diff(err) > 0)
        assert np.all(err < 0.5)

    def test_nonpositive_sigma(self, sign_link):
        with pytest.raises(DomainError):
            binlim.classification_error(0.0, sign_link)


class TestSolveSystem:
    """(α, μ, τ) 方程组"""

    @pytest.mark.parametrize("link", [BinaryLink.sign(), BinaryLink.logistic(1.0)])
    @pytest.mark.parametrize("delta,lam", [(0.5, 1.0), (2.0, 0.5)])
    def test_square_margin_matches_closed_form(self, link, delta, lam):
        sol = binlim.solve_system_binary(named_loss("square-margin"), lam, delta, link)
        assert sol.sigma_sq == pytest.approx(binlim.rls_sigma_sq(delta, lam, nu_f(link)), abs=1e-6)
        assert sol.mu > 0

    def test_logistic_loss(self, logistic10):
        loss = named_loss("logistic")
        sol = binlim.solve_system_binary(loss, 0.1, 2.0, logistic10)
        res = binlim.binary_residuals(loss, sol.alpha, sol.mu, sol.tau, 0.1, 2.0, logistic10)
        np.testing.assert_allclose(res, 0.0, atol=2e-7)
        assert sol.sigma_sq >= binlim.sigma_star(2.0, logistic10).sigma_star_sq - 1e-6
        record = sol.to_record()
        assert record["class_error"] == pytest.approx(float(binlim.classification_error(sol.sigma, logistic10)))

    @pytest.mark.parametrize("name", ["square", "absolute"])
    def test_rejects_zero_slope_at_origin(self, sign_link, name):
        with pytest.raises(AssumptionViolated):
            binlim.solve_system_binary(named_loss(name), 1.0, 2.0, sign_link)

    def test_requires_positive_lambda(self, sign_link):
        with pytest.raises(DomainError):
            binlim.solve_system_binary(named_loss("square-margin"), 0.0, 2.0, sign_link)

    def test_even_link(self):
        even = BinaryLink.custom(lambda x: 0.5 + 0.0 * np.asarray(x), label="even")
        with pytest.raises(AssumptionViolated):
            binlim.solve_system_binary(named_loss("square-margin"), 1.0, 2.0, even)


class TestLowerBound:
    """σ⋆ 与表中比值"""

    def test_sign_table_point(self, sign_link):
        bound = binlim.sigma_star(2.0, sign_link)
        assert bound.sigma_star_sq / rls_opt(2.0, sign_link) == pytest.approx(SIGN_RATIOS[2.0], abs=5e-3)

    def test_logistic_table_point(self, logistic10):
        bound = binlim.sigma_star(2.0, logistic10)
        assert bound.sigma_star_sq / rls_opt(2.0, logistic10) == pytest.approx(LOGISTIC10_RATIOS[2.0], abs=5e-3)

    @pytest.mark.slow
    @pytest.mark.parametrize("link,delta,expected", TABLE_CELLS)
    def test_table_rows(self, link, delta, expected):
        ratio = binlim.sigma_star(delta, link).sigma_star_sq / rls_opt(delta, link)
        assert ratio == pytest.approx(expected, abs=5e-3)

    @pytest.mark.slow
    def test_sign_recomputed_cells(self, sign_link):
        # 偏正态闭式 + 高精度求积的独立重算
        for delta, expected in {2.0: 0.85253, 4.0: 0.61206, 6.0: 0.45957, 8.0: 0.36456}.items():
            ratio = binlim.sigma_star(delta, sign_link).sigma_star_sq / rls_opt(delta, sign_link)
            assert ratio == pytest.approx(expected, abs=5e-4), delta

    def test_bound_below_averaging(self, logistic10):
        value = binlim.sigma_star(2.0, logistic10).sigma_star_sq
        lower, upper = binlim.averaging_sandwich(2.0, logistic10)
        ratio = value / binlim.averaging_sigma_sq(2.0, logistic10)
        assert lower - 1e-6 <= ratio <= upper + 1e-9

    def test_omega_big_delta(self, logistic10):
        omega = binlim.omega_big_delta(2.0, logistic10)
        assert 0.0 < omega.omega <= 1.0 + 1e-9
        assert omega.closed_form_bound <= binlim.sigma_star(2.0, logistic10).sigma_star_sq + 1e-8

    @pytest.mark.parametrize("link", [BinaryLink.sign(), BinaryLink.logistic(1.0), BinaryLink.logistic(10.0)])
    def test_omega_at_most_one(self, link):
        for delta in (0.5, 2.0, 8.0, 50.0):
            assert binlim.omega_big_delta(delta, link).omega <= 1.0 + 1e-9

    @pytest.mark.slow
    @pytest.mark.parametrize("r,ceiling", [(1.0, 1.003 + 1e-3), (10.0, 2.442 + 5e-3)])
    def test_tuned_ridge_near_optimal(self, r, ceiling):
        # σ²_{ℓ₂,λopt}/σ⋆² 在 δ 网格上的最大值
        link = BinaryLink.logistic(r)
        ratios = [rls_opt(d, link) / binlim.sigma_star(d, link).sigma_star_sq for d in (0.5, 1.0, 2.0, 4.0, 8.0)]
        assert min(ratios) >= 1.0 - 1e-6
        assert max(ratios) <= ceiling

    def test_nonpositive_delta(self, sign_link):
        with pytest.raises(DomainError):
            binlim.sigma_star(-1.0, sign_link)


class TestUnregularized:

    def test_requires_delta_above_one(self, sign_link):
        with pytest.raises(DomainError):
            binlim.sigma_ureg_sq(0.8, sign_link)
        with pytest.raises(DomainError):
            binlim.binary_unregularized_ls_sigma_sq(1.0, 0.5)

    def test_gap_sandwich(self, logistic10):
        delta = 4.0
        ratio = binlim.sigma_star(delta, logistic10).sigma_star_sq / binlim.sigma_ureg_sq(delta, logistic10)
        gap = binlim.unreg_gap_binary(delta, logistic10)
        assert gap.lower - 1e-6 <= ratio <= gap.upper + 1e-6

    def test_unregularized_no_better_than_bound(self, sign_link):
        assert binlim.sigma_ureg_sq(3.0, sign_link) >= binlim.sigma_star(3.0, sign_link).sigma_star_sq - 1e-8


class TestOptimalLoss:

    def test_substitution(self, logistic10):
        loss, lam = binlim.optimal_loss_binary(2.0, logistic10)
        assert lam == pytest.approx(loss.metadata["lambda_star"])
        assert loss.metadata["substitution_residual"] < 1e-4

    def test_sign_substitution(self, sign_link):
        loss, lam = binlim.optimal_loss_binary(2.0, sign_link)
        assert lam > 0
        assert loss.metadata["substitution_residual"] < 1e-4

    @pytest.mark.slow
    def test_sign_loss_attains_bound(self, sign_link):
        bound = binlim.sigma_star(2.0, sign_link)
        loss, lam = binlim.optimal_loss_binary(2.0, sign_link, bound)
        sol = binlim.solve_system_binary(loss, lam, 2.0, sign_link)
        assert sol.alpha == pytest.approx(bound.sigma_star, rel=1e-3)
        assert sol.mu == pytest.approx(1.0, rel=1e-3)
        assert sol.tau == pytest.approx(1.0, rel=1e-3)

    @pytest.mark.slow
    def test_loss_attains_bound(self, logistic10):
        bound = binlim.sigma_star(2.0, logistic10)
        loss, lam = binlim.optimal_loss_binary(2.0, logistic10, bound)
        sol = binlim.solve_system_binary(loss, lam, 2.0, logistic10)
        assert sol.sigma_sq == pytest.approx(bound.sigma_star_sq, rel=1e-3)


def test_report_fields(sign_link):
    record = binlim.binary_report(2.0, sign_link)
    assert record["averaging_sq"] == pytest.approx(math.pi / 4.0)
    assert record["ratio"] == pytest.approx(record["sigma_star_sq"] / record["rls_opt_sq"])
    assert record["class_error_at_star"] <= record["class_error_at_opt"] + 1e-9
