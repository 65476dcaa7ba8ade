import numpy as np
import pytest
from scipy import optimize

from ermlimits.errors import ConfigError, DomainError, NonCoercive
from ermlimits.services.moreau import (
    Loss,
    TabulatedLoss,
    envelope,
    envelope_ddx,
    envelope_dtau,
    envelope_dx,
    invert_envelope,
    named_loss,
    prox,
)

POINTS = np.array([-3.0, -1.2, -0.3, 0.0, 0.5, 1.7, 4.0])


def brute_prox(loss, x, tau):
    return optimize.minimize_scalar(lambda v: (x - v) ** 2 / (2 * tau) + float(loss(v)), bracket=(x - 10, x + 10), tol=1e-12).x


class TestProx:
    """近端算子：闭式、Newton 与标量最小化三条路径"""

    @pytest.mark.parametrize("name", ["square", "square-margin", "absolute", "huber:1.5", "huber-margin:1", "logistic", "logcosh"])
    @pytest.mark.parametrize("tau", [0.3, 1.0, 2.5])
    def test_matches_brute_force(self, name, tau):
        loss = named_loss(name)
        expected = [brute_prox(loss, x, tau) for x in POINTS]
        np.testing.assert_allclose(prox(loss, POINTS, tau), expected, atol=1e-6)

    def test_newton_path_without_closed_form(self):
        loss = Loss("sq", lambda t: t * t, lambda t: 2.0 * t, lambda t: np.full_like(t, 2.0))
        np.testing.assert_allclose(prox(loss, POINTS, 0.7), POINTS / 2.4, atol=1e-10)

    def test_scalar_path_without_derivative(self):
        loss = Loss("abs", np.abs)
        expected = np.sign(POINTS) * np.maximum(np.abs(POINTS) - 0.5, 0.0)
        np.testing.assert_allclose(prox(loss, POINTS, 0.5), expected, atol=1e-6)

    def test_scalar_input_returns_float(self):
        assert isinstance(prox(named_loss("square"), 1.0, 0.5), float)

    def test_nonpositive_tau(self):
        with pytest.raises(DomainError):
            prox(named_loss("square"), POINTS, 0.0)

    @pytest.mark.parametrize("name", ["absolute", "huber:1", "logistic", "square-margin", "logcosh"])
    def test_nonexpansive(self, name, rng):
        loss, tau = named_loss(name), 0.7
        x, y = rng.uniform(-6.0, 6.0, (2, 100))
        gap = np.abs(prox(loss, x, tau) - prox(loss, y, tau))
        assert np.all(gap <= np.abs(x - y) + 1e-8)


class TestEnvelope:
    """Moreau 包络及其导数"""

    def test_square_envelope(self):
        tau = 0.8
        np.testing.assert_allclose(envelope(named_loss("square"), POINTS, tau), POINTS ** 2 / (1 + 2 * tau), atol=1e-12)

    @pytest.mark.parametrize("name", ["huber:1", "logistic", "absolute"])
    def test_dx_is_derivative(self, name):
        loss, tau, h = named_loss(name), 0.6, 1e-6
        fd = (envelope(loss, POINTS + h, tau) - envelope(loss, POINTS - h, tau)) / (2 * h)
        np.testing.assert_allclose(envelope_dx(loss, POINTS, tau), fd, atol=1e-5)

    @pytest.mark.parametrize("name", ["huber:1", "logistic", "logcosh"])
    def test_dtau_is_derivative(self, name):
        loss, tau, h = named_loss(name), 0.9, 1e-6
        fd = (envelope(loss, POINTS, tau + h) - envelope(loss, POINTS, tau - h)) / (2 * h)
        np.testing.assert_allclose(envelope_dtau(loss, POINTS, tau), fd, atol=1e-5)

    @pytest.mark.parametrize("name", ["absolute", "huber:1", "logistic", "square"])
    def test_nonincreasing_in_tau(self, name, rng):
        loss = named_loss(name)
        x = rng.uniform(-5.0, 5.0, 50)
        t1, t2 = np.sort(rng.uniform(0.05, 3.0, (2, 50)), axis=0)
        for xi, a, b in zip(x, t1, t2):
            assert envelope(loss, xi, b) <= envelope(loss, xi, a) + 1e-10

    def test_ddx_square(self):
        np.testing.assert_allclose(envelope_ddx(named_loss("square"), POINTS, 0.5), np.full(POINTS.size, 1.0), atol=1e-12)

    def test_ddx_absolute_inside_dead_zone(self):
        # |x| < τ 时 M = x²/(2τ)
        x = np.array([-0.4, 0.1, 0.3])
        np.testing.assert_allclose(envelope_ddx(named_loss("absolute"), x, 1.0), np.ones(3), rtol=1e-4)


class TestNamedLoss:

    def test_parameterized_name(self):
        loss = named_loss("huber:1.5")
        assert loss.name == "huber:1.5"
        assert float(loss(3.0)) == pytest.approx(1.5 * 3.0 - 0.5 * 1.5 ** 2)

    @pytest.mark.parametrize("spec", ["hinge", "huber:abc"])
    def test_unknown(self, spec):
        with pytest.raises(ConfigError):
            named_loss(spec)

    def test_missing_derivative(self):
        with pytest.raises(DomainError):
            Loss("abs", np.abs).derivative(1.0)


class TestTabulatedLoss:
    """网格损失：插值、延拓、缩放与读写"""

    @pytest.fixture
    def square_table(self):
        grid = np.linspace(-3.0, 3.0, 61)
        return TabulatedLoss(grid, grid ** 2, 2.0 * grid, metadata={"lambda_star": 0.25})

    def test_interpolates_quadratic_exactly(self, square_table):
        t = np.array([-2.95, -0.01, 0.333, 2.5])
        np.testing.assert_allclose(square_table(t), t ** 2, atol=1e-12)
        np.testing.assert_allclose(square_table.derivative(t), 2 * t, atol=1e-10)

    def test_quadratic_extension(self, square_table):
        t = np.array([-6.0, 5.0])
        np.testing.assert_allclose(square_table(t), t ** 2, rtol=1e-8)
        np.testing.assert_allclose(square_table.second_derivative(t), [2.0, 2.0], rtol=1e-8)

    def test_convexity_and_fit(self, square_table):
        assert square_table.convex
        assert square_table.quadratic_fit_deviation() < 1e-10
        assert square_table.derivative_consistency() < 1e-2

    def test_rescaled(self, square_table):
        unit = square_table.rescaled("nonneg-unit")
        assert float(unit(1.0)) == pytest.approx(1.0)
        assert float(np.min(unit.values)) == pytest.approx(0.0)
        margin = square_table.rescaled("unit-at-1-2")
        assert float(margin(1.0)) == pytest.approx(0.0, abs=1e-12)
        assert float(margin(2.0)) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            square_table.rescaled("bogus")

    def test_csv_keeps_metadata(self, square_table, tmp_path):
        path = square_table.to_csv(tmp_path / "lstar.csv")
        loaded = TabulatedLoss.from_csv(path)
        assert loaded.metadata["lambda_star"] == pytest.approx(0.25)
        np.testing.assert_allclose(loaded(np.array([0.7])), [0.49], atol=1e-12)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            TabulatedLoss.from_csv(tmp_path / "nope.csv")

    def test_bad_grid(self):
        with pytest.raises(DomainError):
            TabulatedLoss([0.0, 1.0, 0.5, 2.0], np.zeros(4), np.zeros(4))

    def test_prox_of_table(self, square_table):
        np.testing.assert_allclose(prox(square_table, POINTS[1:-1], 0.5), POINTS[1:-1] / 2.0, atol=1e-8)


class TestInvertEnvelope:
    """由包络反求损失"""

    def test_recovers_square_loss(self):
        tau = 0.5
        c = 1.0 / (1.0 + 2.0 * tau)
        grid = np.linspace(-4.0, 4.0, 401)
        loss = invert_envelope(lambda w: c * w * w, tau, grid, dg=lambda w: 2 * c * w, d2g=lambda w: np.full_like(w, 2 * c))
        np.testing.assert_allclose(loss.values, grid ** 2, atol=1e-8)
        np.testing.assert_allclose(loss.derivatives, 2 * grid, atol=1e-8)
        np.testing.assert_allclose(envelope(loss, grid[100:300], tau), c * grid[100:300] ** 2, atol=1e-6)

    def test_recovers_absolute_from_huber(self):
        # |·| 在 τ = 1 的包络即 Huber
        grid = np.linspace(-4.0, 4.0, 401)
        g = lambda w: np.where(np.abs(w) <= 1.0, 0.5 * w * w, np.abs(w) - 0.5)
        np.testing.assert_allclose(g(grid), envelope(named_loss("absolute"), grid, 1.0), atol=1e-8)
        loss = invert_envelope(g, 1.0, grid, dg=lambda w: np.clip(w, -1.0, 1.0), d2g=lambda w: (np.abs(w) < 1.0).astype(float))
        np.testing.assert_allclose(loss.values, np.abs(grid), atol=1e-6)

    def test_nonconcave_inner_problem(self):
        tau = 0.5
        with pytest.raises(NonCoercive):
            invert_envelope(lambda w: 2.0 * w * w, tau, np.linspace(-2, 2, 41), dg=lambda w: 4.0 * w, d2g=lambda w: np.full_like(w, 4.0))

    def test_nonpositive_tau(self):
        with pytest.raises(DomainError):
            invert_envelope(lambda w: w * w, 0.0)
