import math

import numpy as np
import pytest
from scipy import integrate, stats

from ermlimits.errors import AssumptionViolated, InvalidDistribution
from ermlimits.services.dists import (
    BinaryLink,
    NoiseModel,
    check_assumption4,
    effective_label_density,
    nu_f,
    parse_link_spec,
    parse_noise_spec,
)


class TestNoiseModel:
    """噪声分布的矩、Fisher 信息与解析卷积"""

    @pytest.mark.parametrize("var", [0.25, 1.0, 4.0])
    def test_gaussian_closed_forms(self, var):
        z = NoiseModel.gaussian(var)
        assert z.second_moment == pytest.approx(var)
        assert z.fisher() == pytest.approx(1.0 / var)

    @pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
    def test_laplace_closed_forms(self, b):
        z = NoiseModel.laplace(b)
        assert z.second_moment == pytest.approx(2.0 * b * b)
        assert z.fisher() == pytest.approx(1.0 / (b * b))

    def test_laplace_density_integrates_to_one(self, laplace):
        mass, _ = integrate.quad(lambda x: float(laplace.pdf(x)), -40, 40, points=[0.0])
        assert mass == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("a", [0.3, 1.0, 2.5])
    def test_laplace_convolution_matches_quadrature(self, laplace, a):
        v = np.array([-3.0, -0.7, 0.0, 0.4, 2.0])
        logp, _ = laplace.convolved(v, a)
        ref = [
            integrate.quad(lambda z: float(laplace.pdf(z)) * stats.norm.pdf(x - z, scale=a), -40, 40, points=[0.0, x])[0]
            for x in v
        ]
        np.testing.assert_allclose(np.exp(logp), ref, rtol=1e-8)

    def test_convolution_score_is_log_derivative(self, laplace):
        v = np.linspace(-4.0, 4.0, 9)
        h = 1e-5
        _, score = laplace.convolved(v, 0.8)
        lp_hi, _ = laplace.convolved(v + h, 0.8)
        lp_lo, _ = laplace.convolved(v - h, 0.8)
        np.testing.assert_allclose(score, (lp_hi - lp_lo) / (2 * h), atol=1e-6)

    def test_custom_grid_reproduces_gaussian(self, gaussian_grid_csv):
        z = NoiseModel.from_csv(gaussian_grid_csv)
        assert z.second_moment == pytest.approx(1.0, rel=1e-3)
        assert z.fisher() == pytest.approx(1.0, rel=1e-3)
        assert abs(z.mean) < 1e-6

    def test_custom_grid_rejects_bad_input(self):
        x = np.linspace(-5, 5, 50)
        with pytest.raises(InvalidDistribution):
            NoiseModel.from_grid(x[:5], np.ones(5))
        with pytest.raises(InvalidDistribution):
            NoiseModel.from_grid(x[::-1], stats.norm.pdf(x))
        with pytest.raises(InvalidDistribution):
            NoiseModel.from_grid(x, np.where(x > 0, stats.norm.pdf(x), 0.0))

    def test_custom_grid_rejects_nonzero_mean(self):
        x = np.linspace(-8, 10, 400)
        with pytest.raises(InvalidDistribution):
            NoiseModel.from_grid(x, stats.norm.pdf(x, loc=1.0))

    def test_missing_density_file(self, tmp_path):
        with pytest.raises(InvalidDistribution):
            NoiseModel.from_csv(tmp_path / "nope.csv")

    def test_sampling_is_seeded(self, laplace):
        a = laplace.sample(1000, seed=3)
        b = laplace.sample(1000, seed=3)
        np.testing.assert_array_equal(a, b)

    def test_laplace_sample_variance(self):
        z = NoiseModel.laplace(2.0)
        s = z.sample(200_000, seed=1)
        assert s.var() == pytest.approx(8.0, rel=2e-2)

    def test_scaled_noise(self, laplace):
        scaled = laplace.scaled(0.5)
        assert scaled.second_moment == pytest.approx(0.25 * laplace.second_moment)


class TestBinaryLink:
    """链接函数、ν_f 与 S·f(S) 的密度"""

    def test_sign_nu(self, sign_link):
        assert nu_f(sign_link) == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-10)

    @pytest.mark.parametrize("r", [0.5, 1.0, 4.0])
    def test_probit_nu(self, r):
        expected = math.sqrt(2.0 / math.pi) * r / math.sqrt(1.0 + r * r)
        assert nu_f(BinaryLink.probit(r)) == pytest.approx(expected, abs=1e-9)

    def test_logistic_nu_increases_with_strength(self):
        values = [nu_f(BinaryLink.logistic(r)) for r in (0.5, 1.0, 5.0, 50.0)]
        assert np.all(np.diff(values) > 0)
        assert values[-1] < math.sqrt(2.0 / math.pi)

    def test_even_link_violates_assumption(self):
        link = BinaryLink.custom(lambda x: 0.5 + 0.0 * np.asarray(x), label="even")
        with pytest.raises(AssumptionViolated):
            check_assumption4(link)

    def test_even_link_csv(self, even_link_csv):
        with pytest.raises(AssumptionViolated):
            check_assumption4(BinaryLink.from_csv(even_link_csv))

    @pytest.mark.parametrize("link", [BinaryLink.sign(), BinaryLink.logistic(1.0), BinaryLink.probit(2.0)])
    def test_effective_density(self, link):
        d = effective_label_density(link)
        mass, _ = integrate.quad(lambda x: float(d.pdf(x)), -12, 12, points=[0.0], limit=200)
        mean, _ = integrate.quad(lambda x: x * float(d.pdf(x)), -12, 12, points=[0.0], limit=200)
        assert mass == pytest.approx(1.0, abs=1e-8)
        assert mean == pytest.approx(nu_f(link), abs=1e-8)

    def test_sign_density_has_infinite_fisher(self, sign_link):
        assert math.isinf(effective_label_density(sign_link).fisher())

    def test_logistic_density_fisher_above_one(self, logistic10):
        assert effective_label_density(logistic10).fisher() > 1.0

    def test_sign_labels_are_deterministic(self, sign_link, rng):
        s = rng.standard_normal(500)
        s = s[np.abs(s) > 1e-12]
        np.testing.assert_array_equal(sign_link.sample_labels(s, seed=0), np.sign(s))

    def test_logistic_label_frequency(self):
        link = BinaryLink.logistic(1.0)
        y = link.sample_labels(np.full(100_000, 1.0), seed=5)
        assert np.mean(y == 1.0) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=5e-3)


class TestParsing:

    def test_noise_specs(self):
        assert parse_noise_spec("gaussian:2").second_moment == pytest.approx(2.0)
        assert parse_noise_spec("laplace:1").fisher() == pytest.approx(1.0)
        assert parse_noise_spec("gaussian").second_moment == pytest.approx(1.0)

    def test_link_specs(self):
        assert parse_link_spec("sign").name == "sign"
        assert parse_link_spec("logistic:10").strength == pytest.approx(10.0)
        assert parse_link_spec("probit:2").name == "probit:2"

    @pytest.mark.parametrize("spec", ["cauchy:1", "gaussian:abc", "custom"])
    def test_bad_noise_spec(self, spec):
        with pytest.raises(InvalidDistribution):
            parse_noise_spec(spec)

    @pytest.mark.parametrize("spec", ["logistic:-1", "tanh", "probit:x"])
    def test_bad_link_spec(self, spec):
        with pytest.raises(InvalidDistribution):
            parse_link_spec(spec)
