import math

import numpy as np
import pytest
from scipy import integrate, stats

from aefusion.errors import ConfigurationError, DomainError
from aefusion.model import (IDENTITY, RELU, CoefficientPrior, Link, NoisePrior, apply_link,
                            log_likelihood, log_prior, sample_censored_z, sample_inverse_gamma,
                            sigma2_conditional, truncated_normal)


class TestLink:
    def test_relu(self):
        assert apply_link(RELU, 1.5) == 1.5
        assert apply_link(RELU, -2.0) == 0.0

    def test_identity(self):
        assert apply_link(IDENTITY, -2.0) == -2.0

    def test_threshold(self):
        link = Link.parse({"threshold": 0.5})
        assert apply_link(link, 0.7) == 1.0
        assert apply_link(link, 0.2) == 0.0

    def test_parse_roundtrip(self):
        for spec in ("relu", "identity", {"threshold": 0.25}):
            assert Link.parse(Link.parse(spec).to_config()) == Link.parse(spec)
        with pytest.raises(ConfigurationError):
            Link.parse("softmax")


class TestLogLikelihood:
    def test_zero_residuals(self):
        z = np.arange(6.0).reshape(3, 2)
        assert log_likelihood(z, z, 1.0) == pytest.approx(-3 * math.log(2 * math.pi))

    def test_single_point(self):
        assert log_likelihood([2.0], [0.0], 4.0) == pytest.approx(
            -0.5 * math.log(8 * math.pi) - 0.5, abs=1e-14)

    def test_matches_scipy(self, rng):
        z, m = rng.normal(size=20), rng.normal(size=20)
        assert log_likelihood(z, m, 0.7) == pytest.approx(
            stats.norm.logpdf(z, m, math.sqrt(0.7)).sum(), rel=1e-12)

    def test_duplication_doubles_deficit(self, rng):
        z, m = rng.normal(size=5), rng.normal(size=5)
        s2 = 1.3

        def deficit(a, b):
            return log_likelihood(a, b, s2) + 0.5 * a.size * math.log(2 * math.pi * s2)

        assert deficit(np.tile(z, 2), np.tile(m, 2)) == pytest.approx(2 * deficit(z, m))

    def test_nonpositive_variance(self):
        with pytest.raises(DomainError):
            log_likelihood([0.0], [0.0], 0.0)


class TestLogPrior:
    def test_mode(self):
        assert log_prior(np.zeros(7)) == pytest.approx(-3.5 * math.log(10 * math.pi))

    def test_single_at_sqrt5(self):
        assert log_prior([math.sqrt(5)]) == pytest.approx(
            -0.5 * math.log(10 * math.pi) - 0.5, abs=1e-14)

    def test_monotone_in_magnitude(self):
        vals = [log_prior([0.0, t]) for t in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_matches_scipy_with_variance_five(self, rng):
        th = rng.normal(size=9)
        assert log_prior(th, CoefficientPrior(0.0, 5.0)) == pytest.approx(
            stats.norm.logpdf(th, 0, math.sqrt(5)).sum(), rel=1e-12)


class TestSigma2Conditional:
    def test_zero_residuals(self):
        assert sigma2_conditional(np.ones(10), np.ones(10)) == pytest.approx((7.1, 1.1))

    def test_empty(self):
        assert sigma2_conditional(np.empty(0), np.empty(0)) == pytest.approx((2.1, 1.1))

    def test_two_residuals(self):
        assert sigma2_conditional([1.0, -1.0], [0.0, 0.0]) == pytest.approx((3.1, 2.1))

    def test_prior_shape_must_exceed_two(self):
        with pytest.raises(ConfigurationError):
            NoisePrior(2.0, 1.0)

    def test_inverse_gamma_mean(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_inverse_gamma(7.1, 3.0, rng) for _ in range(40000)])
        assert draws.mean() == pytest.approx(3.0 / 6.1, rel=0.01)
        assert np.all(draws > 0)


class TestTruncatedNormal:
    def test_support(self, rng):
        z = sample_censored_z(rng.normal(size=5000) * 3, 2.0, rng)
        assert np.all(z <= 0)

    def test_standard_half_mean(self):
        z = sample_censored_z(np.zeros(200000), 1.0, np.random.default_rng(5))
        assert z.mean() == pytest.approx(-math.sqrt(2 / math.pi), abs=0.006)

    def test_far_mean_matches_quadrature(self):
        f = lambda x: x * stats.norm.pdf(x, -10, 1)
        oracle = integrate.quad(f, -np.inf, 0)[0] / stats.norm.cdf(0, -10, 1)
        z = sample_censored_z(np.full(20000, -10.0), 1.0, np.random.default_rng(2))
        assert z.mean() == pytest.approx(oracle, abs=0.03)

    def test_deep_tail_uses_rejection_branch(self):
        # Mean 8 sd above the bound: inverse-CDF would lose all precision.
        z = truncated_normal(np.full(20000, 8.0), 1.0, np.random.default_rng(4), upper=0.0)
        b = -8.0
        oracle = 8.0 - stats.norm.pdf(b) / stats.norm.cdf(b)
        assert np.all(z <= 0)
        assert z.mean() == pytest.approx(oracle, abs=0.01)

    def test_lower_truncation(self, rng):
        z = truncated_normal(np.zeros(50000), 1.0, rng, lower=0.5)
        assert np.all(z >= 0.5)
        expect = stats.truncnorm.mean(0.5, np.inf)
        assert z.mean() == pytest.approx(expect, abs=0.01)

    def test_rejects_two_sided(self, rng):
        with pytest.raises(ValueError):
            truncated_normal(0.0, 1.0, rng, lower=-1, upper=1)
