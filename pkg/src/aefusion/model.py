"""Probability model: link functions, censored Gaussian data layer and priors.

Observed values are ``Y = g(Z)`` where ``Z ~ N(output, sigma2)`` independently
over products and locations.  Coefficients carry independent Gaussian priors
and ``sigma2`` an inverse-gamma prior, which is conjugate given the residuals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_ndtr, ndtri

from .errors import ConfigurationError, DomainError

LOG_2PI = math.log(2.0 * math.pi)

# Standardized truncation point above which the exponential-proposal
# rejection sampler replaces inverse-CDF sampling.
_TAIL_SWITCH = 3.0


@dataclass(frozen=True)
class Link:
    """Support-preserving transform from the latent field to observations.

    ``kind`` is one of ``"relu"``, ``"identity"`` or ``"threshold"``; the
    threshold link uses ``cutoff`` and maps ``z`` to ``1(z > cutoff)``.
    """

    kind: str = "relu"
    cutoff: float = 0.0

    def __post_init__(self):
        if self.kind not in ("relu", "identity", "threshold"):
            raise ConfigurationError(f"unknown link kind {self.kind!r}")
        if not math.isfinite(self.cutoff):
            raise ConfigurationError("link cutoff must be finite")

    @classmethod
    def parse(cls, spec) -> "Link":
        """Build a link from a config value: ``"relu"``, ``"identity"``,
        ``{"threshold": c}`` or ``{"kind": ..., "cutoff": ...}``."""
        if isinstance(spec, Link):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        if isinstance(spec, dict):
            if "threshold" in spec:
                return cls("threshold", float(spec["threshold"]))
            return cls(spec.get("kind", "relu"), float(spec.get("cutoff", 0.0)))
        raise ConfigurationError(f"cannot interpret link specification {spec!r}")

    def to_config(self):
        if self.kind == "threshold":
            return {"threshold": self.cutoff}
        return self.kind

    @property
    def censoring_point(self) -> Optional[float]:
        """Observed value at which the latent is only known up to a bound."""
        if self.kind == "relu":
            return 0.0
        if self.kind == "threshold":
            return self.cutoff
        return None

    def __call__(self, z):
        return apply_link(self, z)


RELU = Link("relu")
IDENTITY = Link("identity")


def apply_link(link: Link, z):
    z = np.asarray(z, dtype=float)
    if link.kind == "relu":
        out = np.maximum(z, 0.0)
    elif link.kind == "identity":
        out = z.copy()
    else:
        out = (z > link.cutoff).astype(float)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class CoefficientPrior:
    mean: float = 0.0
    variance: float = 5.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError("coefficient prior variance must be positive")


@dataclass(frozen=True)
class NoisePrior:
    """Inverse-gamma prior on sigma2 with density proportional to
    ``x**(-shape - 1) * exp(-rate / x)``."""

    shape: float = 2.1
    rate: float = 1.1

    def __post_init__(self):
        if not self.shape > 2:
            raise ConfigurationError("noise prior shape must exceed 2 (finite variance)")
        if not self.rate > 0:
            raise ConfigurationError("noise prior rate must be positive")

    @property
    def mean(self) -> float:
        return self.rate / (self.shape - 1.0)


def log_likelihood(Z, outputs, sigma2: float) -> float:
    """Sum of independent ``N(outputs, sigma2)`` log densities at ``Z``."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    resid = np.asarray(Z, dtype=float) - np.asarray(outputs, dtype=float)
    n = resid.size
    ss = float(np.sum(resid * resid))
    return -0.5 * n * (LOG_2PI + math.log(sigma2)) - 0.5 * ss / sigma2


def log_prior(coefficients, prior: CoefficientPrior = CoefficientPrior()) -> float:
    """Independent Gaussian log prior summed over every coefficient.

    ``coefficients`` may be a ``CoefficientSet`` or any array-like.
    """
    if callable(getattr(coefficients, "flat", None)):
        theta = np.asarray(coefficients.flat(), dtype=float)
    else:
        theta = np.asarray(coefficients, dtype=float).ravel()
    d = theta - prior.mean
    return float(-0.5 * theta.size * (LOG_2PI + math.log(prior.variance))
                 - 0.5 * np.dot(d, d) / prior.variance)


def sigma2_conditional(Z, outputs, prior: NoisePrior = NoisePrior()):
    """Return ``(shape, rate)`` of the inverse-gamma complete conditional."""
    resid = np.asarray(Z, dtype=float) - np.asarray(outputs, dtype=float)
    return (prior.shape + 0.5 * resid.size,
            prior.rate + 0.5 * float(np.sum(resid * resid)))


def sample_inverse_gamma(shape: float, rate: float, rng: np.random.Generator) -> float:
    return rate / rng.gamma(shape)


def _std_normal_above(alpha, rng):
    """Draw ``X ~ N(0, 1)`` conditioned on ``X >= alpha`` (elementwise)."""
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty(alpha.shape)
    tail = alpha > _TAIL_SWITCH

    body = ~tail
    if np.any(body):
        a = alpha[body]
        # Inverse CDF on the upper tail: P(X >= x) = u * P(X >= a).
        u = rng.random(a.shape)
        log_p = np.log(u) + log_ndtr(-a)
        x = -ndtri(np.exp(log_p))
        out[body] = np.maximum(x, a)

    if np.any(tail):
        # Robert (1995) translated-exponential rejection with optimal rate.
        a = alpha[tail]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        res = np.empty(a.shape)
        todo = np.arange(a.size)
        while todo.size:
            x = a[todo] + rng.exponential(size=todo.size) / lam[todo]
            accept = rng.random(todo.size) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
            res[todo[accept]] = x[accept]
            todo = todo[~accept]
        out[tail] = res
    return out


def truncated_normal(mean, sd, rng: np.random.Generator, lower=None, upper=None):
    """One-sided truncated normal draws.

    Exactly one of ``lower`` / ``upper`` should be given (scalars or arrays
    broadcastable against ``mean``).  With neither, plain normal draws.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    if lower is not None and upper is not None:
        raise ValueError("only one-sided truncation is supported")
    if upper is not None:
        alpha = (mean - np.asarray(upper, dtype=float)) / sd
        x = _std_normal_above(np.broadcast_to(alpha, mean.shape), rng)
        return np.minimum(mean - sd * x, upper)
    if lower is not None:
        alpha = (np.asarray(lower, dtype=float) - mean) / sd
        x = _std_normal_above(np.broadcast_to(alpha, mean.shape), rng)
        return np.maximum(mean + sd * x, lower)
    return mean + sd * rng.standard_normal(mean.shape)


def sample_censored_z(mean, sigma2: float, rng: np.random.Generator, upper: float = 0.0):
    """Draw from ``N(mean, sigma2)`` truncated to ``(-inf, upper]``."""
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    out = truncated_normal(mean, math.sqrt(sigma2), rng, upper=upper)
    return out[()] if np.ndim(out) == 0 else out
