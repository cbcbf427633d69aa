"""Posterior summaries, fit metrics and product-contribution diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InsufficientSamplesError, StructuralError, UndefinedMetricError
from .model import Link, RELU, apply_link
from .network import Architecture, BatchedNetwork, CoefficientSet

# Hyndman-Fan type 8, approximately median-unbiased regardless of the
# sampling distribution.
QUANTILE_METHOD = "median_unbiased"


@dataclass
class ConsensusSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def consensus_summary(samples, level: float = 0.95) -> ConsensusSummary:
    """Posterior mean and centered credible interval at every location.

    ``samples`` is a ``PosteriorSamples`` or a ``draws x n`` array.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    draws = np.asarray(getattr(samples, "consensus", samples), dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 1:
        raise InsufficientSamplesError("no consensus draws")
    if draws.shape[0] < 2:
        raise InsufficientSamplesError("credible intervals need at least 2 draws")
    mean = draws.mean(axis=0)
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(draws, [tail, 1.0 - tail], axis=0, method=QUANTILE_METHOD)
    # Guard against round-off when every draw is identical.
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    return ConsensusSummary(mean, lower, upper, level)


def _as_matrix(values, D=None):
    a = np.asarray(getattr(values, "values", values), dtype=float)
    return a


def _pearson_sq(a, b, label):
    sa, sb = np.std(a), np.std(b)
    if sa == 0 or sb == 0:
        raise UndefinedMetricError(f"{label}: zero variance, correlation undefined")
    r = np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb)
    return float(r * r)


def pseudo_r2(observed, fitted) -> np.ndarray:
    """Squared correlation between each observed product and its fit.

    Both arguments are ``D x n`` (``observed`` may be a ``ProductStack``).
    Pass ``g(posterior mean outputs)`` as ``fitted``.
    """
    obs = _as_matrix(observed)
    fit = np.asarray(fitted, dtype=float)
    if obs.shape != fit.shape:
        raise StructuralError(f"observed {obs.shape} and fitted {fit.shape} differ")
    if obs.shape[1] < 2:
        raise UndefinedMetricError("pseudo-R2 needs at least 2 locations")
    return np.array([_pearson_sq(o, f, f"product {d}") for d, (o, f) in enumerate(zip(obs, fit))])


def rmse(observed, fitted) -> np.ndarray:
    obs = _as_matrix(observed)
    fit = np.asarray(fitted, dtype=float)
    if obs.shape != fit.shape:
        raise StructuralError(f"observed {obs.shape} and fitted {fit.shape} differ")
    return np.sqrt(np.mean((obs - fit) ** 2, axis=1))


def fitted_products(samples, link: Link = RELU) -> np.ndarray:
    """``g`` applied to the posterior-mean outputs, as ``D x n``."""
    return np.asarray(apply_link(link, samples.outputs_mean)).T


def mean_baseline(stack) -> np.ndarray:
    return _as_matrix(stack).mean(axis=0)


def difference_map(consensus_a, consensus_b) -> np.ndarray:
    a = np.asarray(consensus_a, dtype=float)
    b = np.asarray(consensus_b, dtype=float)
    if a.shape != b.shape:
        raise StructuralError(f"fields on different grids: {a.shape} vs {b.shape}")
    return a - b


def average_pseudo_r2(consensus, stack) -> float:
    """Mean over products of ``Corr(Y_d, consensus)**2``."""
    obs = _as_matrix(stack)
    c = np.asarray(consensus, dtype=float)
    if c.shape != (obs.shape[1],):
        raise StructuralError(f"consensus shape {c.shape} does not match {obs.shape[1]} locations")
    if c.size < 2:
        raise UndefinedMetricError("pseudo-R2 needs at least 2 locations")
    return float(np.mean([_pearson_sq(o, c, f"product {d}") for d, o in enumerate(obs)]))


@dataclass
class ContributionMap:
    """Permutation-importance contributions, each ``D x n``.

    ``centered = raw - 1/D`` so that 0 means an equal share; ``summary`` is
    the spatial mean of ``centered`` per product.
    """

    raw: np.ndarray
    centered: np.ndarray
    summary: np.ndarray
    effects: np.ndarray
    degenerate: np.ndarray


def _consensus(net: BatchedNetwork, inputs, coeffs):
    return net.run(inputs, coeffs).consensus


def permutation_effects(coeffs_list: Sequence[CoefficientSet], inputs: np.ndarray,
                        arch: Architecture, basis_matrix: np.ndarray, n_permutations: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Mean absolute consensus change per product and location (``D x n``)
    when that product's values are shuffled across locations.

    The same set of location permutations is applied to every product (and
    every coefficient set) so that differences between products are not
    masked by permutation noise.
    """
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    net = BatchedNetwork(arch, basis_matrix)
    n, D = inputs.shape
    effects = np.zeros((D, n))
    perms = [rng.permutation(n) for _ in range(n_permutations)]
    for coeffs in coeffs_list:
        base = _consensus(net, inputs, coeffs)
        for d in range(D):
            for perm in perms:
                shuffled = inputs.copy()
                shuffled[:, d] = inputs[perm, d]
                effects[d] += np.abs(_consensus(net, shuffled, coeffs) - base)
    return effects / (n_permutations * len(coeffs_list))


def normalize_contributions(effects: np.ndarray) -> ContributionMap:
    effects = np.asarray(effects, dtype=float)
    D = effects.shape[0]
    total = effects.sum(axis=0)
    degenerate = total <= 0
    raw = np.full(effects.shape, 1.0 / D)
    ok = ~degenerate
    raw[:, ok] = effects[:, ok] / total[ok]
    centered = raw - 1.0 / D
    return ContributionMap(raw, centered, centered.mean(axis=1), effects, degenerate)


def permutation_importance(samples, stack, n_permutations: int = 20,
                           rng: Optional[np.random.Generator] = None, per_draw: bool = False,
                           max_draws: int = 100, basis_matrix: Optional[np.ndarray] = None,
                           arch: Optional[Architecture] = None) -> ContributionMap:
    """Permutation-importance contribution of each product to the consensus.

    Uses posterior-mean coefficients, or with ``per_draw`` averages the
    effects over up to ``max_draws`` evenly spaced retained draws.
    ``samples`` may also be a ``CoefficientSet`` (then ``arch`` and
    ``basis_matrix`` are required).
    """
    from .basis import evaluate_basis_matrix

    rng = rng if rng is not None else np.random.default_rng(0)
    if isinstance(samples, CoefficientSet):
        if arch is None or basis_matrix is None:
            raise ValueError("arch and basis_matrix are required with a CoefficientSet")
        coeffs_list = [samples]
    else:
        arch = samples.architecture
        if basis_matrix is None:
            basis_matrix = evaluate_basis_matrix(samples.basis, stack.grid)
        if per_draw:
            idx = np.unique(np.linspace(0, samples.n_draws - 1, min(max_draws, samples.n_draws))
                            .round().astype(int))
            coeffs_list = [samples.coefficient_draw(i) for i in idx]
        else:
            coeffs_list = [samples.mean_coefficients()]
    effects = permutation_effects(coeffs_list, stack.values.T, arch, basis_matrix,
                                  n_permutations, rng)
    return normalize_contributions(effects)


@dataclass
class OrderingReport:
    spearman: float
    slope_on_first: float


def ordering_sensitivity(consensus_ref, consensus_other, first_product) -> OrderingReport:
    """Rank agreement of two consensus fields and the least-squares slope of
    ``consensus_other`` on the product it is anchored to."""
    rho = stats.spearmanr(consensus_ref, consensus_other).statistic
    x = np.asarray(first_product, dtype=float)
    y = np.asarray(consensus_other, dtype=float)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    return OrderingReport(float(rho), slope)
