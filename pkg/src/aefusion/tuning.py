"""Architecture and basis-size search ranked by total RMSE."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .basis import build_kernel_grid
from .diagnostics import fitted_products, rmse
from .errors import ConfigurationError
from .model import CoefficientPrior, Link, NoisePrior, RELU
from .network import Architecture, validate_architecture
from .sampler import ChainConfig, run_chain
from .spatial_domain import ProductStack

log = logging.getLogger(__name__)


def enumerate_architectures(D: int) -> List[tuple]:
    """Every width sequence allowed for ``D`` products: one width-1 center,
    hidden widths at most ``D``, non-increasing into the center and
    non-decreasing after it, and at most ``2D - 3`` hidden layers."""
    max_hidden = 2 * D - 3
    out = []

    def encoders(prev, depth):
        # non-increasing sequences of widths in [2, prev] followed by the center
        yield ()
        if depth == 0:
            return
        for w in range(min(prev, D), 1, -1):
            for rest in encoders(w, depth - 1):
                yield (w,) + rest

    for enc in encoders(D, max_hidden - 1):
        for dec_rev in encoders(D, max_hidden - 1 - len(enc)):
            dec = tuple(reversed(dec_rev))
            widths = (D,) + enc + (1,) + dec + (D,)
            if len(widths) - 2 <= max_hidden:
                out.append(widths)
    return sorted(set(out), key=lambda w: (len(w), w))


@dataclass
class Candidate:
    widths: tuple
    nx: int
    ny: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    @property
    def label(self) -> str:
        return f"{'-'.join(map(str, self.widths))}@{self.nx}x{self.ny}"

    def architecture(self) -> Architecture:
        return Architecture.from_widths(self.widths, self.hidden_activation,
                                        self.output_activation)


@dataclass
class TuneResult:
    candidate: Candidate
    total_rmse: float
    rmse: np.ndarray
    acceptance: np.ndarray


def total_rmse(observed, fitted) -> float:
    """Root mean squared error pooled over every product and location."""
    per = rmse(observed, fitted)
    return float(np.sqrt(np.mean(per ** 2)))


def _fit_candidate(args):
    stack, cand, link, coef_prior, noise_prior, chain = args
    arch = cand.architecture()
    basis = build_kernel_grid(stack.grid, cand.nx, cand.ny)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        samples = run_chain(stack, arch, basis, link, coef_prior, noise_prior, chain)
    fitted = fitted_products(samples, link)
    return TuneResult(cand, total_rmse(stack, fitted), rmse(stack, fitted), samples.acceptance)


def tune(stack: ProductStack, candidates: Sequence[Candidate], chain: ChainConfig,
         link: Link = RELU, coef_prior: CoefficientPrior = CoefficientPrior(),
         noise_prior: NoisePrior = NoisePrior(), threads: int = 1) -> List[TuneResult]:
    """Fit each valid candidate and return results sorted by total RMSE.

    Invalid candidates are skipped with a warning.  Each candidate gets its own
    seed spawned from ``chain.seed``.
    """
    valid = []
    for c in candidates:
        try:
            validate_architecture(c.architecture(), stack.d_count)
        except ConfigurationError as exc:
            warnings.warn(f"skipping candidate {c.label}: {exc}", stacklevel=2)
            continue
        valid.append(c)
    seeds = np.random.SeedSequence(chain.seed).spawn(len(valid))
    jobs = [(stack, c, link, coef_prior, noise_prior,
             replace(chain, seed=int(s.generate_state(1)[0])))
            for c, s in zip(valid, seeds)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_fit_candidate, jobs))
    else:
        results = [_fit_candidate(j) for j in jobs]
    for r in results:
        log.info("candidate %s: total RMSE %.6g", r.candidate.label, r.total_rmse)
    return sorted(results, key=lambda r: (r.total_rmse, r.candidate.label))
