"""MCMC for the fusion autoencoder.

Each iteration runs, in order: one adaptive Metropolis block update per layer
transition (encoder first, then decoder), a conjugate inverse-gamma draw of
``sigma2``, and a truncated-normal redraw of every censored latent cell.

Block proposals follow Haario et al. (2001): after ``adapt_start`` iterations
the proposal covariance is ``lam * 2.38**2 / dim * (C + eps * I)`` where ``C``
is the empirical covariance of the block's full history, refreshed every
``adapt_interval`` iterations.  ``lam`` is 1 for the plain algorithm; with
``scale_adaptation`` on it follows a Robbins-Monro recursion on ``log lam``
toward ``target_accept`` with step ``n**-0.6``.
"""
from __future__ import annotations

import io
import logging
import math
import warnings
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .basis import KernelBasis, evaluate_basis_matrix
from .errors import ConfigurationError, NumericalOverflowError
from .model import (
    CoefficientPrior,
    Link,
    NoisePrior,
    RELU,
    log_likelihood,
    sample_inverse_gamma,
    sigma2_conditional,
    truncated_normal,
)
from .network import (
    Architecture,
    BatchedNetwork,
    CoefficientSet,
    ForwardState,
    constraint_mask,
    validate_architecture,
)
from .spatial_domain import ProductStack, censoring_mask

log = logging.getLogger(__name__)


class ChainStallWarning(RuntimeWarning):
    pass


@dataclass
class ChainConfig:
    burn_in: int = 20000
    draws: int = 10000
    thin: int = 1
    seed: int = 0
    adapt_start: int = 1000
    adapt_interval: int = 100
    jitter: float = 1e-6
    init_variance: float = 0.01
    init_proposal_sd: float = 0.02
    scale_adaptation: bool = True
    target_accept: float = 0.234
    likelihood: bool = True
    log_every: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")
        if self.draws < 1:
            raise ConfigurationError("draws must be >= 1")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if self.adapt_interval < 1:
            raise ConfigurationError("adapt_interval must be >= 1")
        if not self.jitter > 0:
            raise ConfigurationError("jitter must be positive")

    @property
    def n_iterations(self) -> int:
        return self.burn_in + self.draws * self.thin


class _RunningMoments:
    """Welford accumulator for a mean vector and covariance matrix."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def push(self, x: np.ndarray):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += np.outer(delta, x - self.mean)

    def cov(self) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.m2)
        c = self.m2 / (self.n - 1)
        return 0.5 * (c + c.T)


class BlockProposal:
    """Running moments of one block's history and its Gaussian proposal.

    Two accumulators run side by side; ``restart`` promotes the younger one
    so that the covariance forgets history older than the previous restart.
    The sampler restarts at doubling milestones during burn-in only, which
    discards the initial transient while keeping a growing window.
    """

    def __init__(self, dim: int, init_sd: float, jitter: float = 1e-6):
        self.dim = dim
        self.jitter = jitter
        self.scale = 2.38 ** 2 / max(dim, 1)
        self._active = _RunningMoments(dim)
        self._next = _RunningMoments(dim)
        self.chol = np.eye(dim) * init_sd
        self._base_chol = self.chol
        self.log_lam = 0.0
        self._n_scale = 0
        self.adapted = False

    @property
    def n(self) -> int:
        return self._active.n

    @property
    def mean(self) -> np.ndarray:
        return self._active.mean

    def observe(self, x: np.ndarray):
        self._active.push(x)
        self._next.push(x)

    def restart(self):
        self._active, self._next = self._next, _RunningMoments(self.dim)

    @property
    def empirical_cov(self) -> np.ndarray:
        return self._active.cov()

    @property
    def covariance(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def tune_scale(self, accept_prob: float, target: float):
        """Robbins-Monro step on the global log scale factor."""
        self._n_scale += 1
        self.log_lam += self._n_scale ** -0.6 * (accept_prob - target)
        self.log_lam = min(max(self.log_lam, -20.0), 5.0)
        if self.adapted:
            self.chol = self._base_chol * math.exp(0.5 * self.log_lam)

    def adapt(self):
        cov = self.scale * (self.empirical_cov + self.jitter * np.eye(self.dim))
        try:
            base = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(cov)
            base = v * np.sqrt(np.clip(w, self.scale * self.jitter, None))
        self._base_chol = base
        self.chol = base * math.exp(0.5 * self.log_lam)
        self.adapted = True

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.chol @ rng.standard_normal(self.dim)


@dataclass
class ChainState:
    coeffs: CoefficientSet
    sigma2: float
    Z: np.ndarray                  # n x D latent targets
    fwd: ForwardState
    loglik: float
    iteration: int = 0
    accepts: np.ndarray = None
    proposals: np.ndarray = None


@dataclass
class PosteriorSamples:
    """Retained draws plus the full-length trace.

    ``outputs_mean`` is the posterior mean of the output layer (``n x D``);
    per-draw outputs are not kept to bound memory.
    """

    coefficients: np.ndarray       # draws x n_coefficients (flat ordering)
    sigma2: np.ndarray             # draws
    consensus: np.ndarray          # draws x n_locations
    outputs_mean: np.ndarray       # n_locations x D
    trace_m2loglik: np.ndarray     # every iteration
    trace_sigma2: np.ndarray
    acceptance: np.ndarray         # per block, post burn-in
    architecture: Architecture
    basis: KernelBasis
    names: tuple
    locations: np.ndarray
    config: ChainConfig = field(default_factory=ChainConfig)

    @property
    def n_draws(self) -> int:
        return self.coefficients.shape[0]

    def mean_coefficients(self) -> CoefficientSet:
        mask = constraint_mask(self.architecture)
        return CoefficientSet.from_flat(self.coefficients.mean(axis=0), mask, self.basis.size)

    def coefficient_draw(self, i: int) -> CoefficientSet:
        mask = constraint_mask(self.architecture)
        return CoefficientSet.from_flat(self.coefficients[i], mask, self.basis.size)

    def save(self, path):
        """Write an ``.npz`` archive; bytes depend only on the contents."""
        _write_npz(
            path,
            coefficients=self.coefficients,
            sigma2=self.sigma2,
            consensus=self.consensus,
            outputs_mean=self.outputs_mean,
            trace_m2loglik=self.trace_m2loglik,
            trace_sigma2=self.trace_sigma2,
            acceptance=self.acceptance,
            widths=np.array(self.architecture.widths),
            activations=np.array(self.architecture.activations),
            centers=self.basis.centers,
            bandwidths=np.array(self.basis.bandwidths),
            names=np.array(self.names),
            locations=self.locations,
            config=np.array(repr(asdict(self.config))),
        )

    @classmethod
    def load(cls, path) -> "PosteriorSamples":
        import ast

        with np.load(Path(path), allow_pickle=False) as f:
            return cls(
                coefficients=f["coefficients"],
                sigma2=f["sigma2"],
                consensus=f["consensus"],
                outputs_mean=f["outputs_mean"],
                trace_m2loglik=f["trace_m2loglik"],
                trace_sigma2=f["trace_sigma2"],
                acceptance=f["acceptance"],
                architecture=Architecture(tuple(int(w) for w in f["widths"]),
                                          tuple(str(a) for a in f["activations"])),
                basis=KernelBasis(f["centers"], tuple(f["bandwidths"])),
                names=tuple(str(n) for n in f["names"]),
                locations=f["locations"],
                config=ChainConfig(**ast.literal_eval(str(f["config"]))),
            )


def _write_npz(path, **arrays):
    # np.savez stamps entries with the current time; fix it for reproducibility.
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


class Sampler:
    """Holds the fixed pieces of a fit and performs the individual updates."""

    def __init__(self, stack: ProductStack, arch: Architecture, basis: KernelBasis,
                 link: Link = RELU, coef_prior: CoefficientPrior = CoefficientPrior(),
                 noise_prior: NoisePrior = NoisePrior(), config: ChainConfig = None):
        self.stack = stack
        self.arch = validate_architecture(arch, stack.d_count)
        self.basis = basis
        self.link = link
        self.coef_prior = coef_prior
        self.noise_prior = noise_prior
        self.config = config if config is not None else ChainConfig()
        stack.check_link(link)
        self.mask = constraint_mask(arch)
        self.basis_matrix = evaluate_basis_matrix(basis, stack.grid)
        self.net = BatchedNetwork(arch, self.basis_matrix, self.mask)
        self.inputs = stack.values.T.copy()
        self.n_blocks = arch.n_transitions
        self.block_dims = [m.n_free * basis.size for m in self.mask.transitions]

        cm = censoring_mask(stack, link)
        self.censored = cm.flags.T.copy()          # n x D
        cidx = np.nonzero(self.censored)
        self._cens_idx = cidx
        y = self.inputs[cidx]
        if link.kind == "threshold":
            self._cens_upper = np.where(y == 0, link.cutoff, np.inf)
            self._cens_lower = np.where(y == 1, link.cutoff, -np.inf)
        else:
            self._cens_upper = np.full(y.size, link.censoring_point if y.size else 0.0)
            self._cens_lower = np.full(y.size, -np.inf)

    # -- state ---------------------------------------------------------------

    def _loglik(self, Z, outputs, sigma2) -> float:
        if not self.config.likelihood:
            return 0.0
        return log_likelihood(Z, outputs, sigma2)

    def m2loglik(self, state: ChainState) -> float:
        return -2.0 * log_likelihood(state.Z, state.fwd.outputs, state.sigma2)

    def initialize_state(self, rng: np.random.Generator) -> ChainState:
        sd = math.sqrt(self.config.init_variance)
        coeffs = CoefficientSet(
            [sd * rng.standard_normal((m.n_free, self.basis.size)) for m in self.mask.transitions])
        Z = self.inputs.copy()
        if self._cens_idx[0].size:
            jit = 1e-3 * rng.random(self._cens_idx[0].size)
            bound = np.where(np.isfinite(self._cens_upper), self._cens_upper, self._cens_lower)
            sign = np.where(np.isfinite(self._cens_upper), -1.0, 1.0)
            Z[self._cens_idx] = bound + sign * jit
        fwd = self.net.run(self.inputs, coeffs)
        sigma2 = self.noise_prior.mean
        return ChainState(coeffs, sigma2, Z, fwd, self._loglik(Z, fwd.outputs, sigma2),
                          accepts=np.zeros(self.n_blocks, dtype=np.int64),
                          proposals=np.zeros(self.n_blocks, dtype=np.int64))

    def log_posterior(self, state: ChainState) -> float:
        theta = state.coeffs.flat()
        lp = -0.5 * np.dot(theta - self.coef_prior.mean, theta - self.coef_prior.mean) \
            / self.coef_prior.variance
        return state.loglik + lp

    # -- updates ---------------------------------------------------------------

    def update_layer_block(self, state: ChainState, layer: int, proposal: BlockProposal,
                           rng: np.random.Generator) -> bool:
        """Joint random-walk Metropolis update of every coefficient of one
        transition.  Returns whether the proposal was accepted."""
        old = state.coeffs.blocks[layer]
        step = proposal.draw(rng).reshape(old.shape)
        log_u = math.log(rng.random())
        state.proposals[layer] += 1
        if old.size == 0:
            return False
        new = old + step
        var, mu = self.coef_prior.variance, self.coef_prior.mean
        d_prior = -0.5 * (np.sum((new - mu) ** 2) - np.sum((old - mu) ** 2)) / var

        if self.config.likelihood:
            blocks = list(state.coeffs.blocks)
            blocks[layer] = new
            trial = CoefficientSet.__new__(CoefficientSet)
            trial.blocks = blocks
            try:
                fwd = self.net.run(None, trial, start=layer, neurons=state.fwd.neurons)
            except NumericalOverflowError:
                if self.config.scale_adaptation and proposal.adapted:
                    proposal.tune_scale(0.0, self.config.target_accept)
                return False
            loglik = log_likelihood(state.Z, fwd.outputs, state.sigma2)
            delta = loglik - state.loglik + d_prior
        else:
            fwd, loglik, delta = None, 0.0, d_prior
        if self.config.scale_adaptation and proposal.adapted:
            proposal.tune_scale(math.exp(min(delta, 0.0)) if math.isfinite(delta) else 0.0,
                                self.config.target_accept)
        if not math.isfinite(delta) or log_u >= delta:
            return False
        state.coeffs.blocks[layer] = new
        if fwd is not None:
            state.fwd = fwd
        state.loglik = loglik
        state.accepts[layer] += 1
        return True

    def update_sigma2(self, state: ChainState, rng: np.random.Generator) -> float:
        if self.config.likelihood:
            shape, rate = sigma2_conditional(state.Z, state.fwd.outputs, self.noise_prior)
        else:
            shape, rate = self.noise_prior.shape, self.noise_prior.rate
        state.sigma2 = sample_inverse_gamma(shape, rate, rng)
        state.loglik = self._loglik(state.Z, state.fwd.outputs, state.sigma2)
        return state.sigma2

    def update_latents(self, state: ChainState, rng: np.random.Generator):
        idx = self._cens_idx
        if idx[0].size == 0:
            return
        mean = state.fwd.outputs[idx]
        sd = math.sqrt(state.sigma2)
        up = np.isfinite(self._cens_upper)
        z = np.empty(mean.size)
        if up.any():
            z[up] = truncated_normal(mean[up], sd, rng, upper=self._cens_upper[up])
        if (~up).any():
            z[~up] = truncated_normal(mean[~up], sd, rng, lower=self._cens_lower[~up])
        state.Z[idx] = z
        state.loglik = self._loglik(state.Z, state.fwd.outputs, state.sigma2)

    # -- driver ----------------------------------------------------------------

    def new_proposals(self):
        return [BlockProposal(d, self.config.init_proposal_sd, self.config.jitter)
                for d in self.block_dims]

    def sweep(self, state: ChainState, proposals, rng: np.random.Generator):
        for t in range(self.n_blocks):
            self.update_layer_block(state, t, proposals[t], rng)
        self.update_sigma2(state, rng)
        if self.config.likelihood:
            self.update_latents(state, rng)
        state.iteration += 1

    def adapt_proposals(self, state: ChainState, proposals, window_acc: np.ndarray):
        """Post-sweep bookkeeping: record history, restart windows at burn-in
        milestones, refresh covariances on schedule and warn on stalls."""
        cfg = self.config
        for t, p in enumerate(proposals):
            if p.dim:
                p.observe(state.coeffs.blocks[t].ravel())
        done = state.iteration
        if done < cfg.adapt_start:
            return
        k = done / cfg.adapt_start
        if done <= cfg.burn_in and k >= 2 and k == int(k) and (int(k) & (int(k) - 1)) == 0:
            for p in proposals:
                p.restart()
        if (done - cfg.adapt_start) % cfg.adapt_interval:
            return
        if done > cfg.adapt_start:
            stalled = [t for t, p in enumerate(proposals)
                       if p.dim and p.adapted and window_acc[t] == 0]
            if stalled:
                warnings.warn(
                    f"iteration {done}: blocks {stalled} accepted nothing in the last "
                    f"{cfg.adapt_interval} iterations (dims "
                    f"{[proposals[t].dim for t in stalled]}, log scale "
                    f"{[round(proposals[t].log_lam, 2) for t in stalled]})",
                    ChainStallWarning, stacklevel=3)
        for p in proposals:
            if p.dim:
                p.adapt()
        window_acc[:] = 0

    def run(self, rng: Optional[np.random.Generator] = None) -> PosteriorSamples:
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        state = self.initialize_state(rng)
        proposals = self.new_proposals()
        n_iter = cfg.n_iterations
        n = self.stack.n_locations
        D = self.stack.d_count
        trace = np.empty(n_iter)
        trace_s2 = np.empty(n_iter)
        coef_draws = np.empty((cfg.draws, state.coeffs.size))
        s2_draws = np.empty(cfg.draws)
        cons_draws = np.empty((cfg.draws, n))
        out_sum = np.zeros((n, D))
        window_acc = np.zeros(self.n_blocks, dtype=np.int64)
        post_acc = np.zeros(self.n_blocks, dtype=np.int64)
        kept = 0
        for it in range(n_iter):
            before = state.accepts.copy()
            self.sweep(state, proposals, rng)
            accepted = state.accepts - before
            window_acc += accepted
            self.adapt_proposals(state, proposals, window_acc)
            done = it + 1
            trace[it] = self.m2loglik(state) if cfg.likelihood else np.nan
            trace_s2[it] = state.sigma2
            if it >= cfg.burn_in:
                post_acc += accepted
                if (it - cfg.burn_in) % cfg.thin == cfg.thin - 1:
                    coef_draws[kept] = state.coeffs.flat()
                    s2_draws[kept] = state.sigma2
                    cons_draws[kept] = state.fwd.consensus
                    out_sum += state.fwd.outputs
                    kept += 1
            if cfg.log_every and done % cfg.log_every == 0:
                log.info("iter %d/%d  -2loglik=%.4g  sigma2=%.4g  accept=%s", done, n_iter,
                         trace[it], state.sigma2,
                         np.round(state.accepts / np.maximum(state.proposals, 1), 3))
        n_post = max(n_iter - cfg.burn_in, 1)
        return PosteriorSamples(
            coefficients=coef_draws,
            sigma2=s2_draws,
            consensus=cons_draws,
            outputs_mean=out_sum / kept,
            trace_m2loglik=trace,
            trace_sigma2=trace_s2,
            acceptance=post_acc / n_post,
            architecture=self.arch,
            basis=self.basis,
            names=self.stack.names,
            locations=np.asarray(self.stack.grid.locations),
            config=cfg,
        )


def run_chain(stack: ProductStack, arch: Architecture, basis: KernelBasis,
              link: Link = RELU, coef_prior: CoefficientPrior = CoefficientPrior(),
              noise_prior: NoisePrior = NoisePrior(),
              config: Optional[ChainConfig] = None) -> PosteriorSamples:
    """Fit the autoencoder by MCMC; reproducible given ``config.seed``."""
    return Sampler(stack, arch, basis, link, coef_prior, noise_prior, config).run()
