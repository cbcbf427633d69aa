"""End-to-end acceptance gate.  Each test prints one PASS/FAIL line, and the
collected lines are repeated in the pytest terminal summary."""
import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from aefusion import diagnostics as dg
from aefusion.basis import build_kernel_grid, intercept_only
from aefusion.cli import main
from aefusion.model import IDENTITY, RELU, truncated_normal
from aefusion.network import (Architecture, CoefficientSet, constraint_mask,
                              count_free_parameters, forward, materialize_weights)
from aefusion.sampler import ChainConfig, ChainStallWarning, Sampler, run_chain
from aefusion.spatial_domain import ProductStack
from aefusion.synth import default_scenario, generate_from_truth
from conftest import small_stack

DEEP_WIDTHS = (4, 3, 2, 1, 2, 3, 4)
RECOVERY_CHAIN = dict(burn_in=20000, draws=10000, seed=11)


def _random_coeffs(mask, size, rng, scale=1.0):
    return CoefficientSet([scale * rng.normal(size=(m.n_free, size)) for m in mask.transitions])


def test_structural_exactness(report):
    t0 = time.perf_counter()
    arch = Architecture.from_widths(DEEP_WIDTHS)
    mask = constraint_mask(arch)
    rng = np.random.default_rng(1)
    bad = 0
    for _ in range(1000):
        coeffs = _random_coeffs(mask, 5, rng, scale=3.0)
        row = np.concatenate([[1.0], rng.random(4)])
        Ws = materialize_weights(coeffs, row, mask)
        for t, W in enumerate(Ws):
            if arch.is_decoder(t):
                ok = np.all(np.diag(W) == 1.0) and np.all(np.triu(W, 1) == 0.0)
                bad += not ok
        # No bias terms: a zero input must map to exactly zero everywhere.
        zero = forward(np.zeros(4), Ws, arch)
        bad += any(np.any(n != 0.0) for n in zero.neurons)
    n_free = count_free_parameters(arch)
    elapsed = time.perf_counter() - t0
    report(1, "structural exactness", bad == 0 and n_free == 30 and elapsed < 5,
           f"violations={bad}, free parameters={n_free}, {elapsed:.2f}s")


def _scalar_relu_forward(x, Ws):
    vals = list(map(float, x))
    for t, W in enumerate(Ws):
        nxt = []
        for p in range(W.shape[0]):
            acc = 0.0
            for j in range(W.shape[1]):
                acc += float(W[p, j]) * vals[j]
            nxt.append(acc if t == len(Ws) - 1 else max(acc, 0.0))
        vals = nxt
    return np.array(vals)


def test_forward_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    lin = Architecture.from_widths(DEEP_WIDTHS, hidden="identity")
    relu = Architecture.from_widths(DEEP_WIDTHS)
    mask = constraint_mask(lin)
    err_lin = err_relu = 0.0
    for _ in range(100):
        coeffs = _random_coeffs(mask, 3, rng)
        Ws = materialize_weights(coeffs, np.concatenate([[1.0], rng.random(2)]), mask)
        x = rng.normal(size=4)
        composed = np.linalg.multi_dot(Ws[::-1]) @ x
        err_lin = max(err_lin, np.max(np.abs(forward(x, Ws, lin).outputs - composed)))
        err_relu = max(err_relu, np.max(np.abs(forward(x, Ws, relu).outputs
                                               - _scalar_relu_forward(x, Ws))))
    elapsed = time.perf_counter() - t0
    report(2, "forward-pass oracle", err_lin <= 1e-12 and err_relu <= 1e-12 and elapsed < 10,
           f"max err identity={err_lin:.2e}, relu={err_relu:.2e}, {elapsed:.2f}s")


def test_conjugacy(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    s = Sampler(small_stack(rng.random((2, 8)) + 1.0), Architecture.from_widths((2, 1, 2)),
                intercept_only(), IDENTITY, config=ChainConfig(burn_in=0, draws=1))
    state = s.initialize_state(rng)
    resid = state.Z - state.fwd.outputs
    shape = 2.1 + 0.5 * resid.size
    rate = 1.1 + 0.5 * float(np.sum(resid ** 2))
    draws = np.array([s.update_sigma2(state, rng) for _ in range(100000)])
    mean_ig = rate / (shape - 1)
    var_ig = rate ** 2 / ((shape - 1) ** 2 * (shape - 2))
    rel_m = abs(draws.mean() / mean_ig - 1)
    rel_v = abs(draws.var() / var_ig - 1)
    elapsed = time.perf_counter() - t0
    report(3, "sigma2 conjugacy", rel_m < 0.01 and rel_v < 0.05 and elapsed < 10,
           f"mean rel err={rel_m:.4f}, variance rel err={rel_v:.4f}, {elapsed:.2f}s")


def test_truncation(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    z = truncated_normal(np.zeros(10**6), 1.0, rng, upper=0.0)
    mean_ok = abs(z.mean() - (-0.79788)) <= 0.003
    all_nonpos = bool(np.all(z <= 0))
    pvals = []
    # Body, lower-tail and deep-tail (rejection sampler) regimes.
    for mu, s2 in [(0.0, 1.0), (-1.5, 4.0), (4.0, 0.25)]:
        sd = math.sqrt(s2)
        x = truncated_normal(np.full(100000, mu), sd, rng, upper=0.0)
        all_nonpos &= bool(np.all(x <= 0))
        ref = stats.truncnorm(-np.inf, (0.0 - mu) / sd, loc=mu, scale=sd)
        pvals.append(float(stats.kstest(x, ref.cdf).pvalue))
    elapsed = time.perf_counter() - t0
    ok = mean_ok and all_nonpos and min(pvals) > 1e-3 and elapsed < 30
    report(4, "truncated-normal sampling", ok,
           f"mean={z.mean():.5f}, KS p-values={[round(p, 3) for p in pvals]}, "
           f"all<=0={all_nonpos}, {elapsed:.2f}s")


def test_prior_recovery(report):
    t0 = time.perf_counter()
    stack = small_stack(np.random.default_rng(5).random((2, 10)))
    cfg = ChainConfig(burn_in=10000, draws=190000, seed=5, likelihood=False)
    out = run_chain(stack, Architecture.from_widths((2, 1, 2)), intercept_only(), RELU,
                    config=cfg)
    theta = out.coefficients
    n_iter = out.trace_sigma2.size
    bias = np.mean(np.abs(theta.mean(axis=0)))
    rel_var = np.abs(theta.var(axis=0) / 5.0 - 1)
    elapsed = time.perf_counter() - t0
    ok = n_iter == 200000 and bias < 0.05 and np.all(rel_var < 0.10) and elapsed < 300
    report(5, "prior recovery with likelihood off", ok,
           f"mean |bias|={bias:.4f}, variance rel err={np.round(rel_var, 4).tolist()}, "
           f"{n_iter} iterations, {elapsed:.1f}s")


def _recovery_fit(stack):
    arch = Architecture.from_widths(DEEP_WIDTHS)
    basis = build_kernel_grid(stack.grid, 2, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ChainStallWarning)
        return run_chain(stack, arch, basis, RELU, config=ChainConfig(**RECOVERY_CHAIN))


@pytest.fixture(scope="module")
def recovery():
    t0 = time.perf_counter()
    stack, truth = generate_from_truth(default_scenario(seed=1))
    samples = _recovery_fit(stack)
    return stack, truth, samples, time.perf_counter() - t0


@pytest.mark.slow
def test_synthetic_recovery(report, recovery):
    stack, truth, samples, elapsed = recovery
    assert samples.basis.K == 4
    consensus = samples.consensus.mean(axis=0)
    corr = float(np.corrcoef(consensus, truth)[0, 1])
    r2 = dg.pseudo_r2(stack, dg.fitted_products(samples, RELU))
    ok = corr >= 0.9 and np.all(r2 >= 0.8) and elapsed < 900
    report(6, "synthetic recovery", ok,
           f"corr={corr:.4f}, pseudo-R2={np.round(r2, 3).tolist()}, {elapsed:.1f}s")


@pytest.mark.slow
def test_importance_symmetry(report):
    t0 = time.perf_counter()
    base, _ = generate_from_truth(default_scenario(seed=1))
    y = base.values[0]
    stack = ProductStack(base.grid, ("A", "B", "C", "D"), np.tile(y, (4, 1)))
    cfg = ChainConfig(burn_in=20000, draws=20000, seed=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ChainStallWarning)
        samples = run_chain(stack, Architecture.from_widths((4, 1, 4)), intercept_only(),
                            RELU, config=cfg)
    cm = dg.permutation_importance(samples, stack, 20, np.random.default_rng(0),
                                   per_draw=True, max_draws=100)
    frac = float(np.mean(np.all(np.abs(cm.centered) < 0.05, axis=0)))
    sum_err = float(np.max(np.abs(cm.raw.sum(axis=0) - 1.0)))
    elapsed = time.perf_counter() - t0
    ok = frac >= 0.95 and sum_err <= 4 * np.finfo(float).eps
    report(7, "importance symmetry", ok,
           f"locations within 0.05={frac:.3f}, max |centered|={np.abs(cm.centered).max():.4f}, "
           f"max |sum raw - 1|={sum_err:.1e}, {elapsed:.1f}s")


@pytest.mark.slow
def test_scale_anchoring(report, recovery):
    stack, _, samples, _ = recovery
    t0 = time.perf_counter()
    order = list(stack.names[1:]) + [stack.names[0]]
    reordered = _recovery_fit(stack.reorder(order))
    ref = samples.consensus.mean(axis=0)
    other = reordered.consensus.mean(axis=0)
    rep = dg.ordering_sensitivity(ref, other, stack.reorder(order).values[0])
    elapsed = time.perf_counter() - t0
    ok = rep.spearman >= 0.95 and 0.5 <= rep.slope_on_first <= 2.0
    report(8, "scale anchoring under reordering", ok,
           f"order={order}, spearman={rep.spearman:.4f}, slope on {order[0]}="
           f"{rep.slope_on_first:.3f}, {elapsed:.1f}s")


def test_determinism(report, tmp_path):
    t0 = time.perf_counter()
    (tmp_path / "sim.json").write_text(json.dumps({"simulate": {"seed": 2},
                                                   "output_dir": "sim"}))
    assert main(["simulate", "--config", str(tmp_path / "sim.json")]) == 0
    cfg = {"data": "sim/products.csv", "basis": {"nx": 2, "ny": 2},
           "chain": {"burn_in": 1500, "draws": 300, "seed": 21},
           "importance": {"n_permutations": 5, "per_draw": True, "max_draws": 10}}
    (tmp_path / "fit.json").write_text(json.dumps(cfg))
    for d in ("run1", "run2"):
        assert main(["fit", "--config", str(tmp_path / "fit.json"),
                     "--out", str(tmp_path / d)]) == 0
    files = sorted(p.name for p in (tmp_path / "run1").iterdir())
    differ = [f for f in files
              if (tmp_path / "run1" / f).read_bytes() != (tmp_path / "run2" / f).read_bytes()]
    same_set = files == sorted(p.name for p in (tmp_path / "run2").iterdir())
    elapsed = time.perf_counter() - t0
    report(9, "fit determinism", same_set and not differ and len(files) >= 10,
           f"{len(files)} files compared, differing={differ}, {elapsed:.1f}s")
