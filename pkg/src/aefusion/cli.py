"""Command-line interface: ``aefusion {fit,tune,simulate,importance,summarize}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import RunConfig
from .errors import FusionError
from .sampler import PosteriorSamples, Sampler, _write_npz
from .spatial_domain import ProductStack, SpatialGrid, load_products, write_products, write_table
from .synth import SyntheticScenario, default_scenario, generate_from_truth
from .tuning import Candidate, enumerate_architectures, tune

log = logging.getLogger("aefusion")


def _header(cfg: RunConfig):
    return [f"config_sha256={cfg.hash}"]


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_matrix(path: Path, matrix, row_label: str, col_prefix: str, header_lines=()):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [f"# {h}" for h in header_lines]
    lines.append(",".join([row_label] + [f"{col_prefix}{j}" for j in range(matrix.shape[1])]))
    for i, row in enumerate(matrix):
        lines.append(",".join([str(i)] + [repr(float(v)) for v in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_stack(cfg: RunConfig) -> ProductStack:
    stack = load_products(cfg.data_path, cfg.link)
    if cfg.ordering:
        stack = stack.reorder(cfg.ordering)
    return stack


def write_summaries(cfg: RunConfig, stack: ProductStack, samples: PosteriorSamples,
                    out: Path, importance: bool = True) -> dict:
    """Consensus, fitted products, baseline comparison and metrics."""
    hdr = _header(cfg)
    link = cfg.link
    summ = dg.consensus_summary(samples, cfg.credible_level)
    write_table(out / "consensus.csv", stack.grid,
                {"mean": summ.mean, "lower": summ.lower, "upper": summ.upper}, hdr)
    fitted = dg.fitted_products(samples, link)
    write_table(out / "fitted.csv", stack.grid, dict(zip(stack.names, fitted)), hdr)
    baseline = dg.mean_baseline(stack)
    write_table(out / "baseline.csv", stack.grid,
                {"mean_baseline": baseline,
                 "consensus_minus_baseline": dg.difference_map(summ.mean, baseline)}, hdr)
    metrics = {
        "config_sha256": cfg.hash,
        "products": list(stack.names),
        "pseudo_r2": dict(zip(stack.names, map(float, dg.pseudo_r2(stack, fitted)))),
        "rmse": dict(zip(stack.names, map(float, dg.rmse(stack, fitted)))),
        "average_pseudo_r2_consensus": dg.average_pseudo_r2(summ.mean, stack),
        "average_pseudo_r2_mean_baseline": dg.average_pseudo_r2(baseline, stack),
        "credible_level": cfg.credible_level,
        "sigma2_posterior_mean": float(samples.sigma2.mean()),
        "acceptance": [float(a) for a in samples.acceptance],
        "n_draws": int(samples.n_draws),
    }
    if importance:
        metrics["importance_summary"] = write_importance(cfg, stack, samples, out)
    _write_json(out / "metrics.json", metrics)
    return metrics


def write_importance(cfg: RunConfig, stack: ProductStack, samples: PosteriorSamples,
                     out: Path) -> dict:
    imp_cfg = cfg.importance
    contrib = dg.permutation_importance(
        samples, stack, int(imp_cfg["n_permutations"]),
        np.random.default_rng(int(imp_cfg["seed"])), per_draw=bool(imp_cfg["per_draw"]),
        max_draws=int(imp_cfg["max_draws"]))
    for d, name in enumerate(stack.names):
        write_table(out / f"contribution_{name}.csv", stack.grid,
                    {"raw": contrib.raw[d], "centered": contrib.centered[d]}, _header(cfg))
    summary = dict(zip(stack.names, map(float, contrib.summary)))
    _write_json(out / "importance.json", {"config_sha256": cfg.hash, "summary": summary,
                                          "degenerate_locations": int(contrib.degenerate.sum())})
    return summary


def cmd_fit(cfg: RunConfig, args) -> int:
    stack = load_stack(cfg)
    arch = cfg.architecture
    basis = cfg.basis(stack.grid)
    chain = cfg.chain
    if args.verbose and not chain.log_every:
        chain.log_every = max(chain.n_iterations // 20, 1)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    sampler = Sampler(stack, arch, basis, cfg.link, cfg.coefficient_prior, cfg.noise_prior, chain)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        samples = sampler.run()
    for w in caught:
        log.warning("%s", w.message)
    hdr = _header(cfg)
    trace_lines = [f"# {h}" for h in hdr] + ["iteration,m2loglik,sigma2"]
    trace_lines += [f"{i + 1},{float(m)!r},{float(s)!r}"
                    for i, (m, s) in enumerate(zip(samples.trace_m2loglik, samples.trace_sigma2))]
    (out / "trace.csv").write_text("\n".join(trace_lines) + "\n", encoding="utf-8")
    _write_matrix(out / "coefficients.csv", samples.coefficients, "draw", "theta",
                  hdr + ["columns follow (transition, row, col, basis index) over free weights"])
    _write_matrix(out / "consensus_draws.csv", samples.consensus, "draw", "loc", hdr)
    samples.save(out / "samples.npz")
    write_summaries(cfg, stack, samples, out, importance=True)
    log.info("fit complete; outputs in %s", out)
    return 0


def _samples_path(cfg: RunConfig, args) -> Path:
    return Path(args.samples) if args.samples else cfg.output_dir / "samples.npz"


def cmd_importance(cfg: RunConfig, args) -> int:
    stack = load_stack(cfg)
    samples = PosteriorSamples.load(_samples_path(cfg, args))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = write_importance(cfg, stack, samples, out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_summarize(cfg: RunConfig, args) -> int:
    stack = load_stack(cfg)
    samples = PosteriorSamples.load(_samples_path(cfg, args))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    metrics = write_summaries(cfg, stack, samples, out, importance=False)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    sim = cfg.raw.get("simulate", {})
    scenario = (SyntheticScenario.parse(sim) if sim.get("distortions")
                else default_scenario(seed=int(sim.get("seed", 0)),
                                      noise_sd=float(sim.get("noise_sd", 0.15))))
    stack, truth = generate_from_truth(scenario)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_products(out / "products.csv", stack, _header(cfg))
    write_table(out / "truth.csv", stack.grid, {"truth": truth}, _header(cfg))
    _write_json(out / "simulate.json", {
        "config_sha256": cfg.hash,
        "censored_fraction": float(np.mean(stack.values == 0)),
        "n_locations": stack.n_locations,
        "products": list(stack.names),
    })
    return 0


def cmd_tune(cfg: RunConfig, args) -> int:
    stack = load_stack(cfg)
    section = cfg.raw.get("tune", {})
    if section.get("candidates"):
        cands = [Candidate(tuple(c["widths"]), int(c.get("nx", 2)), int(c.get("ny", 2)),
                           c.get("hidden_activation", "relu"),
                           c.get("output_activation", "identity"))
                 for c in section["candidates"]]
    else:
        grids = section.get("basis_grids", [[2, 2]])
        cands = [Candidate(w, int(nx), int(ny))
                 for w in enumerate_architectures(stack.d_count) for nx, ny in grids]
    chain_raw = dict(cfg.raw.get("chain", {}))
    chain_raw.update(section.get("chain", {}))
    from .config import chain_from
    chain = chain_from(chain_raw)
    results = tune(stack, cands, chain, cfg.link, cfg.coefficient_prior, cfg.noise_prior,
                   threads=args.threads)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={cfg.hash}",
             "rank,widths,nx,ny,total_rmse," + ",".join(f"rmse_{n}" for n in stack.names)]
    for i, r in enumerate(results, start=1):
        c = r.candidate
        lines.append(",".join([str(i), "-".join(map(str, c.widths)), str(c.nx), str(c.ny),
                               repr(r.total_rmse)] + [repr(float(v)) for v in r.rmse]))
    (out / "tune.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines[1:]:
        print(line)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "importance": cmd_importance,
    "summarize": cmd_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aefusion",
        description="Fuse gridded data products with a Bayesian spatially varying autoencoder.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes (tune)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field, e.g. chain.draws=500")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("importance", "summarize"):
            p.add_argument("--samples", default=None,
                           help="posterior samples archive (default <out>/samples.npz)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = RunConfig.load(args.config, args.overrides, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except (FusionError, ValueError, OSError) as exc:
        print(f"aefusion {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
