"""Run configuration: a single JSON document.

Schema (every section optional unless a command needs it)::

    {
      "data": "products.csv",            # relative to the config file
      "ordering": ["TRMM", "ERA5", ...],  # first product anchors the scale
      "architecture": {"widths": [4, 3, 2, 1, 2, 3, 4],
                       "hidden_activation": "relu",
                       "output_activation": "identity",
                       "activations": null},  # explicit per-transition list
      "basis": {"nx": 6, "ny": 6},        # or {"centers": [[x, y], ...],
                                          #     "bandwidths": [sx, sy]}
      "link": "relu",                     # "identity" | {"threshold": c}
      "priors": {"coefficient_mean": 0, "coefficient_variance": 5,
                 "sigma2_shape": 2.1, "sigma2_rate": 1.1},
      "chain": {"burn_in": 100000, "draws": 50000, "thin": 1, "seed": 0, ...},
      "summary": {"credible_level": 0.95},
      "importance": {"n_permutations": 20, "per_draw": false,
                     "max_draws": 100, "seed": 0},
      "simulate": {... synthetic scenario ...},
      "tune": {"candidates": [{"widths": [...], "nx": 2, "ny": 2}],
               "chain": {... overrides for the short tuning chains ...}},
      "output_dir": "out"
    }
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .basis import KernelBasis, build_kernel_grid
from .errors import ConfigurationError
from .model import CoefficientPrior, Link, NoisePrior
from .network import Architecture
from .sampler import ChainConfig
from .spatial_domain import SpatialGrid

DEFAULT_WIDTHS = (4, 3, 2, 1, 2, 3, 4)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON, ignoring where outputs are written."""
    content = {k: v for k, v in raw.items() if k != "output_dir"}
    text = json.dumps(content, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def set_override(raw: dict, assignment: str):
    """Apply ``section.key=value`` (value parsed as JSON when possible)."""
    if "=" not in assignment:
        raise ConfigurationError(f"override {assignment!r} is not of the form key=value")
    key, value = assignment.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    node = raw
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = parsed


def architecture_from(section: dict) -> Architecture:
    widths = tuple(section.get("widths", DEFAULT_WIDTHS))
    if section.get("activations"):
        return Architecture(widths, tuple(section["activations"]))
    return Architecture.from_widths(widths, section.get("hidden_activation", "relu"),
                                    section.get("output_activation", "identity"))


def basis_from(section: dict, grid: SpatialGrid) -> KernelBasis:
    if "centers" in section:
        return KernelBasis(section["centers"], tuple(section["bandwidths"]))
    return build_kernel_grid(grid, int(section.get("nx", 6)), int(section.get("ny", 6)))


def chain_from(section: dict, seed: Optional[int] = None) -> ChainConfig:
    known = {f.name for f in fields(ChainConfig)}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(f"unknown chain settings: {sorted(unknown)}")
    cfg = ChainConfig(**section)
    if seed is not None:
        cfg.seed = seed
    return cfg


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path, overrides=(), seed: Optional[int] = None,
             out: Optional[str] = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, path.parent, overrides, seed, out)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".", overrides=(), seed: Optional[int] = None,
                  out: Optional[str] = None) -> "RunConfig":
        raw = copy.deepcopy(raw)
        for o in overrides:
            set_override(raw, o)
        if seed is not None:
            raw.setdefault("chain", {})["seed"] = int(seed)
            raw.setdefault("importance", {})["seed"] = int(seed)
            raw.setdefault("simulate", {})["seed"] = int(seed)
        if out is not None:
            raw["output_dir"] = str(out)
        return cls(raw, Path(base_dir))

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def data_path(self) -> Path:
        if "data" not in self.raw:
            raise ConfigurationError("config has no 'data' path")
        return self.resolve(self.raw["data"])

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.raw.get("output_dir", "out"))

    @property
    def ordering(self):
        return self.raw.get("ordering")

    @property
    def link(self) -> Link:
        return Link.parse(self.raw.get("link", "relu"))

    @property
    def architecture(self) -> Architecture:
        return architecture_from(self.raw.get("architecture", {}))

    def basis(self, grid: SpatialGrid) -> KernelBasis:
        return basis_from(self.raw.get("basis", {}), grid)

    @property
    def coefficient_prior(self) -> CoefficientPrior:
        p = self.raw.get("priors", {})
        return CoefficientPrior(float(p.get("coefficient_mean", 0.0)),
                                float(p.get("coefficient_variance", 5.0)))

    @property
    def noise_prior(self) -> NoisePrior:
        p = self.raw.get("priors", {})
        return NoisePrior(float(p.get("sigma2_shape", 2.1)), float(p.get("sigma2_rate", 1.1)))

    @property
    def chain(self) -> ChainConfig:
        return chain_from(self.raw.get("chain", {}))

    @property
    def credible_level(self) -> float:
        return float(self.raw.get("summary", {}).get("credible_level", 0.95))

    @property
    def importance(self) -> dict:
        imp = {"n_permutations": 20, "per_draw": False, "max_draws": 100, "seed": 0}
        imp.update(self.raw.get("importance", {}))
        return imp
