"""Synthetic product stacks with known ground truth, for recovery tests."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import KernelBasis, evaluate_basis_matrix
from .model import Link, RELU, apply_link
from .network import Architecture, CoefficientSet, forward_all
from .spatial_domain import ProductStack, SpatialGrid


@dataclass
class Bump:
    """Isotropic Gaussian bump ``amplitude * exp(-|s - center|^2 / (2 width^2))``."""

    center: tuple
    width: float
    amplitude: float

    def __call__(self, x, y):
        cx, cy = self.center
        return self.amplitude * np.exp(-0.5 * ((x - cx) ** 2 + (y - cy) ** 2) / self.width ** 2)


@dataclass
class Distortion:
    """How one product departs from the truth before the link is applied:
    ``factor * truth + bias + bias field + N(0, noise_sd**2)``."""

    factor: float = 1.0
    bias: float = 0.0
    bias_bumps: list = field(default_factory=list)
    noise_sd: float = 0.0

    @classmethod
    def parse(cls, d: dict) -> "Distortion":
        return cls(factor=float(d.get("factor", 1.0)), bias=float(d.get("bias", 0.0)),
                   bias_bumps=[Bump(tuple(b["center"]), float(b["width"]), float(b["amplitude"]))
                               for b in d.get("bias_bumps", [])],
                   noise_sd=float(d.get("noise_sd", 0.0)))


@dataclass
class SyntheticScenario:
    nx: int = 20
    ny: int = 20
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    baseline: float = 0.0
    bumps: list = field(default_factory=list)
    distortions: list = field(default_factory=list)
    names: Optional[Sequence[str]] = None
    link: Link = RELU
    seed: int = 0

    @property
    def grid(self) -> SpatialGrid:
        return SpatialGrid.regular(self.nx, self.ny, self.bounds)

    def truth(self, grid: SpatialGrid) -> np.ndarray:
        out = np.full(grid.n_locations, float(self.baseline))
        for b in self.bumps:
            out += b(grid.x, grid.y)
        return out

    @classmethod
    def parse(cls, d: dict) -> "SyntheticScenario":
        return cls(
            nx=int(d.get("nx", 20)), ny=int(d.get("ny", 20)),
            bounds=tuple(d.get("bounds", (0.0, 1.0, 0.0, 1.0))),
            baseline=float(d.get("baseline", 0.0)),
            bumps=[Bump(tuple(b["center"]), float(b["width"]), float(b["amplitude"]))
                   for b in d.get("bumps", [])],
            distortions=[Distortion.parse(x) for x in d.get("distortions", [])],
            names=d.get("names"),
            link=Link.parse(d.get("link", "relu")),
            seed=int(d.get("seed", 0)),
        )


def default_scenario(seed: int = 0, noise_sd: float = 0.15) -> SyntheticScenario:
    """Four products on a 20x20 unit-square grid built from three bumps, with
    spatially varying biases and a dry corner that produces censored zeros."""
    return SyntheticScenario(
        nx=20, ny=20,
        baseline=0.3,
        bumps=[Bump((0.25, 0.3), 0.2, 3.0), Bump((0.7, 0.65), 0.25, 2.0),
               Bump((0.9, 0.1), 0.12, -1.0)],
        distortions=[
            Distortion(1.0, 0.0, [], noise_sd),
            Distortion(0.8, 0.2, [Bump((0.2, 0.8), 0.2, 0.6)], noise_sd),
            Distortion(1.2, -0.1, [Bump((0.8, 0.3), 0.2, -0.5)], noise_sd),
            Distortion(0.9, 0.3, [], noise_sd),
        ],
        names=["P1", "P2", "P3", "P4"],
        link=RELU,
        seed=seed,
    )


def generate_from_truth(scenario: SyntheticScenario):
    """Return ``(stack, truth)`` with products ``g(distort_d(truth) + noise)``."""
    rng = np.random.default_rng(scenario.seed)
    grid = scenario.grid
    truth = scenario.truth(grid)
    D = len(scenario.distortions)
    values = np.empty((D, grid.n_locations))
    for d, dist in enumerate(scenario.distortions):
        latent = dist.factor * truth + dist.bias
        for b in dist.bias_bumps:
            latent = latent + b(grid.x, grid.y)
        if dist.noise_sd > 0:
            latent = latent + dist.noise_sd * rng.standard_normal(grid.n_locations)
        values[d] = apply_link(scenario.link, latent)
    names = scenario.names or [f"product{d + 1}" for d in range(D)]
    return ProductStack(grid, tuple(names), values), truth


def generate_from_model(arch: Architecture, basis: KernelBasis, grid: SpatialGrid,
                        theta_star: CoefficientSet, sigma2_star: float,
                        link: Link = RELU, seed: int = 0, base_inputs=None):
    """Push a base input field through the network and emit
    ``Y = g(outputs + N(0, sigma2_star))``.

    The base inputs default to a smooth positive random field per product.
    Returns ``(stack, theta_star, consensus)``.
    """
    rng = np.random.default_rng(seed)
    D = arch.widths[0]
    if base_inputs is None:
        base_inputs = np.empty((grid.n_locations, D))
        for d in range(D):
            field_d = np.full(grid.n_locations, 1.0)
            for _ in range(3):
                b = Bump(tuple(rng.uniform([grid.bounds[0], grid.bounds[2]],
                                           [grid.bounds[1], grid.bounds[3]])),
                         0.25 * max(grid.bounds[1] - grid.bounds[0],
                                    grid.bounds[3] - grid.bounds[2], 1e-12),
                         rng.uniform(0.5, 2.0))
                field_d += b(grid.x, grid.y)
            base_inputs[:, d] = field_d
    B = evaluate_basis_matrix(basis, grid)
    fwd = forward_all(np.asarray(base_inputs, dtype=float), theta_star, B, arch)
    latent = fwd.outputs
    if sigma2_star > 0:
        latent = latent + np.sqrt(sigma2_star) * rng.standard_normal(latent.shape)
    values = apply_link(link, latent).T
    names = tuple(f"product{d + 1}" for d in range(D))
    return ProductStack(grid, names, values), theta_star, fwd.consensus
