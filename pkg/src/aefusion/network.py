"""Constrained, spatially varying autoencoder.

Every layer transition ``t`` maps ``widths[t]`` neurons to ``widths[t + 1]``.
Biases are identically zero.  Transitions at or after the width-1 consensus
layer form the decoder; their weight matrices are lower triangular with a
unit diagonal, which ties the consensus to the scale of the first product.
Each free weight varies over space as ``W(s) = b(s) . theta`` where ``b`` is
the kernel basis vector.

Coefficients are serialized as one flat vector in (transition, row, column,
basis index) order, visiting only free entries, rows and columns in row-major
order and the basis index fastest.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalOverflowError, StructuralError


def _relu(x):
    return np.maximum(x, 0.0)


def _identity(x):
    return x


def _softplus(x):
    return np.logaddexp(0.0, x)


ACTIVATIONS = {
    "identity": _identity,
    "relu": _relu,
    "tanh": np.tanh,
    "softplus": _softplus,
}


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(D, P_1, ..., P_L, D)`` and one activation per transition.

    The last activation is the output activation.
    """

    widths: tuple
    activations: tuple

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(str(a) for a in self.activations))

    @classmethod
    def from_widths(cls, widths: Sequence[int], hidden: str = "relu",
                    output: str = "identity") -> "Architecture":
        n_trans = len(widths) - 1
        return cls(tuple(widths), (hidden,) * (n_trans - 1) + (output,))

    @property
    def n_hidden(self) -> int:
        return len(self.widths) - 2

    @property
    def n_transitions(self) -> int:
        return len(self.widths) - 1

    @property
    def center_index(self) -> int:
        """Index into ``widths`` of the width-1 consensus layer."""
        interior = [i for i in range(1, len(self.widths) - 1) if self.widths[i] == 1]
        if len(interior) != 1:
            raise ConfigurationError("architecture needs exactly one width-1 interior layer")
        return interior[0]

    def is_decoder(self, t: int) -> bool:
        return t >= self.center_index

    def to_config(self) -> dict:
        return {"widths": list(self.widths), "activations": list(self.activations)}


def validate_architecture(arch: Architecture, D: int) -> Architecture:
    """Return ``arch`` unchanged if it is a valid fusion autoencoder for ``D``
    products, otherwise raise ``ConfigurationError`` naming the broken rule."""
    w = arch.widths
    if len(w) < 3:
        raise ConfigurationError(f"widths {w}: need input, at least one hidden and output layer")
    if w[0] != D or w[-1] != D:
        raise ConfigurationError(f"widths {w}: input and output widths must equal D={D}")
    if len(arch.activations) != len(w) - 1:
        raise ConfigurationError(
            f"{len(arch.activations)} activations given for {len(w) - 1} transitions")
    for a in arch.activations:
        if a not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {a!r}; choose from {sorted(ACTIVATIONS)}")
    L = len(w) - 2
    if L > 2 * D - 3:
        raise ConfigurationError(f"widths {w}: L={L} hidden layers exceeds 2D-3={2 * D - 3}")
    hidden = w[1:-1]
    if any(h < 1 for h in hidden):
        raise ConfigurationError(f"widths {w}: hidden widths must be positive")
    if any(h > D for h in hidden):
        raise ConfigurationError(f"widths {w}: hidden width exceeds D={D}")
    ones = [i for i in range(1, len(w) - 1) if w[i] == 1]
    if len(ones) != 1:
        raise ConfigurationError(
            f"widths {w}: need exactly one width-1 consensus layer, found {len(ones)}")
    c = ones[0]
    if any(w[i + 1] > w[i] for i in range(c)):
        raise ConfigurationError(f"widths {w}: encoder widths must not increase toward the center")
    if any(w[i + 1] < w[i] for i in range(c, len(w) - 1)):
        raise ConfigurationError(f"widths {w}: decoder widths must not decrease after the center")
    return arch


@dataclass(frozen=True, eq=False)
class TransitionMask:
    """Entry classes for one weight matrix: free, fixed one, fixed zero."""

    free: np.ndarray   # bool, P x P_prev
    fixed: np.ndarray  # float, ones at fixed-one entries, zero elsewhere

    @property
    def shape(self):
        return self.free.shape

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    @property
    def free_index(self):
        """Row and column indices of free entries in row-major order."""
        return np.nonzero(self.free)


@dataclass(frozen=True, eq=False)
class ConstraintMask:
    transitions: tuple

    def __len__(self):
        return len(self.transitions)

    def __getitem__(self, t) -> TransitionMask:
        return self.transitions[t]

    @property
    def n_free(self) -> int:
        return sum(m.n_free for m in self.transitions)


def constraint_mask(arch: Architecture) -> ConstraintMask:
    out = []
    for t in range(arch.n_transitions):
        P, Pp = arch.widths[t + 1], arch.widths[t]
        if arch.is_decoder(t):
            p, j = np.indices((P, Pp))
            free = j < p
            fixed = (j == p).astype(float)
        else:
            free = np.ones((P, Pp), dtype=bool)
            fixed = np.zeros((P, Pp))
        free.setflags(write=False)
        fixed.setflags(write=False)
        out.append(TransitionMask(free, fixed))
    return ConstraintMask(tuple(out))


def count_free_parameters(arch: Architecture) -> int:
    """Free weights per location (no biases, decoder unit diagonal excluded)."""
    return constraint_mask(arch).n_free


class CoefficientSet:
    """Basis coefficients for every free weight.

    ``blocks[t]`` is an ``n_free_t x (K + 1)`` array for transition ``t``.
    """

    def __init__(self, blocks: Sequence[np.ndarray]):
        self.blocks = [np.array(b, dtype=float) for b in blocks]
        for b in self.blocks:
            if b.ndim != 2:
                raise StructuralError("coefficient blocks must be 2-D")

    @classmethod
    def zeros(cls, mask: ConstraintMask, basis_size: int) -> "CoefficientSet":
        return cls([np.zeros((m.n_free, basis_size)) for m in mask.transitions])

    @classmethod
    def from_flat(cls, flat, mask: ConstraintMask, basis_size: int) -> "CoefficientSet":
        flat = np.asarray(flat, dtype=float).ravel()
        expected = mask.n_free * basis_size
        if flat.size != expected:
            raise StructuralError(f"expected {expected} coefficients, got {flat.size}")
        blocks, i = [], 0
        for m in mask.transitions:
            n = m.n_free * basis_size
            blocks.append(flat[i:i + n].reshape(m.n_free, basis_size))
            i += n
        return cls(blocks)

    def flat(self) -> np.ndarray:
        if not self.blocks:
            return np.empty(0)
        return np.concatenate([b.ravel() for b in self.blocks])

    @property
    def size(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def basis_size(self) -> int:
        return self.blocks[0].shape[1]

    def copy(self) -> "CoefficientSet":
        return CoefficientSet([b.copy() for b in self.blocks])

    def check(self, mask: ConstraintMask, basis_size: Optional[int] = None):
        if len(self.blocks) != len(mask):
            raise StructuralError(
                f"{len(self.blocks)} coefficient blocks for {len(mask)} transitions")
        for t, (b, m) in enumerate(zip(self.blocks, mask.transitions)):
            if b.shape[0] != m.n_free:
                raise StructuralError(
                    f"transition {t}: {b.shape[0]} coefficient vectors for {m.n_free} free weights")
            if basis_size is not None and b.shape[1] != basis_size:
                raise StructuralError(
                    f"transition {t}: coefficient length {b.shape[1]} != basis length {basis_size}")
        return self

    def __repr__(self):
        return f"CoefficientSet(blocks={[b.shape for b in self.blocks]})"


def materialize_weights(coeffs: CoefficientSet, basis_row, mask: ConstraintMask) -> List[np.ndarray]:
    """Weight matrices at one location given its basis vector."""
    basis_row = np.asarray(basis_row, dtype=float)
    coeffs.check(mask, basis_row.size)
    out = []
    for b, m in zip(coeffs.blocks, mask.transitions):
        W = m.fixed.copy()
        W[m.free] = b @ basis_row
        out.append(W)
    return out


@dataclass
class ForwardState:
    """Neuron values; ``neurons[0]`` are the inputs and ``neurons[-1]`` the
    outputs.  Arrays are 1-D for a single location or ``n x P`` batched."""

    neurons: list
    center_index: int

    @property
    def outputs(self) -> np.ndarray:
        return self.neurons[-1]

    @property
    def consensus(self):
        return self.neurons[self.center_index][..., 0]


def _activate(name, pre, layer):
    with np.errstate(over="ignore", invalid="ignore"):
        out = ACTIVATIONS[name](pre)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError(layer)
    return out


def forward(inputs, weights: Sequence[np.ndarray], arch: Architecture) -> ForwardState:
    """Single-location forward pass through materialized weight matrices."""
    x = np.asarray(inputs, dtype=float)
    if x.shape != (arch.widths[0],):
        raise StructuralError(f"expected {arch.widths[0]} inputs, got shape {x.shape}")
    neurons = [x]
    for t, W in enumerate(weights):
        if W.shape != (arch.widths[t + 1], arch.widths[t]):
            raise StructuralError(f"transition {t}: weight matrix has shape {W.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            pre = W @ neurons[-1]
        neurons.append(_activate(arch.activations[t], pre, t + 1))
    return ForwardState(neurons, arch.center_index)


class BatchedNetwork:
    """Vectorized forward pass over every location of a grid.

    Precomputes, per transition, the scatter matrix that sums free-entry
    contributions into their target rows so that each layer costs two small
    matrix products.  Supports recomputation from a given transition onward,
    which the sampler uses after updating one layer block.
    """

    def __init__(self, arch: Architecture, basis_matrix: np.ndarray,
                 mask: Optional[ConstraintMask] = None):
        self.arch = arch
        self.B = np.asarray(basis_matrix, dtype=float)
        self.mask = mask if mask is not None else constraint_mask(arch)
        self.rows, self.cols, self.scatter = [], [], []
        for m in self.mask.transitions:
            r, c = m.free_index
            S = np.zeros((r.size, m.shape[0]))
            S[np.arange(r.size), r] = 1.0
            self.rows.append(r)
            self.cols.append(c)
            self.scatter.append(S)
        self.has_fixed = [bool(m.fixed.any()) for m in self.mask.transitions]

    @property
    def basis_size(self) -> int:
        return self.B.shape[1]

    def transition(self, t: int, prev: np.ndarray, block: np.ndarray) -> np.ndarray:
        m = self.mask[t]
        with np.errstate(over="ignore", invalid="ignore"):
            if block.shape[0]:
                w = self.B @ block.T                 # n x n_free weights at each location
                pre = (w * prev[:, self.cols[t]]) @ self.scatter[t]
            else:
                pre = np.zeros((prev.shape[0], m.shape[0]))
            if self.has_fixed[t]:
                pre = pre + prev @ m.fixed.T
        return _activate(self.arch.activations[t], pre, t + 1)

    def run(self, inputs: np.ndarray, coeffs: CoefficientSet, start: int = 0,
            neurons: Optional[list] = None) -> ForwardState:
        """Forward pass for ``n x D`` inputs.

        With ``start > 0``, layers ``0..start`` are taken from ``neurons``.
        """
        if start == 0:
            x = np.asarray(neurons[0] if inputs is None else inputs, dtype=float)
            if x.ndim != 2 or x.shape != (self.B.shape[0], self.arch.widths[0]):
                raise StructuralError(
                    f"inputs shape {x.shape} does not match "
                    f"({self.B.shape[0]}, {self.arch.widths[0]})")
            layers = [x]
        else:
            layers = list(neurons[:start + 1])
        for t in range(start, self.arch.n_transitions):
            layers.append(self.transition(t, layers[-1], coeffs.blocks[t]))
        return ForwardState(layers, self.arch.center_index)


def forward_all(stack, coeffs: CoefficientSet, basis_matrix: np.ndarray,
                arch: Architecture) -> ForwardState:
    """Batched forward pass at every location of ``stack``.

    ``stack`` may be a ``ProductStack`` or an ``n x D`` input array.
    """
    inputs = stack.values.T if hasattr(stack, "values") else np.asarray(stack, dtype=float)
    net = BatchedNetwork(arch, basis_matrix)
    coeffs.check(net.mask, net.basis_size)
    return net.run(inputs, coeffs)
