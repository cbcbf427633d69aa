"""Spatial grid, product stack and censoring structure, plus tabular I/O.

The tabular format is delimited text with header ``x,y,<name_1>,...,<name_D>``
and one row per location.  Lines starting with ``#`` are comments (used for
provenance headers) and are skipped on input.  Row order is the canonical
location index everywhere else in the package.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ArityError,
    DuplicateLocationError,
    IngestionError,
    StructuralError,
    ValidationError,
)
from .model import Link


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Ordered set of locations in native coordinate units."""

    locations: np.ndarray
    bounds: tuple = field(default=None)

    def __post_init__(self):
        locs = np.array(self.locations, dtype=float)
        if locs.ndim != 2 or locs.shape[1] != 2 or locs.shape[0] < 1:
            raise StructuralError("locations must be an (n >= 1, 2) array")
        if not np.all(np.isfinite(locs)):
            raise ValidationError("location coordinates must be finite")
        _, idx, counts = np.unique(locs, axis=0, return_index=True, return_counts=True)
        if np.any(counts > 1):
            row = int(np.sort(idx[counts > 1])[0])
            raise DuplicateLocationError(
                f"duplicate location ({locs[row, 0]}, {locs[row, 1]})")
        locs.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        ext = (float(locs[:, 0].min()), float(locs[:, 0].max()),
               float(locs[:, 1].min()), float(locs[:, 1].max()))
        if self.bounds is None:
            object.__setattr__(self, "bounds", ext)
        else:
            b = tuple(float(v) for v in self.bounds)
            if not (b[0] <= ext[0] and ext[1] <= b[1] and b[2] <= ext[2] and ext[3] <= b[3]):
                raise ValidationError(f"bounds {b} do not contain every location")
            object.__setattr__(self, "bounds", b)

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.locations[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.locations[:, 1]

    @classmethod
    def regular(cls, nx: int, ny: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> "SpatialGrid":
        """Cell-centre lattice of ``nx * ny`` points, x varying fastest."""
        x0, x1, y0, y1 = bounds
        xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        gx, gy = np.meshgrid(xs, ys)
        return cls(np.column_stack([gx.ravel(), gy.ravel()]), bounds=bounds)

    def same_as(self, other: "SpatialGrid") -> bool:
        return (self.locations.shape == other.locations.shape
                and np.array_equal(self.locations, other.locations))


@dataclass(frozen=True, eq=False)
class ProductStack:
    """``D`` co-registered products; ``values`` is ``D x n_locations``."""

    grid: SpatialGrid
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        names = tuple(str(n) for n in self.names)
        if vals.ndim != 2:
            raise StructuralError("values must be a D x n_locations matrix")
        if vals.shape[0] < 2:
            raise ArityError(f"need at least 2 products, got {vals.shape[0]}")
        if len(names) != vals.shape[0]:
            raise StructuralError(f"{len(names)} names for {vals.shape[0]} products")
        if len(set(names)) != len(names):
            raise ValidationError("product names must be unique")
        if vals.shape[1] != self.grid.n_locations:
            raise StructuralError(
                f"{vals.shape[1]} values per product for {self.grid.n_locations} locations")
        if not np.all(np.isfinite(vals)):
            d, s = np.argwhere(~np.isfinite(vals))[0]
            raise ValidationError(f"non-finite value for product {names[d]!r} at location {s}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", names)

    @property
    def d_count(self) -> int:
        return self.values.shape[0]

    @property
    def n_locations(self) -> int:
        return self.grid.n_locations

    def check_link(self, link: Link) -> "ProductStack":
        """Raise if the values fall outside the support of ``link``."""
        if link.kind == "relu" and np.any(self.values < 0):
            d, s = np.argwhere(self.values < 0)[0]
            raise ValidationError(
                f"negative value {self.values[d, s]} for product {self.names[d]!r} "
                f"at location {s} is outside the RELU link support")
        if link.kind == "threshold" and not np.all(np.isin(self.values, (0.0, 1.0))):
            raise ValidationError("threshold link requires 0/1 observations")
        return self

    def reorder(self, names: Sequence[str]) -> "ProductStack":
        """Return the stack with products permuted into ``names`` order."""
        names = [str(n) for n in names]
        if sorted(names) != sorted(self.names):
            raise ValidationError(
                f"ordering {names} is not a permutation of products {list(self.names)}")
        idx = [self.names.index(n) for n in names]
        return ProductStack(self.grid, tuple(names), self.values[idx])


@dataclass(frozen=True, eq=False)
class CensoringMask:
    """``flags[d, s]`` is true where the latent value is only bounded."""

    flags: np.ndarray

    @property
    def any(self) -> bool:
        return bool(self.flags.any())


def censoring_mask(stack: ProductStack, link: Link) -> CensoringMask:
    """Flag cells where the observation sits at the link's censoring point.

    Under the threshold link every observation is a bound on the latent, so
    every cell is flagged.
    """
    if link.kind == "identity":
        flags = np.zeros(stack.values.shape, dtype=bool)
    elif link.kind == "relu":
        flags = stack.values == link.censoring_point
    else:
        flags = np.ones(stack.values.shape, dtype=bool)
    flags.setflags(write=False)
    return CensoringMask(flags)


def _parse_float(text, row, col):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise IngestionError(f"row {row}, column {col!r}: non-numeric value {text!r}") from None
    if not math.isfinite(v):
        raise IngestionError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def read_table(path):
    """Read a spatial table; return ``(header, locations, columns)``.

    ``columns`` is ``len(header) - 2`` by ``n`` float array.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestionError(f"{path} is empty") from None
    if len(header) < 2 or header[0].lower() != "x" or header[1].lower() != "y":
        raise IngestionError(f"{path}: header must start with x,y")
    rows = []
    for i, rec in enumerate(reader, start=1):
        if len(rec) != len(header):
            missing = header[len(rec)] if len(rec) < len(header) else "<extra>"
            raise IngestionError(
                f"row {i}, column {missing!r}: expected {len(header)} cells, got {len(rec)}")
        vals = []
        for name, cell in zip(header, rec):
            if cell.strip() == "":
                raise IngestionError(f"row {i}, column {name!r}: missing value")
            vals.append(_parse_float(cell.strip(), i, name))
        rows.append(vals)
    if not rows:
        raise IngestionError(f"{path} has no data rows")
    arr = np.array(rows, dtype=float)
    return header, arr[:, :2], arr[:, 2:].T


def load_products(path, link: Optional[Link] = None) -> ProductStack:
    """Load a product table into a validated ``ProductStack``."""
    header, locs, cols = read_table(path)
    names = header[2:]
    if len(names) < 2:
        raise ArityError(f"{path}: need at least 2 product columns, found {len(names)}")
    stack = ProductStack(SpatialGrid(locs), tuple(names), cols)
    if link is not None:
        stack.check_link(link)
    return stack


def format_float(v: float) -> str:
    return repr(float(v))


def write_table(path, grid: SpatialGrid, columns: dict, header_lines=()):
    """Write ``x, y`` plus named columns; floats round-trip exactly."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    for n, col in zip(names, data):
        if col.shape != (grid.n_locations,):
            raise StructuralError(f"column {n!r} has shape {col.shape}")
    buf.write(",".join(["x", "y", *names]) + "\n")
    for s in range(grid.n_locations):
        cells = [format_float(grid.locations[s, 0]), format_float(grid.locations[s, 1])]
        cells.extend(format_float(col[s]) for col in data)
        buf.write(",".join(cells) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_products(path, stack: ProductStack, header_lines=()):
    write_table(path, stack.grid, dict(zip(stack.names, stack.values)), header_lines)
