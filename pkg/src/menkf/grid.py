"""Uniform 1D grids, coarsening by node suppression and Lagrange grid transfer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

STENCIL = 4


class ConfigurationError(ValueError):
    """Raised when a grid or experiment configuration is inconsistent."""


class GridMismatchError(ValueError):
    """Raised when a field is handed to an operator defined on another grid."""


@dataclass(frozen=True)
class Grid1D:
    n_nodes: int
    spacing: float
    origin: float = 0.0

    def __post_init__(self) -> None:
        if self.n_nodes < 2:
            raise ConfigurationError(f"a grid needs at least 2 nodes, got {self.n_nodes}")
        if not self.spacing > 0:
            raise ConfigurationError(f"grid spacing must be positive, got {self.spacing}")

    @classmethod
    def from_elements(cls, n_elements: int, domain_length: float, origin: float = 0.0) -> "Grid1D":
        return cls(n_elements + 1, domain_length / n_elements, origin)

    @property
    def n_elements(self) -> int:
        return self.n_nodes - 1

    @property
    def length(self) -> float:
        return self.n_elements * self.spacing

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n_nodes)


@dataclass(frozen=True)
class StateField:
    """Named per-node arrays living on one grid."""

    grid: Grid1D
    variables: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        for name, values in self.variables.items():
            if np.shape(values) != (self.grid.n_nodes,):
                raise ValueError(
                    f"variable {name!r} has shape {np.shape(values)}, expected ({self.grid.n_nodes},)"
                )
            if not np.all(np.isfinite(values)):
                raise FloatingPointError(f"variable {name!r} contains non-finite values")

    @classmethod
    def from_array(cls, grid: Grid1D, names: tuple[str, ...], data: np.ndarray) -> "StateField":
        data = np.asarray(data, dtype=float).reshape(len(names), grid.n_nodes)
        return cls(grid, {name: data[j].copy() for j, name in enumerate(names)})

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.variables)

    def to_array(self) -> np.ndarray:
        """Stack the variables into an ``(n_vars, n_nodes)`` array."""
        return np.stack([np.asarray(v, dtype=float) for v in self.variables.values()])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.variables[name]


def lagrange_weights(target: float, points: np.ndarray) -> np.ndarray:
    """Weights of the Lagrange interpolant through ``points`` evaluated at ``target``.

    A target that coincides with one of the points yields an exact unit vector.
    """
    weights = np.ones(len(points))
    for j, xj in enumerate(points):
        for m, xm in enumerate(points):
            if m != j:
                weights[j] *= (target - xm) / (xj - xm)
    return weights


def _interpolation_matrix(n_source: int, positions: np.ndarray) -> sp.csr_matrix:
    """Sparse 4-point Lagrange interpolation from source indices to fractional positions.

    ``positions`` are expressed in source-index units. Stencils are centred where
    possible and shifted one-sided near the ends so the order never drops.
    """
    if n_source < STENCIL:
        raise ConfigurationError(f"interpolation needs at least {STENCIL} source nodes, got {n_source}")
    rows, cols, vals = [], [], []
    for row, xi in enumerate(positions):
        start = int(np.clip(np.floor(xi) - 1, 0, n_source - STENCIL))
        idx = np.arange(start, start + STENCIL)
        rows.extend([row] * STENCIL)
        cols.extend(idx)
        vals.extend(lagrange_weights(xi, idx.astype(float)))
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(len(positions), n_source))
    matrix.eliminate_zeros()
    return matrix


@dataclass(frozen=True)
class GridPair:
    fine: Grid1D
    coarse: Grid1D
    ratio: int
    to_coarse: sp.csr_matrix = field(repr=False, compare=False)
    to_fine: sp.csr_matrix = field(repr=False, compare=False)

    @property
    def coincident(self) -> np.ndarray:
        """Fine-node index of every coarse node."""
        return self.ratio * np.arange(self.coarse.n_nodes)

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Apply the fine-to-coarse projection along the last axis."""
        return _apply(self.to_coarse, values, self.fine.n_nodes)

    def prolong(self, values: np.ndarray) -> np.ndarray:
        """Apply the coarse-to-fine projection along the last axis."""
        return _apply(self.to_fine, values, self.coarse.n_nodes)


def _apply(matrix: sp.csr_matrix, values: np.ndarray, n_in: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != n_in:
        raise GridMismatchError(f"expected {n_in} nodes on the last axis, got {values.shape[-1]}")
    lead = values.shape[:-1]
    flat = values.reshape(-1, n_in)
    return np.asarray((matrix @ flat.T).T).reshape(*lead, matrix.shape[0])


def coarsen(fine: Grid1D, ratio: int) -> GridPair:
    """Pair ``fine`` with the grid keeping every ``ratio``-th node."""
    if ratio < 1:
        raise ConfigurationError(f"coarsening ratio must be a positive integer, got {ratio}")
    if fine.n_elements % ratio:
        raise ConfigurationError(
            f"{fine.n_elements} elements are not divisible by coarsening ratio {ratio}"
        )
    coarse = Grid1D(fine.n_elements // ratio + 1, fine.spacing * ratio, fine.origin)
    if ratio == 1:
        coarse = fine
    # Positions are computed as exact rationals in index units: coarse node j is
    # fine index j*ratio, fine node i is coarse index i/ratio.
    to_coarse = _interpolation_matrix(fine.n_nodes, ratio * np.arange(coarse.n_nodes, dtype=float))
    to_fine = _interpolation_matrix(coarse.n_nodes, np.arange(fine.n_nodes) / ratio)
    return GridPair(fine, coarse, ratio, to_coarse, to_fine)


def _check_grid(field_: StateField, grid: Grid1D) -> None:
    if field_.grid != grid:
        raise GridMismatchError(f"field lives on {field_.grid}, operator expects {grid}")


def project_to_coarse(field_: StateField, pair: GridPair) -> StateField:
    _check_grid(field_, pair.fine)
    return StateField(pair.coarse, {k: pair.restrict(v) for k, v in field_.variables.items()})


def project_to_fine(field_: StateField, pair: GridPair) -> StateField:
    _check_grid(field_, pair.coarse)
    return StateField(pair.fine, {k: pair.prolong(v) for k, v in field_.variables.items()})
