"""Shared interface of the discretised forward models."""

from __future__ import annotations

import dataclasses
from typing import ClassVar

import numpy as np

from ..grid import Grid1D, GridMismatchError, StateField
from .forcing import ForcingKind, InletForcing, inlet_values


class NumericalBlowupError(FloatingPointError):
    """A model step produced NaN/Inf. ``step`` is filled in by the caller when known."""

    def __init__(self, message: str, step: int | None = None, member: int | None = None):
        super().__init__(message)
        self.step = step
        self.member = member

    def __str__(self) -> str:
        where = []
        if self.step is not None:
            where.append(f"step {self.step}")
        if self.member is not None:
            where.append(f"member {self.member}")
        suffix = f" ({', '.join(where)})" if where else ""
        return f"{self.args[0]}{suffix}"


class PositivityError(NumericalBlowupError):
    """Density or pressure dropped to zero or below."""


class ForwardModel:
    """Batched stepping on arrays shaped ``(batch, n_vars, n_nodes)``.

    Inlet values passed to the stepping methods are the boundary velocities at
    the end of the step, one per batch row.
    """

    var_names: ClassVar[tuple[str, ...]]
    observed_variable: ClassVar[str]
    forcing_kind: ClassVar[ForcingKind]
    grid: Grid1D
    dt: float
    omega: float

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def observed_index(self) -> int:
        return self.var_names.index(self.observed_variable)

    @property
    def reference_velocity(self) -> float:
        raise NotImplementedError

    def on_grid(self, grid: Grid1D):
        """The same physical model discretised on another grid."""
        return dataclasses.replace(self, grid=grid)

    def uniform_state(self) -> np.ndarray:
        raise NotImplementedError

    def inlet_batch(self, params: np.ndarray, t: float) -> np.ndarray:
        return inlet_values(self.forcing_kind, params, t, self.omega, self.reference_velocity)

    def step_explicit_batch(self, states: np.ndarray, inlet: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sweep_batch(
        self, prev: np.ndarray, start: np.ndarray, inlet: np.ndarray, relaxation: float = 1.0
    ) -> np.ndarray:
        """One relaxed Jacobi sweep from ``start`` on the system linearised about ``prev``."""
        raise NotImplementedError

    def step_implicit_batch(self, states: np.ndarray, inlet: np.ndarray, relaxation: float = 1.0) -> np.ndarray:
        return self.sweep_batch(states, states, inlet, relaxation)

    def operator(self, prev: np.ndarray, inlet: float):
        """Assembled ``ModelOperator`` for one state ``(n_vars, n_nodes)``."""
        raise NotImplementedError

    # Single-state helpers used by the public step functions.

    def _as_batch(self, state: StateField) -> np.ndarray:
        if state.grid != self.grid:
            raise GridMismatchError(f"state lives on {state.grid}, model on {self.grid}")
        if state.names != self.var_names:
            raise ValueError(f"expected variables {self.var_names}, got {state.names}")
        return state.to_array()[None]

    def _field(self, batch: np.ndarray) -> StateField:
        return StateField.from_array(self.grid, self.var_names, batch[0])

    def _inlet(self, inlet: InletForcing, t: float) -> np.ndarray:
        if inlet.kind is not self.forcing_kind:
            raise ValueError(f"{type(self).__name__} needs {self.forcing_kind.value} forcing")
        return self.inlet_batch(np.array([inlet.theta]), t + self.dt)


def check_relaxation(relaxation: float) -> None:
    if not 0.0 < relaxation <= 1.0:
        raise ValueError(f"relaxation must lie in (0, 1], got {relaxation}")
