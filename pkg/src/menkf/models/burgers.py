"""Viscous Burgers equation ``u_t + u u_x = u_xx / Re`` with centred differences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numba
import numpy as np

from ..grid import ConfigurationError, Grid1D, StateField
from .base import ForwardModel, NumericalBlowupError, check_relaxation
from .forcing import ForcingKind, InletForcing
from .operator import ModelOperator


@numba.njit(cache=True, nogil=True)
def _explicit_kernel(u, inlet, dt, h, nu, out):
    adv = dt / (2.0 * h)
    dif = dt * nu / (h * h)
    n = u.shape[2]
    for b in range(u.shape[0]):
        for i in range(1, n - 1):
            ui = u[b, 0, i]
            out[b, 0, i] = ui - adv * ui * (u[b, 0, i + 1] - u[b, 0, i - 1]) + dif * (
                u[b, 0, i + 1] - 2.0 * ui + u[b, 0, i - 1]
            )
        out[b, 0, 0] = inlet[b]
        out[b, 0, n - 1] = 2.0 * out[b, 0, n - 2] - out[b, 0, n - 3]
    return _first_bad(out)


@numba.njit(cache=True, nogil=True)
def _sweep_kernel(prev, start, inlet, dt, h, nu, relaxation, out):
    inv_dt = 1.0 / dt
    nu_h2 = nu / (h * h)
    diag = inv_dt + 2.0 * nu_h2
    n = prev.shape[2]
    keep = 1.0 - relaxation
    for b in range(prev.shape[0]):
        for i in range(1, n - 1):
            p = prev[b, 0, i]
            upper = p / (2.0 * h) - nu_h2
            lower = -p / (2.0 * h) - nu_h2
            out[b, 0, i] = (p * inv_dt - upper * start[b, 0, i + 1] - lower * start[b, 0, i - 1]) / diag
        out[b, 0, 0] = inlet[b]
        out[b, 0, n - 1] = 2.0 * out[b, 0, n - 2] - out[b, 0, n - 3]
        if relaxation != 1.0:
            for i in range(n):
                out[b, 0, i] = keep * start[b, 0, i] + relaxation * out[b, 0, i]
    return _first_bad(out)


@numba.njit(cache=True, nogil=True)
def _first_bad(out):
    flat = out.reshape(out.shape[0], -1)
    for b in range(flat.shape[0]):
        for i in range(flat.shape[1]):
            v = flat[b, i]
            if not (v - v == 0.0):
                return b
    return -1


@dataclass(frozen=True)
class BurgersModel(ForwardModel):
    """Burgers' equation in units of ``u0`` and the forcing wavelength."""

    grid: Grid1D
    reynolds: float
    dt: float
    u0: float = 1.0
    omega: float = 2 * math.pi

    var_names: ClassVar[tuple[str, ...]] = ("u",)
    observed_variable: ClassVar[str] = "u"
    forcing_kind: ClassVar[ForcingKind] = ForcingKind.BURGERS_PHASE_AMPLITUDE
    n_params: ClassVar[int] = 2

    def __post_init__(self) -> None:
        if not self.reynolds > 0 or not self.dt > 0:
            raise ConfigurationError("reynolds and dt must be positive")
        courant = self.dt * abs(self.u0) / self.grid.spacing
        if courant >= 1.0:
            raise ConfigurationError(f"Courant number {courant:.3g} >= 1 for dt={self.dt}")

    @property
    def viscosity(self) -> float:
        return 1.0 / self.reynolds

    @property
    def reference_velocity(self) -> float:
        return self.u0

    def forcing(self, theta) -> InletForcing:
        return InletForcing(self.forcing_kind, tuple(theta), self.omega, self.u0)

    def uniform_state(self) -> np.ndarray:
        return np.full((1, self.grid.n_nodes), self.u0)

    def step_explicit_batch(self, states: np.ndarray, inlet: np.ndarray) -> np.ndarray:
        out = np.empty_like(states)
        bad = _explicit_kernel(states, np.asarray(inlet, dtype=float), self.dt, self.grid.spacing, self.viscosity, out)
        if bad >= 0:
            raise NumericalBlowupError("Burgers explicit step produced non-finite values", member=bad)
        return out

    def sweep_batch(self, prev, start, inlet, relaxation=1.0):
        check_relaxation(relaxation)
        out = np.empty_like(prev)
        bad = _sweep_kernel(
            prev, start, np.asarray(inlet, dtype=float), self.dt, self.grid.spacing, self.viscosity,
            float(relaxation), out,
        )
        if bad >= 0:
            raise NumericalBlowupError("Burgers implicit sweep produced non-finite values", member=bad)
        return out

    def operator(self, prev: np.ndarray, inlet: float) -> ModelOperator:
        """Picard-linearised implicit system with advection frozen at ``prev``."""
        p = np.asarray(prev, dtype=float).reshape(-1)
        n, h, nu = p.size, self.grid.spacing, self.viscosity
        lower = (-p / (2 * h) - nu / h**2).reshape(n, 1, 1)
        upper = (p / (2 * h) - nu / h**2).reshape(n, 1, 1)
        diag = np.full((n, 1, 1), 1.0 / self.dt + 2.0 * nu / h**2)
        return ModelOperator(lower, diag, upper, (p / self.dt).reshape(n, 1), np.array([float(inlet)]))


def burgers_step_explicit(state: StateField, model: BurgersModel, inlet: InletForcing, t: float) -> StateField:
    """Forward-Euler step from ``t`` to ``t + dt``; the inlet is forced at ``t + dt``."""
    return model._field(model.step_explicit_batch(model._as_batch(state), model._inlet(inlet, t)))


def burgers_step_implicit_single(
    state: StateField, model: BurgersModel, inlet: InletForcing, t: float, relaxation: float = 1.0
) -> StateField:
    """One Jacobi sweep of the linearised implicit step, blended with the input state."""
    batch = model._as_batch(state)
    return model._field(model.step_implicit_batch(batch, model._inlet(inlet, t), relaxation))
