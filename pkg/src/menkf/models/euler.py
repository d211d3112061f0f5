"""Inviscid 1D Euler equations in conservative form with a selective filter.

The inlet fixes density, momentum and total energy, which over-constrains a
subsonic inflow; the reflected grid-scale mode would grow at the first interior
points where the sixth-order stencil does not reach, so those points get the
reduced-order closure of ``boundary_filter_rows``.

The default outlet extrapolates the outgoing Riemann invariant ``u + 2c/(g-1)``
and the entropy ``p / rho^g`` from the two nearest interior points and holds the
incoming invariant at its free-stream value. Extrapolating all conserved
variables (``outlet="linear"``) leaves the mean pressure undetermined, and the
mean state then drifts slowly over long runs.

Space is measured in forcing wavelengths and time in acoustic characteristic
times ``lambda / (u0 + a)``; the conserved variables stay in SI units, so the
semi-discrete system is ``dq/dt = -(1 / u_c) dF/dx`` with ``u_c = u0 + a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numba
import numpy as np

from ..grid import ConfigurationError, Grid1D, StateField
from .base import ForwardModel, NumericalBlowupError, PositivityError, check_relaxation
from .filters import boundary_filter_rows, filter_rows
from .forcing import ForcingKind, InletForcing
from .operator import ModelOperator

AIR_GAS_CONSTANT = 287.05

OK, NON_FINITE, NON_POSITIVE = 0, 1, 2
OUTLETS = ("characteristic", "linear")


@numba.njit(cache=True, nogil=True)
def _flux_jacobian_times(rho, mom, ener, s0, s1, s2, gamma):
    """``A(q) s`` where ``A`` is the flux Jacobian at ``q``; note ``A(q) q = F(q)``."""
    u = mom / rho
    e_tot = ener / rho
    g1 = gamma - 1.0
    f0 = s1
    f1 = 0.5 * (gamma - 3.0) * u * u * s0 + (3.0 - gamma) * u * s1 + g1 * s2
    f2 = u * (g1 * u * u - gamma * e_tot) * s0 + (gamma * e_tot - 1.5 * g1 * u * u) * s1 + gamma * u * s2
    return f0, f1, f2


@numba.njit(cache=True, nogil=True)
def _characteristic_outlet(q, gamma, incoming):
    """Set the last node of ``q`` (3, n) from extrapolated outgoing invariant and entropy."""
    n = q.shape[1]
    g1 = gamma - 1.0
    jp = np.empty(2)
    ent = np.empty(2)
    for j in range(2):
        i = n - 3 + j
        rho = q[0, i]
        u = q[1, i] / rho
        p = g1 * (q[2, i] - 0.5 * rho * u * u)
        if not (rho > 0.0 and p > 0.0):
            return
        jp[j] = u + 2.0 * math.sqrt(gamma * p / rho) / g1
        ent[j] = p / rho**gamma
    jp_out = 2.0 * jp[1] - jp[0]
    ent_out = 2.0 * ent[1] - ent[0]
    c = 0.25 * g1 * (jp_out - incoming)
    if not (c > 0.0 and ent_out > 0.0):
        q[0, n - 1] = math.nan
        return
    u = 0.5 * (jp_out + incoming)
    rho = (c * c / (gamma * ent_out)) ** (1.0 / g1)
    p = rho * c * c / gamma
    q[0, n - 1] = rho
    q[1, n - 1] = rho * u
    q[2, n - 1] = p / g1 + 0.5 * rho * u * u


@numba.njit(cache=True, nogil=True)
def _finish(out, start, inlet, rho0, rho_e0, strength, relaxation, gamma, incoming, characteristic):
    """Boundary closures, filter, relaxation and the validity scan, all in place."""
    n = out.shape[2]
    for b in range(out.shape[0]):
        out[b, 0, 0] = rho0
        out[b, 1, 0] = rho0 * inlet[b]
        out[b, 2, 0] = rho_e0
        for v in range(3):
            out[b, v, n - 1] = 2.0 * out[b, v, n - 2] - out[b, v, n - 3]
        if characteristic:
            # Invalid interior points keep the linear values; the scan reports them.
            _characteristic_outlet(out[b], gamma, incoming)
        if strength > 0.0:
            filter_rows(out[b], strength)
            boundary_filter_rows(out[b], strength)
        if relaxation != 1.0:
            keep = 1.0 - relaxation
            for v in range(3):
                for i in range(n):
                    out[b, v, i] = keep * start[b, v, i] + relaxation * out[b, v, i]
    return _scan(out)


@numba.njit(cache=True, nogil=True)
def _scan(out):
    for b in range(out.shape[0]):
        for i in range(out.shape[2]):
            rho = out[b, 0, i]
            mom = out[b, 1, i]
            ener = out[b, 2, i]
            if not (rho - rho == 0.0 and mom - mom == 0.0 and ener - ener == 0.0):
                return NON_FINITE, b, i
            if not (rho > 0.0 and ener - 0.5 * mom * mom / rho > 0.0):
                return NON_POSITIVE, b, i
    return OK, -1, -1


@numba.njit(cache=True, nogil=True)
def _explicit_kernel(q, inlet, coef, gamma, rho0, rho_e0, strength, incoming, characteristic, out):
    n = q.shape[2]
    flux = np.empty((3, n))
    g1 = gamma - 1.0
    for b in range(q.shape[0]):
        for i in range(n):
            rho = q[b, 0, i]
            mom = q[b, 1, i]
            ener = q[b, 2, i]
            u = mom / rho
            p = g1 * (ener - 0.5 * mom * u)
            flux[0, i] = mom
            flux[1, i] = mom * u + p
            flux[2, i] = u * (ener + p)
        for v in range(3):
            for i in range(1, n - 1):
                out[b, v, i] = q[b, v, i] - coef * (flux[v, i + 1] - flux[v, i - 1])
    return _finish(out, q, inlet, rho0, rho_e0, strength, 1.0, gamma, incoming, characteristic)


@numba.njit(cache=True, nogil=True)
def _sweep_kernel(prev, start, inlet, coef, gamma, rho0, rho_e0, strength, relaxation, incoming, characteristic, out):
    n = prev.shape[2]
    for b in range(prev.shape[0]):
        for i in range(1, n - 1):
            r0, r1, r2 = _flux_jacobian_times(
                prev[b, 0, i + 1], prev[b, 1, i + 1], prev[b, 2, i + 1],
                start[b, 0, i + 1], start[b, 1, i + 1], start[b, 2, i + 1], gamma,
            )
            l0, l1, l2 = _flux_jacobian_times(
                prev[b, 0, i - 1], prev[b, 1, i - 1], prev[b, 2, i - 1],
                start[b, 0, i - 1], start[b, 1, i - 1], start[b, 2, i - 1], gamma,
            )
            out[b, 0, i] = prev[b, 0, i] - coef * (r0 - l0)
            out[b, 1, i] = prev[b, 1, i] - coef * (r1 - l1)
            out[b, 2, i] = prev[b, 2, i] - coef * (r2 - l2)
    return _finish(out, start, inlet, rho0, rho_e0, strength, relaxation, gamma, incoming, characteristic)


def flux_jacobian(q: np.ndarray, gamma: float) -> np.ndarray:
    """Flux Jacobians ``(n, 3, 3)`` at the columns of ``q`` shaped ``(3, n)``."""
    rho, mom, ener = q
    u, e_tot, g1 = mom / rho, ener / rho, gamma - 1.0
    a = np.zeros((rho.size, 3, 3))
    a[:, 0, 1] = 1.0
    a[:, 1, 0] = 0.5 * (gamma - 3.0) * u**2
    a[:, 1, 1] = (3.0 - gamma) * u
    a[:, 1, 2] = g1
    a[:, 2, 0] = u * (g1 * u**2 - gamma * e_tot)
    a[:, 2, 1] = gamma * e_tot - 1.5 * g1 * u**2
    a[:, 2, 2] = gamma * u
    return a


def euler_flux(q: np.ndarray, gamma: float) -> np.ndarray:
    rho, mom, ener = q
    u = mom / rho
    p = (gamma - 1.0) * (ener - 0.5 * mom * u)
    return np.stack([mom, mom * u + p, u * (ener + p)])


@dataclass(frozen=True)
class EulerModel(ForwardModel):
    """Ideal-gas Euler equations driven by an oscillating inlet velocity."""

    grid: Grid1D
    dt: float
    gamma: float = 1.4
    rho0: float = 1.17
    T0: float = 300.0
    mach: float = 0.4
    filter_strength: float = 1.0
    gas_constant: float = AIR_GAS_CONSTANT
    omega: float = 2 * math.pi
    outlet: str = "characteristic"

    var_names: ClassVar[tuple[str, ...]] = ("rho", "rho_u", "rho_E")
    observed_variable: ClassVar[str] = "rho_u"
    forcing_kind: ClassVar[ForcingKind] = ForcingKind.EULER_MODULATED_AMPLITUDE
    n_params: ClassVar[int] = 1

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.gamma > 1 and self.rho0 > 0 and self.T0 > 0 and self.mach > 0):
            raise ConfigurationError("Euler model needs dt > 0, gamma > 1 and positive rho0, T0, mach")
        if not 0.0 <= self.filter_strength <= 1.0:
            raise ConfigurationError(f"filter_strength must lie in [0, 1], got {self.filter_strength}")
        if self.outlet not in OUTLETS:
            raise ConfigurationError(f"outlet must be one of {OUTLETS}, got {self.outlet!r}")
        courant = self.dt / self.grid.spacing
        if courant >= 1.0:
            raise ConfigurationError(f"acoustic Courant number {courant:.3g} >= 1 for dt={self.dt}")

    @property
    def p0(self) -> float:
        return self.rho0 * self.gas_constant * self.T0

    @property
    def sound_speed(self) -> float:
        return math.sqrt(self.gamma * self.p0 / self.rho0)

    @property
    def u0(self) -> float:
        return self.mach * self.sound_speed

    @property
    def internal_energy(self) -> float:
        return self.p0 / ((self.gamma - 1.0) * self.rho0)

    @property
    def E0(self) -> float:
        return self.internal_energy + 0.5 * self.u0**2

    @property
    def velocity_scale(self) -> float:
        return self.u0 + self.sound_speed

    @property
    def reference_velocity(self) -> float:
        return self.u0

    def forcing(self, theta) -> InletForcing:
        return InletForcing(self.forcing_kind, tuple(theta), self.omega, self.u0)

    def uniform_state(self) -> np.ndarray:
        n = self.grid.n_nodes
        return np.stack([np.full(n, self.rho0), np.full(n, self.rho0 * self.u0), np.full(n, self.rho0 * self.E0)])

    def pressure(self, q: np.ndarray) -> np.ndarray:
        rho, mom, ener = q[..., 0, :], q[..., 1, :], q[..., 2, :]
        return (self.gamma - 1.0) * (ener - 0.5 * mom**2 / rho)

    @property
    def incoming_invariant(self) -> float:
        """Free-stream value of ``u - 2c/(g-1)``, held fixed by the characteristic outlet."""
        return self.u0 - 2.0 * self.sound_speed / (self.gamma - 1.0)

    @property
    def _outlet_args(self) -> tuple[float, bool]:
        return self.incoming_invariant, self.outlet == "characteristic"

    @property
    def _coef(self) -> float:
        return self.dt / (2.0 * self.grid.spacing * self.velocity_scale)

    def _raise(self, status, what: str) -> None:
        code, member, node = status
        if code == NON_FINITE:
            raise NumericalBlowupError(f"Euler {what} produced non-finite values at node {node}", member=member)
        if code == NON_POSITIVE:
            raise PositivityError(f"Euler {what} lost density/pressure positivity at node {node}", member=member)

    def step_explicit_batch(self, states, inlet):
        out = np.empty_like(states)
        status = _explicit_kernel(
            states, np.asarray(inlet, dtype=float), self._coef, self.gamma, self.rho0,
            self.rho0 * self.E0, self.filter_strength, *self._outlet_args, out,
        )
        self._raise(status, "explicit step")
        return out

    def sweep_batch(self, prev, start, inlet, relaxation=1.0):
        check_relaxation(relaxation)
        out = np.empty_like(prev)
        status = _sweep_kernel(
            prev, start, np.asarray(inlet, dtype=float), self._coef, self.gamma, self.rho0,
            self.rho0 * self.E0, self.filter_strength, float(relaxation), *self._outlet_args, out,
        )
        self._raise(status, "implicit sweep")
        return out

    def operator(self, prev: np.ndarray, inlet: float) -> ModelOperator:
        """Block system ``q_i / dt + (A_{i+1} q_{i+1} - A_{i-1} q_{i-1}) / (2 h u_c) = p_i / dt``.

        The flux Jacobians are frozen at ``prev``. The filter is not part of the
        system, and the outlet row is the linear extrapolation; with
        ``outlet="characteristic"`` the stepping methods replace the last node
        by the nonlinear closure.
        """
        p = np.asarray(prev, dtype=float)
        n = p.shape[1]
        jac = flux_jacobian(p, self.gamma)
        scale = 1.0 / (2.0 * self.grid.spacing * self.velocity_scale)
        lower = np.zeros((n, 3, 3))
        upper = np.zeros((n, 3, 3))
        lower[1:-1] = -scale * jac[:-2]
        upper[1:-1] = scale * jac[2:]
        diag = np.broadcast_to(np.eye(3) / self.dt, (n, 3, 3)).copy()
        inlet_q = np.array([self.rho0, self.rho0 * float(inlet), self.rho0 * self.E0])
        return ModelOperator(lower, diag, upper, p.T / self.dt, inlet_q)


def euler_step_explicit(state: StateField, model: EulerModel, inlet: InletForcing, t: float) -> StateField:
    """Forward-Euler step of the conserved variables followed by the filter."""
    return model._field(model.step_explicit_batch(model._as_batch(state), model._inlet(inlet, t)))


def euler_step_implicit_single(
    state: StateField, model: EulerModel, inlet: InletForcing, t: float, relaxation: float = 1.0
) -> StateField:
    """One block-Jacobi sweep of the linearised implicit step, filtered, then blended."""
    batch = model._as_batch(state)
    return model._field(model.step_implicit_batch(batch, model._inlet(inlet, t), relaxation))
