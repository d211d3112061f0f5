"""Time-dependent inlet forcing laws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ForcingKind(str, Enum):
    BURGERS_PHASE_AMPLITUDE = "burgers_phase_amplitude"
    EULER_MODULATED_AMPLITUDE = "euler_modulated_amplitude"


@dataclass(frozen=True)
class InletForcing:
    """Sinusoidal inlet velocity ``u0 (1 + amplitude sin(omega t + phase))``.

    Burgers uses ``theta = (amplitude, phase)``. Euler uses a scalar amplitude
    ``theta = (amplitude,)`` when the amplitude is being estimated, or the
    truth-mode pair ``theta = (theta0, b)`` whose amplitude oscillates as
    ``theta0 (1 + sin(omega t / b))``.
    """

    kind: ForcingKind
    theta: tuple[float, ...]
    omega: float = 2 * math.pi
    u0: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ForcingKind(self.kind))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        expected = {ForcingKind.BURGERS_PHASE_AMPLITUDE: (2,), ForcingKind.EULER_MODULATED_AMPLITUDE: (1, 2)}
        if len(self.theta) not in expected[self.kind]:
            raise ValueError(f"{self.kind.value} forcing takes {expected[self.kind]} parameters, got {self.theta}")

    @property
    def modulated(self) -> bool:
        return self.kind is ForcingKind.EULER_MODULATED_AMPLITUDE and len(self.theta) == 2

    def amplitude(self, t: float) -> float:
        if self.kind is ForcingKind.BURGERS_PHASE_AMPLITUDE or not self.modulated:
            return self.theta[0]
        theta0, b = self.theta
        return theta0 * (1.0 + math.sin(self.omega / b * t))


def inlet_value(inlet: InletForcing, t: float) -> float:
    """Inlet velocity at time ``t``."""
    phase = inlet.theta[1] if inlet.kind is ForcingKind.BURGERS_PHASE_AMPLITUDE else 0.0
    return inlet.u0 * (1.0 + inlet.amplitude(t) * math.sin(inlet.omega * t + phase))


def inlet_values(kind: ForcingKind, params: np.ndarray, t: float, omega: float, u0: float) -> np.ndarray:
    """Vectorised inlet velocity for a batch of parameter rows ``(n, n_params)``.

    Rows are interpreted the same way as ``InletForcing.theta`` (assimilated form).
    """
    params = np.atleast_2d(params)
    if kind is ForcingKind.BURGERS_PHASE_AMPLITUDE:
        return u0 * (1.0 + params[:, 0] * np.sin(omega * t + params[:, 1]))
    if params.shape[1] == 2:
        amp = params[:, 0] * (1.0 + np.sin(omega / params[:, 1] * t))
    else:
        amp = params[:, 0]
    return u0 * (1.0 + amp * np.sin(omega * t))
