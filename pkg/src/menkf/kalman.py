"""Classical Kalman filter, stochastic EnKF and dual (parameter + state) EnKF.

Ensembles store one member per row: ``members`` is ``(n_members, state_dim)``
and ``params`` is ``(n_members, n_params)``. Anomaly matrices follow the usual
column convention (one member per column) and are scaled by ``1/sqrt(N_e - 1)``
so that ``X @ X.T`` is the unbiased sample covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .stochastics import SeededStream

JITTER = 1e-12


@dataclass
class DenseGaussianState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        cov = self.covariance
        scale = max(np.abs(cov).max(), np.finfo(float).tiny)
        if np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise ValueError("covariance is not symmetric")
        eig = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        if eig.min() < -1e-10 * max(np.abs(eig).max(), np.finfo(float).tiny):
            raise ValueError("covariance is not positive semidefinite")


@dataclass
class Ensemble:
    members: np.ndarray
    params: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self) -> None:
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))
        params = np.asarray(self.params, dtype=float)
        if params.size == 0:
            params = np.zeros((self.members.shape[0], 0))
        self.params = params.reshape(self.members.shape[0], -1)
        if self.n_members < 2:
            raise ValueError(f"an ensemble needs at least 2 members, got {self.n_members}")

    @property
    def n_members(self) -> int:
        return self.members.shape[0]

    @property
    def state_mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    @property
    def param_mean(self) -> np.ndarray:
        return self.params.mean(axis=0)


@dataclass
class AnomalySet:
    X: np.ndarray
    Y: np.ndarray
    Theta: np.ndarray
    E_o: np.ndarray


@dataclass
class ObservationSet:
    """Direct observations of one state variable at selected grid nodes.

    ``variable`` picks the block of a stacked multi-variable state vector; the
    selection operator gathers ``variable * n_nodes + sensor_nodes``.
    """

    sensor_nodes: np.ndarray
    values: np.ndarray
    noise_variance: float
    every_n_steps: int = 1
    variable: int = 0

    def __post_init__(self) -> None:
        self.sensor_nodes = np.asarray(self.sensor_nodes, dtype=np.intp)
        self.values = np.asarray(self.values, dtype=float)
        if self.sensor_nodes.ndim != 1 or self.values.shape != self.sensor_nodes.shape:
            raise ValueError("sensor_nodes and values must be 1D arrays of equal length")
        if self.sensor_nodes.size and (self.sensor_nodes[0] < 0 or np.any(np.diff(self.sensor_nodes) <= 0)):
            raise ValueError("sensor nodes must be non-negative and strictly increasing")
        if self.noise_variance < 0:
            raise ValueError("observation noise variance must be non-negative")
        if self.every_n_steps < 1:
            raise ValueError("observation schedule must be a positive number of steps")

    @property
    def n_obs(self) -> int:
        return self.sensor_nodes.size

    def state_indices(self, n_nodes: int) -> np.ndarray:
        if self.sensor_nodes.size and self.sensor_nodes[-1] >= n_nodes:
            raise IndexError(f"sensor node {self.sensor_nodes[-1]} outside a grid of {n_nodes} nodes")
        return self.variable * n_nodes + self.sensor_nodes

    def predict(self, states: np.ndarray, n_nodes: int | None = None) -> np.ndarray:
        """Model counterparts ``H x`` for state rows; returns ``(n_obs, n_rows)``."""
        states = np.atleast_2d(states)
        n_nodes = states.shape[1] if n_nodes is None else n_nodes
        return states[:, self.state_indices(n_nodes)].T

    def matrix(self, state_dim: int, n_nodes: int | None = None) -> np.ndarray:
        n_nodes = state_dim if n_nodes is None else n_nodes
        h = np.zeros((self.n_obs, state_dim))
        h[np.arange(self.n_obs), self.state_indices(n_nodes)] = 1.0
        return h


def kf_step(
    state: DenseGaussianState,
    transition: np.ndarray,
    process_noise: np.ndarray,
    obs: ObservationSet | None = None,
) -> DenseGaussianState:
    """Forecast with ``(M, Q)`` then, if ``obs`` is given, the Kalman analysis."""
    m = np.atleast_2d(transition)
    xf = m @ state.mean
    pf = m @ state.covariance @ m.T + process_noise
    if obs is None:
        return DenseGaussianState(xf, 0.5 * (pf + pf.T))
    h = obs.matrix(xf.size)
    s = h @ pf @ h.T + obs.noise_variance * np.eye(obs.n_obs)
    gain = np.linalg.solve(s, h @ pf).T
    xa = xf + gain @ (obs.values - h @ xf)
    pa = (np.eye(xf.size) - gain @ h) @ pf
    return DenseGaussianState(xa, 0.5 * (pa + pa.T))


def _anomaly(columns: np.ndarray) -> np.ndarray:
    n = columns.shape[1]
    return (columns - columns.mean(axis=1, keepdims=True)) / np.sqrt(n - 1)


def build_anomalies(
    ens: Ensemble, obs: ObservationSet | None, predicted_obs: np.ndarray, obs_noise_draws: np.ndarray
) -> AnomalySet:
    """Normalised anomalies of states, predicted observations, parameters and noise."""
    if ens.n_members < 2:
        raise ValueError("anomalies need at least 2 members")
    predicted_obs = np.atleast_2d(predicted_obs)
    obs_noise_draws = np.atleast_2d(obs_noise_draws)
    expected = (obs.n_obs if obs is not None else predicted_obs.shape[0], ens.n_members)
    if predicted_obs.shape != expected or obs_noise_draws.shape != expected:
        raise ValueError(f"predicted observations and noise draws must be shaped {expected}")
    return AnomalySet(
        X=_anomaly(ens.members.T),
        Y=_anomaly(predicted_obs),
        Theta=_anomaly(ens.params.T),
        E_o=_anomaly(obs_noise_draws),
    )


def _innovation_factor(anoms: AnomalySet):
    c = anoms.Y @ anoms.Y.T + anoms.E_o @ anoms.E_o.T
    if not np.all(np.isfinite(c)):
        raise np.linalg.LinAlgError("innovation covariance contains non-finite values")
    try:
        return sla.cho_factor(c, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        jitter = JITTER * max(np.trace(c), np.finfo(float).tiny)
        try:
            return sla.cho_factor(c + jitter * np.eye(c.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "innovation covariance is singular; increase the observation noise or the ensemble size"
            ) from exc


def ensemble_gain(anomaly: np.ndarray, anoms: AnomalySet, factor=None) -> np.ndarray:
    """``A Y^T (Y Y^T + E_o E_o^T)^{-1}`` for any anomaly matrix ``A`` (states or parameters)."""
    if factor is None:
        factor = _innovation_factor(anoms)
    return sla.cho_solve(factor, anoms.Y @ anomaly.T).T


def enkf_gain(anoms: AnomalySet) -> np.ndarray:
    """State gain ``X Y^T (Y Y^T + E_o E_o^T)^{-1}``."""
    return ensemble_gain(anoms.X, anoms)


def perturb_observations(obs: ObservationSet, n: int, stream: SeededStream) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed observation columns ``y + eps_i`` and the raw draws ``eps_i``.

    Draws are taken member by member, so member ``i`` gets the same noise for any
    ensemble size ``n > i``.
    """
    draws = np.sqrt(obs.noise_variance) * stream.standard_normal((n, obs.n_obs)).T
    return obs.values[:, None] + draws, draws


def enkf_analysis(
    ens: Ensemble, obs: ObservationSet, predicted_obs: np.ndarray, stream: SeededStream
) -> Ensemble:
    """Stochastic EnKF update of every member; parameters are left untouched."""
    perturbed, draws = perturb_observations(obs, ens.n_members, stream)
    anoms = build_anomalies(ens, obs, predicted_obs, draws)
    gain = enkf_gain(anoms)
    members = ens.members + (gain @ (perturbed - predicted_obs)).T
    return Ensemble(members, ens.params.copy())


@dataclass
class DualCycleResult:
    ensemble: Ensemble
    state_gain: np.ndarray
    param_gain: np.ndarray
    forecast_params: np.ndarray


ModelStep = Callable[[np.ndarray, np.ndarray], np.ndarray]


def dual_enkf_update(
    prev_members: np.ndarray,
    forecast_params: np.ndarray,
    model_step: ModelStep,
    obs: ObservationSet,
    obs_stream: SeededStream,
    n_nodes: int | None = None,
) -> DualCycleResult:
    """Parameter update, re-forecast and state update for already-inflated parameters.

    ``prev_members`` are the analysis states at the previous step and
    ``model_step(states, params)`` advances them by one step. The same perturbed
    observations serve both updates.
    """
    n_members = prev_members.shape[0]
    perturbed, draws = perturb_observations(obs, n_members, obs_stream)

    first = model_step(prev_members, forecast_params)
    y_first = obs.predict(first, n_nodes)
    anoms = build_anomalies(Ensemble(first, forecast_params), obs, y_first, draws)
    factor = _innovation_factor(anoms)
    param_gain = ensemble_gain(anoms.Theta, anoms, factor)
    params = forecast_params + (param_gain @ (perturbed - y_first)).T

    second = model_step(prev_members, params)
    y_second = obs.predict(second, n_nodes)
    anoms = build_anomalies(Ensemble(second, params), obs, y_second, draws)
    state_gain = enkf_gain(anoms)
    members = second + (state_gain @ (perturbed - y_second)).T
    return DualCycleResult(Ensemble(members, params), state_gain, param_gain, forecast_params)


def inflate_parameters(params: np.ndarray, inflation: np.ndarray, stream: SeededStream | None) -> np.ndarray:
    """``theta + tau`` with ``tau ~ N(0, diag(inflation))`` drawn member by member."""
    inflation = np.broadcast_to(np.asarray(inflation, dtype=float), (params.shape[1],))
    if np.any(inflation < 0):
        raise ValueError("parameter inflation variances must be non-negative")
    if stream is None or not np.any(inflation > 0):
        return params.copy()
    return params + np.sqrt(inflation) * stream.standard_normal(params.shape)


def dual_enkf_cycle(
    ens: Ensemble,
    model_step: ModelStep,
    obs: ObservationSet,
    param_inflation,
    obs_stream: SeededStream,
    inflation_stream: SeededStream | None = None,
    n_nodes: int | None = None,
) -> DualCycleResult:
    """One full dual EnKF cycle: inflate parameters, then update parameters and states."""
    forecast_params = inflate_parameters(ens.params, param_inflation, inflation_stream)
    return dual_enkf_update(ens.members, forecast_params, model_step, obs, obs_stream, n_nodes)
