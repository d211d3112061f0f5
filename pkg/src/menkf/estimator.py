"""Two-grid ensemble Kalman estimator.

One simulation runs on the fine grid while a dual EnKF ensemble runs on a
coarse grid. On observation steps the coarse ensemble supplies the Kalman gain
that corrects the projected fine forecast; the correction is brought back to
the fine grid and regularised by one relaxed implicit sweep. Between
observations every simulation is advanced explicitly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .grid import GridPair, StateField
from .kalman import Ensemble, ObservationSet, dual_enkf_update, inflate_parameters
from .models.base import ForwardModel, NumericalBlowupError
from .stochastics import Purpose, SeededStream, derive_stream


class AnalysisError(RuntimeError):
    """An estimator sub-step failed; ``stage`` names it and ``step`` the model step."""

    def __init__(self, stage: str, step: int, cause: Exception):
        super().__init__(f"{stage} failed at step {step}: {cause}")
        self.stage = stage
        self.step = step


@dataclass
class MenkfState:
    """Estimator state after ``cycle_index`` model steps.

    ``fine_state`` is ``(n_vars, n_fine)``; ensemble members are the coarse
    states flattened variable by variable into rows of ``n_vars * n_coarse``.
    """

    fine_state: np.ndarray
    ensemble: Ensemble
    theta_mean: np.ndarray
    pair: GridPair
    cycle_index: int = 0


@dataclass
class AnalysisRecord:
    """What happened on one observation step, for diagnostics.

    The smoothing sweep is affine, so ``final - smoothed_forecast`` is what it
    made of the Kalman increment ``corrected - forecast``.
    """

    step: int
    forecast: np.ndarray
    corrected: np.ndarray
    final: np.ndarray
    smoothed_forecast: np.ndarray
    param_mean: np.ndarray
    param_std: np.ndarray


@dataclass(frozen=True)
class MenkfSettings:
    param_inflation: tuple[float, ...]
    smoothing_relaxation: float = 0.5
    enable_state_correction: bool = True
    enable_smoothing: bool = True
    n_threads: int = 1


@dataclass
class MultigridEnKF:
    fine_model: ForwardModel
    coarse_model: ForwardModel
    pair: GridPair
    settings: MenkfSettings
    master_seed: int
    _pool: ThreadPoolExecutor | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if self.fine_model.grid != self.pair.fine or self.coarse_model.grid != self.pair.coarse:
            raise ValueError("models must live on the fine and coarse grids of the pair")
        if not 0.0 < self.settings.smoothing_relaxation <= 1.0:
            raise ValueError("smoothing_relaxation must lie in (0, 1]")
        self._inflation = np.asarray(self.settings.param_inflation, dtype=float)

    @property
    def dt(self) -> float:
        return self.fine_model.dt

    @property
    def n_vars(self) -> int:
        return self.fine_model.n_vars

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self) -> "MultigridEnKF":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def stream(self, purpose: Purpose, step: int) -> SeededStream:
        return derive_stream(self.master_seed, (int(purpose), step))

    def initial_state(self, prior_mean, prior_variance, n_members: int) -> MenkfState:
        """Uniform fine and coarse states; member parameters drawn from the prior."""
        prior_mean = np.asarray(prior_mean, dtype=float)
        draws = self.stream(Purpose.PRIOR, 0).standard_normal((n_members, prior_mean.size))
        params = prior_mean + np.sqrt(np.asarray(prior_variance, dtype=float)) * draws
        coarse = self.coarse_model.uniform_state().reshape(-1)
        members = np.repeat(coarse[None], n_members, axis=0)
        return MenkfState(self.fine_model.uniform_state(), Ensemble(members, params), params.mean(axis=0), self.pair)

    # Member stepping, optionally split over threads. Members never share data,
    # so the split cannot change the result.

    def _map_members(self, fn: Callable[..., np.ndarray], *arrays: np.ndarray) -> np.ndarray:
        n = arrays[0].shape[0]
        n_threads = min(self.settings.n_threads, n)
        if n_threads <= 1:
            return fn(*arrays)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.settings.n_threads)
        bounds = np.linspace(0, n, n_threads + 1).astype(int)
        futures = [self._pool.submit(fn, *(a[lo:hi] for a in arrays)) for lo, hi in zip(bounds[:-1], bounds[1:])]
        return np.concatenate([f.result() for f in futures])

    def _members_step(self, members: np.ndarray, params: np.ndarray, t_next: float, implicit: bool) -> np.ndarray:
        model = self.coarse_model
        shape = (members.shape[0], model.n_vars, model.grid.n_nodes)
        states = np.ascontiguousarray(members).reshape(shape)
        inlet = model.inlet_batch(params, t_next)
        if implicit:
            new = self._map_members(lambda s, v: model.step_implicit_batch(s, v), states, inlet)
        else:
            new = self._map_members(model.step_explicit_batch, states, inlet)
        return new.reshape(members.shape)

    def _fine_inlet(self, theta: np.ndarray, t_next: float) -> np.ndarray:
        return self.fine_model.inlet_batch(theta[None], t_next)

    def forecast(self, state: MenkfState) -> MenkfState:
        """Advance fine state and members one explicit step (no observation)."""
        k = state.cycle_index + 1
        t_next = k * self.dt
        try:
            fine = self.fine_model.step_explicit_batch(state.fine_state[None], self._fine_inlet(state.theta_mean, t_next))[0]
        except NumericalBlowupError as exc:
            raise AnalysisError("fine forecast", k, exc) from exc
        params = self._inflate(state.ensemble.params, k)
        try:
            members = self._members_step(state.ensemble.members, params, t_next, implicit=False)
        except NumericalBlowupError as exc:
            raise AnalysisError("ensemble forecast", k, exc) from exc
        return MenkfState(fine, Ensemble(members, params), params.mean(axis=0), state.pair, k)

    def _inflate(self, params: np.ndarray, step: int) -> np.ndarray:
        if not np.any(self._inflation > 0):
            return params.copy()
        return inflate_parameters(params, self._inflation, self.stream(Purpose.INFLATION, step))

    def analysis(self, state: MenkfState, obs: ObservationSet) -> tuple[MenkfState, AnalysisRecord]:
        """Observation step: implicit forecasts, dual EnKF, fine correction and smoothing."""
        k = state.cycle_index + 1
        t_next = k * self.dt
        prev_fine = state.fine_state
        fine_inlet = self._fine_inlet(state.theta_mean, t_next)
        n_coarse = self.pair.coarse.n_nodes

        try:
            fine_forecast = self.fine_model.step_implicit_batch(prev_fine[None], fine_inlet)[0]
        except NumericalBlowupError as exc:
            raise AnalysisError("fine implicit forecast", k, exc) from exc

        forecast_params = self._inflate(state.ensemble.params, k)
        try:
            result = dual_enkf_update(
                state.ensemble.members,
                forecast_params,
                lambda members, params: self._members_step(members, params, t_next, implicit=True),
                obs,
                self.stream(Purpose.OBS_PERTURBATION, k),
                n_nodes=n_coarse,
            )
        except (NumericalBlowupError, np.linalg.LinAlgError) as exc:
            raise AnalysisError("coarse dual EnKF", k, exc) from exc

        corrected = final = smoothed_forecast = fine_forecast
        if self.settings.enable_state_correction:
            projected = self.pair.restrict(fine_forecast).reshape(-1)
            innovation = obs.values - obs.predict(projected[None], n_coarse)[:, 0]
            coarse_increment = (result.state_gain @ innovation).reshape(self.n_vars, n_coarse)
            corrected = fine_forecast + self.pair.prolong(coarse_increment)
            final = corrected
            if self.settings.enable_smoothing:
                try:
                    starts = np.stack([corrected, fine_forecast])
                    final, smoothed_forecast = self.fine_model.sweep_batch(
                        np.repeat(prev_fine[None], 2, axis=0), starts, np.repeat(fine_inlet, 2, axis=0),
                        self.settings.smoothing_relaxation,
                    )
                except NumericalBlowupError as exc:
                    raise AnalysisError("fine smoothing", k, exc) from exc

        params = result.ensemble.params
        new_state = MenkfState(final, result.ensemble, params.mean(axis=0), state.pair, k)
        record = AnalysisRecord(
            step=k,
            forecast=fine_forecast,
            corrected=corrected,
            final=final,
            smoothed_forecast=smoothed_forecast,
            param_mean=params.mean(axis=0),
            param_std=params.std(axis=0, ddof=1),
        )
        return new_state, record

    def advance(self, state: MenkfState, obs: ObservationSet | None) -> tuple[MenkfState, AnalysisRecord | None]:
        if obs is None:
            return self.forecast(state), None
        return self.analysis(state, obs)


def menkf_forecast(estimator: MultigridEnKF, state: MenkfState) -> MenkfState:
    """Functional form of ``MultigridEnKF.forecast``."""
    return estimator.forecast(state)


def menkf_analysis(estimator: MultigridEnKF, state: MenkfState, obs: ObservationSet) -> MenkfState:
    """Functional form of ``MultigridEnKF.analysis`` that drops the diagnostics record."""
    return estimator.analysis(state, obs)[0]


def regularization_metric(before, after) -> float:
    """Second-difference energy of ``after`` relative to ``before``."""

    def energy(values) -> float:
        arr = values.to_array() if isinstance(values, StateField) else np.atleast_2d(np.asarray(values, dtype=float))
        return float(np.sum(np.diff(arr, n=2, axis=-1) ** 2))

    if isinstance(before, StateField) and isinstance(after, StateField) and before.grid != after.grid:
        raise ValueError("fields live on different grids")
    denom = energy(before)
    if denom == 0.0:
        return 1.0 if energy(after) == 0.0 else float("inf")
    return energy(after) / denom


def ram_ratio(coarsening_ratio: int, n_members: int, dims: int) -> float:
    """Memory of fine simulation plus coarse ensemble, relative to the fine simulation alone."""
    if coarsening_ratio < 1 or n_members < 1 or dims not in (1, 2, 3):
        raise ValueError("need coarsening_ratio >= 1, n_members >= 1 and dims in {1, 2, 3}")
    return 1.0 + n_members / coarsening_ratio**dims


def with_settings(estimator: MultigridEnKF, **changes) -> MultigridEnKF:
    return replace(estimator, settings=replace(estimator.settings, **changes))
