"""Twin experiments: truth run, synthetic observations, assimilation and diagnostics."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import AssimilationConfig
from .estimator import AnalysisError, MenkfSettings, MenkfState, MultigridEnKF, regularization_metric
from .grid import Grid1D, GridPair, StateField, coarsen
from .kalman import ObservationSet
from .models import BurgersModel, EulerModel, ForwardModel, NumericalBlowupError
from .stochastics import Purpose, derive_stream

CI_FACTOR = 1.96


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class TwinExperiment:
    """Everything needed to run one twin experiment, derived from a config."""

    config: AssimilationConfig
    fine_model: ForwardModel
    coarse_model: ForwardModel
    pair: GridPair
    sensor_nodes: np.ndarray  # coarse-grid indices
    n_steps: int
    spinup_steps: int
    obs_every: int

    def __post_init__(self) -> None:
        if self.obs_every < 1 or self.n_steps < 1:
            raise ValueError("schedule and window need a positive number of steps")
        if self.sensor_nodes.size == 0:
            raise ValueError("observation window contains no coarse-grid node")

    @property
    def dt(self) -> float:
        return self.fine_model.dt

    @property
    def analysis_steps(self) -> np.ndarray:
        return np.arange(self.obs_every, self.n_steps + 1, self.obs_every)

    @property
    def fine_sensor_nodes(self) -> np.ndarray:
        return self.sensor_nodes * self.pair.ratio


def build_models(cfg: AssimilationConfig, grid: Grid1D) -> ForwardModel:
    m = cfg.model
    if m.model == "burgers":
        return BurgersModel(grid, m.reynolds, m.dt, m.u0, cfg.omega)
    return EulerModel(
        grid, m.dt, m.gamma, m.rho0, m.T0, m.mach, m.filter_strength, m.gas_constant, cfg.omega, m.outlet
    )


def sensor_nodes_in_window(grid: Grid1D, window: tuple[float, float]) -> np.ndarray:
    """Nodes with ``window[0] <= x < window[1]`` (half-open, up to rounding)."""
    x = grid.nodes
    tol = 1e-9 * grid.spacing
    return np.flatnonzero((x >= window[0] - tol) & (x < window[1] - tol))


def build_experiment(cfg: AssimilationConfig) -> TwinExperiment:
    fine = Grid1D.from_elements(cfg.grid.n_elements, cfg.grid.domain_length)
    pair = coarsen(fine, cfg.grid.coarsening_ratio)
    fine_model = build_models(cfg, fine)
    coarse_model = fine_model.on_grid(pair.coarse)
    dt = cfg.model.dt
    return TwinExperiment(
        config=cfg,
        fine_model=fine_model,
        coarse_model=coarse_model,
        pair=pair,
        sensor_nodes=sensor_nodes_in_window(pair.coarse, cfg.experiment.obs_window),
        n_steps=int(round(cfg.experiment.duration / dt)),
        spinup_steps=int(round(cfg.experiment.spinup_time / dt)),
        obs_every=cfg.filter.obs_every_n_steps,
    )


@dataclass(frozen=True)
class TruthRecord:
    """Observed variable of the truth on the fine grid at every analysis step."""

    steps: np.ndarray
    observed: np.ndarray  # (len(steps), n_fine)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    final: np.ndarray | None = None

    def at(self, step: int) -> np.ndarray:
        i = int(np.searchsorted(self.steps, step))
        if i >= self.steps.size or self.steps[i] != step:
            raise KeyError(f"truth not recorded at step {step}")
        return self.observed[i]


def _truth_key(exp: TwinExperiment, snapshot_steps: tuple[int, ...]):
    cfg = exp.config
    return (
        cfg.model.model_dump_json(),
        cfg.grid.n_elements,
        cfg.grid.domain_length,
        exp.spinup_steps,
        exp.n_steps,
        exp.obs_every,
        snapshot_steps,
    )


def generate_truth(exp: TwinExperiment, snapshot_steps: tuple[int, ...] = ()) -> TruthRecord:
    """Fine-grid reference run with the true forcing.

    The model is spun up from the uniform state for ``spinup_steps``; the clock
    is then reset to zero and the record covers the assimilation window.
    Results are cached per process because many experiments share one truth.
    """
    key = _truth_key(exp, tuple(snapshot_steps))
    if key not in _TRUTH_CACHE:
        if len(_TRUTH_CACHE) >= _TRUTH_CACHE_SIZE:
            _TRUTH_CACHE.pop(next(iter(_TRUTH_CACHE)))
        _TRUTH_CACHE[key] = _run_truth(exp, tuple(snapshot_steps))
    return _TRUTH_CACHE[key]


_TRUTH_CACHE: dict = {}
_TRUTH_CACHE_SIZE = 4


def _run_truth(exp: TwinExperiment, snapshot_steps: tuple[int, ...]) -> TruthRecord:
    model = exp.fine_model
    theta = np.array([exp.config.model.true_theta])
    obs_var = model.observed_index
    state = model.uniform_state()[None]
    try:
        for k in range(1, exp.spinup_steps + 1):
            state = model.step_explicit_batch(state, model.inlet_batch(theta, k * model.dt))
        steps = exp.analysis_steps
        observed = np.empty((steps.size, model.grid.n_nodes))
        snapshots = {0: state[0].copy()} if 0 in snapshot_steps else {}
        j = 0
        for k in range(1, exp.n_steps + 1):
            state = model.step_explicit_batch(state, model.inlet_batch(theta, k * model.dt))
            if j < steps.size and steps[j] == k:
                observed[j] = state[0, obs_var]
                j += 1
            if k in snapshot_steps:
                snapshots[k] = state[0].copy()
    except NumericalBlowupError as exc:
        exc.step = k
        raise ExperimentError(f"truth run failed: {exc}") from exc
    observed.setflags(write=False)
    return TruthRecord(steps, observed, snapshots, state[0].copy())


def sample_observations(
    truth: TruthRecord, exp: TwinExperiment, noise_variance: float, seed: int
) -> dict[int, ObservationSet]:
    """Noisy truth at the coarse sensor nodes for every analysis step.

    Noise is drawn for every fine node in the window, so a sensor receives the
    same noise whatever the coarsening ratio.
    """
    window_nodes = sensor_nodes_in_window(exp.pair.fine, exp.config.experiment.obs_window)
    pick = np.searchsorted(window_nodes, exp.fine_sensor_nodes)
    variable = exp.fine_model.observed_index
    out = {}
    for k, values in zip(truth.steps, truth.observed):
        noise = derive_stream(seed, (int(Purpose.OBS_NOISE), int(k))).standard_normal(window_nodes.size)
        y = values[exp.fine_sensor_nodes] + np.sqrt(noise_variance) * noise[pick]
        out[int(k)] = ObservationSet(exp.sensor_nodes, y, noise_variance, exp.obs_every, variable)
    return out


def rmse(estimate, truth, variable: str | None = None, spacing: float = 1.0) -> float:
    """Relative L2 error with trapezoidal quadrature on the grid nodes."""
    if isinstance(estimate, StateField):
        if estimate.grid != truth.grid:
            raise ValueError("estimate and truth live on different grids")
        spacing = estimate.grid.spacing
        estimate, truth = estimate[variable], truth[variable]
    est, ref = np.asarray(estimate, dtype=float), np.asarray(truth, dtype=float)
    denom = np.trapezoid(ref**2, dx=spacing)
    if denom == 0.0:
        raise ValueError("truth has zero norm")
    return float(np.sqrt(np.trapezoid((est - ref) ** 2, dx=spacing) / denom))


def conservativity_residual(
    prev: np.ndarray, curr: np.ndarray, model: ForwardModel, inlet: float, implicit: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Defect of the momentum equation between two consecutive states.

    The spatial operator is the one of the scheme that produced the step
    (explicit update or single implicit sweep from ``prev``), so a pure model
    step has zero residual. Returns ``(gamma, gamma_star)`` on interior nodes,
    with ``gamma_star`` normalised by ``max |curr - prev| / dt``.
    """
    prev = np.asarray(prev, dtype=float).reshape(model.n_vars, -1)
    curr = np.asarray(curr, dtype=float).reshape(model.n_vars, -1)
    inlet_arr = np.array([inlet], dtype=float)
    if implicit:
        ref = model.step_implicit_batch(prev[None], inlet_arr)[0]
    else:
        ref = model.step_explicit_batch(prev[None], inlet_arr)[0]
    v = model.observed_index
    rate = (curr[v, 1:-1] - prev[v, 1:-1]) / model.dt
    gamma = rate - (ref[v, 1:-1] - prev[v, 1:-1]) / model.dt
    scale = np.abs(rate).max()
    gamma_star = gamma / scale if scale > 0 else np.zeros_like(gamma)
    return gamma, gamma_star


@dataclass
class DiagnosticsSeries:
    times: np.ndarray
    theta_mean: np.ndarray
    theta_std: np.ndarray
    rmse: np.ndarray
    gamma_max: np.ndarray
    gamma_hf: np.ndarray
    smoothing_ratio: np.ndarray
    state_ratio: np.ndarray

    @property
    def theta_ci(self) -> tuple[np.ndarray, np.ndarray]:
        half = CI_FACTOR * self.theta_std
        return self.theta_mean - half, self.theta_mean + half

    def window(self, lo: float, hi: float) -> np.ndarray:
        return (self.times >= lo) & (self.times <= hi)


@dataclass
class ExperimentResult:
    experiment: TwinExperiment
    diagnostics: DiagnosticsSeries
    final_state: MenkfState
    truth: TruthRecord
    snapshots: dict[int, np.ndarray]


def _hf_energy(values: np.ndarray) -> float:
    return float(np.sum(np.diff(values, n=2) ** 2))


def run_twin_experiment(cfg: AssimilationConfig, *, enable_smoothing: bool = True) -> ExperimentResult:
    """Truth, observations, estimator loop and per-analysis diagnostics."""
    exp = build_experiment(cfg)
    dt = exp.dt
    snapshot_steps = tuple(sorted({int(round(t / dt)) for t in cfg.experiment.snapshot_times}))
    truth = generate_truth(exp, snapshot_steps)
    observations = sample_observations(truth, exp, cfg.filter.obs_noise_variance, cfg.seed)

    settings = MenkfSettings(
        param_inflation=cfg.filter.param_inflation,
        smoothing_relaxation=cfg.menkf.smoothing_relaxation,
        enable_state_correction=cfg.menkf.enable_state_correction,
        enable_smoothing=enable_smoothing,
        n_threads=cfg.menkf.n_threads,
    )
    n_rec = len(observations)
    n_params = len(cfg.filter.param_prior_mean)
    diag = DiagnosticsSeries(
        times=np.empty(n_rec),
        theta_mean=np.empty((n_rec, n_params)),
        theta_std=np.empty((n_rec, n_params)),
        rmse=np.empty(n_rec),
        gamma_max=np.empty(n_rec),
        gamma_hf=np.empty(n_rec),
        smoothing_ratio=np.empty(n_rec),
        state_ratio=np.empty(n_rec),
    )
    var = exp.fine_model.observed_index
    snapshots: dict[int, np.ndarray] = {}
    with MultigridEnKF(exp.fine_model, exp.coarse_model, exp.pair, settings, cfg.seed) as estimator:
        state = estimator.initial_state(
            cfg.filter.param_prior_mean, cfg.filter.param_prior_variance, cfg.filter.n_ensemble
        )
        if 0 in snapshot_steps:
            snapshots[0] = state.fine_state.copy()
        j = 0
        for k in range(1, exp.n_steps + 1):
            prev = state
            try:
                state, record = estimator.advance(state, observations.get(k))
            except AnalysisError as exc:
                raise ExperimentError(str(exc)) from exc
            if k in snapshot_steps:
                snapshots[k] = state.fine_state.copy()
            if record is None:
                continue
            inlet = exp.fine_model.inlet_batch(prev.theta_mean[None], k * dt)[0]
            _, gamma_star = conservativity_residual(prev.fine_state, record.final, exp.fine_model, inlet, True)
            diag.times[j] = k * dt
            diag.theta_mean[j] = record.param_mean
            diag.theta_std[j] = record.param_std
            diag.rmse[j] = rmse(record.final[var], truth.at(k), spacing=exp.pair.fine.spacing)
            diag.gamma_max[j] = np.abs(gamma_star).max()
            diag.gamma_hf[j] = _hf_energy(gamma_star)
            # Compare the Kalman increment before and after the sweep; the
            # sweep's own move of the uncorrected forecast is split off first.
            diag.smoothing_ratio[j] = regularization_metric(
                record.corrected[var] - record.forecast[var], record.final[var] - record.smoothed_forecast[var]
            )
            diag.state_ratio[j] = regularization_metric(record.corrected[var], record.final[var])
            j += 1
    return ExperimentResult(exp, diag, state, truth, snapshots)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = np.column_stack([np.asarray(c, dtype=float).reshape(len(columns[0]), -1) for c in columns])
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def parameter_names(cfg: AssimilationConfig) -> list[str]:
    n = len(cfg.filter.param_prior_mean)
    return ["theta"] if n == 1 else [f"theta{i + 1}" for i in range(n)]


def write_outputs(result: ExperimentResult, out_dir: str | Path, wall_time: float | None = None) -> Path:
    """Write the diagnostics CSVs, snapshots and a manifest; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.experiment.config
    d = result.diagnostics
    names = parameter_names(cfg)
    header = ["time"]
    columns = [d.times]
    for i, name in enumerate(names):
        header += [f"{name}_mean", f"{name}_std"]
        columns += [d.theta_mean[:, i], d.theta_std[:, i]]
    _write_csv(out / "theta.csv", header, columns)
    _write_csv(out / "rmse.csv", ["time", "rmse"], [d.times, d.rmse])
    _write_csv(out / "gamma.csv", ["time", "gamma_star_max", "hf_energy"], [d.times, d.gamma_max, d.gamma_hf])
    _write_csv(
        out / "regularization.csv",
        ["time", "increment_ratio", "state_ratio"],
        [d.times, d.smoothing_ratio, d.state_ratio],
    )

    exp = result.experiment
    var_names = list(exp.fine_model.var_names)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    x = exp.pair.fine.nodes
    for step, fine in sorted(result.snapshots.items()):
        true_state = result.truth.snapshots.get(step)
        header = ["x", *var_names]
        columns = [x, *fine]
        if true_state is not None:
            header += [f"true_{v}" for v in var_names]
            columns += list(true_state)
        _write_csv(snap_dir / f"t{step * exp.dt:.10g}.csv", header, columns)

    (out / "config.cfg").write_text(cfg.to_text())
    manifest = {
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": wall_time,
        "n_analyses": int(d.times.size),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def _versions() -> dict[str, str]:
    import numba
    import pydantic
    import scipy

    return {
        "menkf": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pydantic": pydantic.__version__,
    }


def run_and_write(cfg: AssimilationConfig, out_dir: str | Path) -> ExperimentResult:
    start = time.perf_counter()
    result = run_twin_experiment(cfg)
    write_outputs(result, out_dir, time.perf_counter() - start)
    return result
