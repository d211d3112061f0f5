import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from menkf.estimator import (
    AnalysisError,
    MenkfSettings,
    MultigridEnKF,
    menkf_analysis,
    menkf_forecast,
    ram_ratio,
    regularization_metric,
    with_settings,
)
from menkf.grid import Grid1D, StateField, coarsen
from menkf.kalman import Ensemble, ObservationSet, build_anomalies, enkf_gain, perturb_observations
from menkf.models import BurgersModel, burgers_step_explicit, sixth_order_filter
from menkf.stochastics import Purpose

FINE = Grid1D.from_elements(80, 10.0)
DT = 0.002


def make(ratio=1, smoothing=True, correction=True, inflation=(0.0, 0.0), seed=3):
    pair = coarsen(FINE, ratio)
    fine = BurgersModel(FINE, 200.0, DT)
    coarse = fine.on_grid(pair.coarse)
    settings = MenkfSettings(inflation, 0.5, correction, smoothing)
    return MultigridEnKF(fine, coarse, pair, settings, seed)


def sensors(est, n=6):
    return np.arange(n)  # includes the inlet node, which sees the parameters at once


def obs_for(est, values):
    nodes = sensors(est, len(values))
    return ObservationSet(nodes, np.asarray(values, dtype=float), 1e-3)


def test_ram_ratio_examples():
    assert ram_ratio(4, 100, 3) == 2.5625
    assert ram_ratio(8, 100, 3) == 1.1953125
    assert ram_ratio(1, 37, 2) == 38.0
    with pytest.raises(ValueError):
        ram_ratio(0, 10, 1)


def test_regularization_metric_examples():
    rng = np.random.default_rng(0)
    noisy = np.sin(FINE.nodes) + 0.1 * rng.normal(size=FINE.n_nodes)
    field = StateField(FINE, {"u": noisy})
    assert regularization_metric(field, field) == 1.0
    assert regularization_metric(noisy, sixth_order_filter(noisy)) < 1.0
    assert regularization_metric(np.zeros(10), np.zeros(10)) == 1.0


def test_smoothing_damps_a_spike_more_than_no_smoothing():
    model = BurgersModel(FINE, 200.0, DT)
    prev = (1 + 0.1 * np.sin(FINE.nodes)).reshape(1, 1, -1)
    forecast = model.step_implicit_batch(prev, np.array([1.0]))
    spiked = forecast.copy()
    spiked[0, 0, 40] += 0.05
    smoothed = model.sweep_batch(prev, spiked, np.array([1.0]), 0.5)
    increment = spiked - forecast
    assert regularization_metric(increment, smoothed - forecast) < regularization_metric(increment, increment)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 1.0))
def test_sweep_is_affine_in_its_start_state(seed, relaxation):
    # sweep(a + d) - sweep(a) must not depend on a, so the smoothing of a
    # Kalman increment can be read off independently of the forecast
    model = BurgersModel(FINE, 200.0, DT)
    rng = np.random.default_rng(seed)
    prev = (1 + 0.1 * rng.normal(size=FINE.n_nodes)).reshape(1, 1, -1)
    a, b, d = (rng.normal(size=prev.shape) for _ in range(3))
    inlet = np.array([rng.normal()])
    da = model.sweep_batch(prev, a + d, inlet, relaxation) - model.sweep_batch(prev, a, inlet, relaxation)
    db = model.sweep_batch(prev, b + d, inlet, relaxation) - model.sweep_batch(prev, b, inlet, relaxation)
    np.testing.assert_allclose(da, db, atol=1e-9)


def test_analysis_record_holds_the_smoothed_forecast():
    est = make(ratio=2)
    state = est.initial_state([0.1, 0.3], [0.0025, 0.0025], 10)
    for _ in range(3):
        state = menkf_forecast(est, state)
    _, rec = est.analysis(state, obs_for(est, [1.1, 1.0, 1.0, 1.0]))
    inlet = est.fine_model.inlet_batch(state.theta_mean[None], (state.cycle_index + 1) * DT)
    expected = est.fine_model.sweep_batch(state.fine_state[None], rec.forecast[None], inlet, 0.5)[0]
    np.testing.assert_array_equal(rec.smoothed_forecast, expected)
    _, plain = with_settings(est, enable_smoothing=False).analysis(state, obs_for(est, [1.1, 1.0, 1.0, 1.0]))
    assert plain.smoothed_forecast is plain.forecast


def test_forecast_of_uniform_state_with_zero_amplitude_is_unchanged():
    est = make()
    state = est.initial_state([0.0, 0.3], [0.0, 0.0], 5)
    out = menkf_forecast(est, state)
    assert np.array_equal(out.fine_state, state.fine_state)
    assert np.array_equal(out.ensemble.members, state.ensemble.members)
    assert out.cycle_index == 1


def test_fine_forecast_delegates_to_the_explicit_step():
    est = make()
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 5)
    out = est.forecast(state)
    field = StateField(FINE, {"u": state.fine_state[0]})
    direct = burgers_step_explicit(field, est.fine_model, est.fine_model.forcing(state.theta_mean), 0.0)
    assert np.array_equal(out.fine_state[0], direct["u"])


def test_members_and_fine_state_evolve_independently_between_observations():
    est = make(ratio=2)
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 4)
    ref_fine = state.fine_state[None].copy()
    ref_members = state.ensemble.members.reshape(4, 1, -1).copy()
    for k in range(1, 31):
        state = est.forecast(state)
        t = k * DT
        theta = state.ensemble.params.mean(axis=0, keepdims=True)
        ref_fine = est.fine_model.step_explicit_batch(ref_fine, est.fine_model.inlet_batch(theta, t))
        ref_members = est.coarse_model.step_explicit_batch(
            ref_members, est.coarse_model.inlet_batch(state.ensemble.params, t)
        )
    assert np.array_equal(state.fine_state, ref_fine[0])
    assert np.array_equal(state.ensemble.members, ref_members.reshape(4, -1))


def test_theta_mean_tracks_the_ensemble_mean():
    est = make(inflation=(1e-4, 1e-4))
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 6)
    state = est.forecast(state)
    assert np.allclose(state.theta_mean, state.ensemble.params.mean(0), atol=1e-12)
    state, _ = est.analysis(state, obs_for(est, np.ones(6)))
    assert np.allclose(state.theta_mean, state.ensemble.params.mean(0), atol=1e-12)


def test_degenerate_ensemble_gives_the_plain_implicit_step():
    est = make(ratio=2, smoothing=False)
    state = est.initial_state([0.2, 0.0], [0.0, 0.0], 5)
    state = est.forecast(state)
    obs = obs_for(est, 1.0 + 0.01 * np.arange(6))
    new, record = est.analysis(state, obs)
    inlet = est.fine_model.inlet_batch(state.theta_mean[None], 2 * DT)
    plain = est.fine_model.step_implicit_batch(state.fine_state[None], inlet)[0]
    assert np.array_equal(new.fine_state, plain)
    assert np.array_equal(record.corrected, record.forecast)
    # With smoothing the only change is the relaxed sweep from the forecast.
    smoothed, _ = with_settings(est, enable_smoothing=True).analysis(state, obs)
    sweep = est.fine_model.sweep_batch(state.fine_state[None], plain[None], inlet, 0.5)[0]
    assert np.array_equal(smoothed.fine_state, sweep)


def test_identity_grids_reproduce_the_coarse_enkf_correction():
    est = make(ratio=1, smoothing=False)
    state = est.initial_state([0.2, 0.0], [0.0, 0.0], 8)
    # Spread the members so the gain is not zero; parameters stay identical.
    rng = np.random.default_rng(7)
    members = state.ensemble.members + 0.01 * rng.normal(size=state.ensemble.members.shape)
    state.ensemble = Ensemble(members, state.ensemble.params)
    obs = obs_for(est, 1.0 + 0.02 * rng.normal(size=6))
    new, record = est.analysis(state, obs)

    k, t = 1, DT
    model = est.coarse_model
    forecast = model.step_implicit_batch(members.reshape(8, 1, -1), model.inlet_batch(state.ensemble.params, t))
    forecast = forecast.reshape(8, -1)
    _, draws = perturb_observations(obs, 8, est.stream(Purpose.OBS_PERTURBATION, k))
    gain = enkf_gain(build_anomalies(Ensemble(forecast, state.ensemble.params), obs, obs.predict(forecast), draws))
    expect = record.forecast[0] + gain @ (obs.values - record.forecast[0, obs.sensor_nodes])
    assert np.allclose(new.fine_state[0], expect, rtol=0, atol=1e-13)
    assert np.array_equal(new.ensemble.params, state.ensemble.params)


def test_corrections_only_enter_through_the_prolonged_coarse_increment():
    est = make(ratio=4, smoothing=False)
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 10)
    obs = obs_for(est, np.linspace(1.0, 1.1, 4))
    _, record = est.analysis(state, obs)
    increment = record.corrected - record.forecast
    coarse_inc = increment[:, est.pair.coincident]
    assert np.allclose(est.pair.prolong(coarse_inc), increment, atol=1e-14)


def test_parameter_estimation_mode_leaves_the_forecast_alone():
    est = make(ratio=2, correction=False)
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 10)
    new, record = est.analysis(state, obs_for(est, np.full(6, 1.05)))
    assert np.array_equal(new.fine_state, record.forecast)
    assert not np.array_equal(new.ensemble.params, state.ensemble.params)


def test_failures_carry_the_stage_and_step():
    est = make()
    state = est.initial_state([0.2, 0.0], [1e-3, 1e-3], 4)
    state.fine_state = np.full_like(state.fine_state, np.nan)
    with pytest.raises(AnalysisError) as info:
        menkf_analysis(est, state, obs_for(est, np.ones(6)))
    assert info.value.stage == "fine implicit forecast" and info.value.step == 1


def test_thread_count_does_not_change_results():
    runs = []
    for threads in (1, 3):
        est = with_settings(make(ratio=2, inflation=(1e-5, 1e-5)), n_threads=threads)
        with est:
            state = est.initial_state([0.1, 0.2], [1e-3, 1e-3], 7)
            for k in range(1, 7):
                obs = obs_for(est, np.full(6, 1.0 + 0.01 * k)) if k % 3 == 0 else None
                state, _ = est.advance(state, obs)
        runs.append(state)
    assert np.array_equal(runs[0].fine_state, runs[1].fine_state)
    assert np.array_equal(runs[0].ensemble.members, runs[1].ensemble.members)
    assert np.array_equal(runs[0].ensemble.params, runs[1].ensemble.params)


def test_models_must_match_the_pair():
    pair = coarsen(FINE, 2)
    fine = BurgersModel(FINE, 200.0, DT)
    with pytest.raises(ValueError):
        MultigridEnKF(fine, fine, pair, MenkfSettings((0.0, 0.0)), 0)
