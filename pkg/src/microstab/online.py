"""Simulated real-time control loop around the trained controller.

Every update period the loop assembles the trailing measurement window from
the simulated trajectory, fits the linearized model to it, predicts the full
horizon, and executes the controller's output until the next update. The
"true" feature source replaces the linear prediction with a zero-input
nonlinear horizon simulation from the current state (the acausal input used
to score the controller offline).
"""

import time

import numpy as np

from .errors import NonFiniteState, RankDeficient
from .mlp import infer, infer_features
from .predictor import MeasurementWindow, batch_prediction_features, prediction_features
from .simulate import DIVERGENCE_LIMIT, Trajectory, check_finite, rk4_step

FEATURE_SOURCES = ("predicted", "true")


def _loop_steps(tf, dt, update_period, window_seconds):
    n_steps = round(tf / dt)
    spu = round(update_period / dt)
    win_steps = round(window_seconds / dt)
    if spu < 1 or abs(update_period - spu * dt) > 1e-9 * max(1.0, update_period):
        raise ValueError("update period must be a positive multiple of dt")
    if win_steps < 1 or abs(window_seconds - win_steps * dt) > 1e-9:
        raise ValueError("window length must be a positive multiple of dt")
    return n_steps, spu, win_steps


def _nonlinear_horizon_batch(model, x_starts, horizon, dt, eq):
    """Zero-input horizon states (C, K+1, 2N) plus a mask of diverged cases."""
    n = round(horizon / dt)
    x = np.array(x_starts, dtype=float)
    out = np.empty((len(x), n + 1, x.shape[1]))
    out[:, 0] = x
    dead = ~(np.max(np.abs(x), axis=1) <= DIVERGENCE_LIMIT)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, n + 1):
            x = rk4_step(model, x, 0.0, dt)
            newly = ~(np.max(np.abs(x), axis=1) <= DIVERGENCE_LIMIT)
            if newly.any():
                dead |= newly
                x[newly] = eq.state
            out[:, k] = x
    return out, dead


def run_control_loop(
    model,
    eq,
    controller,
    predictor,
    x0,
    tf,
    dt=0.01,
    update_period=0.1,
    window_seconds=1.0,
    feature_source="predicted",
):
    """Closed-loop simulation with the learned controller in the loop.

    Returns (Trajectory, report) where the report carries per-decision wall
    times and fallback counts (rank-deficient fits fall back to the
    last-sample deviation; at t=0 only one sample exists, counted as a
    short-window start).
    """
    if feature_source not in FEATURE_SOURCES:
        raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}")
    n_steps, spu, win_steps = _loop_steps(tf, dt, update_period, window_seconds)
    x = np.asarray(x0, dtype=float).copy()
    check_finite(x, 0.0)
    states = np.empty((n_steps + 1, model.state_dim))
    controls = np.empty(n_steps + 1)
    states[0] = x
    latencies = []
    fallbacks = {"short_window": 0, "rank_deficient": 0, "diverged_horizon": 0}
    u = 0.0
    for k in range(n_steps):
        if k % spu == 0:
            start = time.perf_counter()
            u = _decide(
                model, eq, controller, predictor, states, k, dt, win_steps,
                feature_source, fallbacks,
            )
            latencies.append(time.perf_counter() - start)
        controls[k] = u
        x = rk4_step(model, x, u, dt)
        check_finite(x, (k + 1) * dt)
        states[k + 1] = x
    controls[n_steps] = u
    traj = Trajectory(dt=dt, states=states, controls=controls)
    report = {"latencies_s": latencies, "fallbacks": fallbacks}
    return traj, report


def _decide(model, eq, controller, predictor, states, k, dt, win_steps, feature_source, fallbacks):
    if k < 1:
        dev = states[k] - eq.state
        fallbacks["short_window"] += 1
    else:
        lo = max(0, k - win_steps)
        window = MeasurementWindow(dt=dt, states=states[lo : k + 1], t_end=k * dt)
        try:
            dev = predictor.fit_window(window)
        except RankDeficient:
            dev = states[k] - eq.state
            fallbacks["rank_deficient"] += 1
    if feature_source == "true":
        horizon_states, dead = _nonlinear_horizon_batch(
            model, states[k][None, :], predictor.horizon, dt, eq
        )
        if dead[0]:
            fallbacks["diverged_horizon"] += 1
            predicted = predictor.predict_horizon(dev)
            return infer(controller, predicted)
        feats = batch_prediction_features(horizon_states, eq.state, controller.decimation)[0]
        return float(infer_features(controller, feats)[0])
    predicted = predictor.predict_horizon(dev)
    return infer(controller, predicted)


def run_control_loop_batch(
    model,
    eq,
    controller,
    predictor,
    x0s,
    tf,
    dt=0.01,
    update_period=0.1,
    window_seconds=1.0,
    feature_source="predicted",
):
    """Lockstep closed loops over a batch of initial states.

    Decisions, window fits, horizon predictions, and integration steps are
    all batched across cases; per-case results match the scalar loop's
    structure. Returns (list of Trajectory, report).
    """
    if feature_source not in FEATURE_SOURCES:
        raise ValueError(f"feature_source must be one of {FEATURE_SOURCES}")
    n_steps, spu, win_steps = _loop_steps(tf, dt, update_period, window_seconds)
    x = np.array(x0s, dtype=float)
    n_cases = len(x)
    states = np.empty((n_cases, n_steps + 1, model.state_dim))
    controls = np.empty((n_cases, n_steps + 1))
    states[:, 0] = x
    latencies = []
    fallbacks = {"short_window": 0, "rank_deficient": 0, "diverged_horizon": 0}
    u = np.zeros(n_cases)
    for k in range(n_steps):
        if k % spu == 0:
            start = time.perf_counter()
            u = _decide_batch(
                model, eq, controller, predictor, states, k, dt, win_steps,
                feature_source, fallbacks,
            )
            latencies.append(time.perf_counter() - start)
        controls[:, k] = u
        x = rk4_step(model, x, u, dt)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            bad = np.flatnonzero(~(np.max(np.abs(x), axis=1) <= DIVERGENCE_LIMIT))
            raise NonFiniteState(f"case(s) {bad.tolist()} diverged at t={(k + 1) * dt:g}")
        states[:, k + 1] = x
    controls[:, n_steps] = u
    trajs = [
        Trajectory(dt=dt, states=states[i], controls=controls[i]) for i in range(n_cases)
    ]
    report = {"latencies_s": latencies, "fallbacks": fallbacks}
    return trajs, report


def _decide_batch(
    model, eq, controller, predictor, states, k, dt, win_steps, feature_source, fallbacks
):
    if k < 1:
        devs = states[:, k] - eq.state
        fallbacks["short_window"] += 1
    else:
        lo = max(0, k - win_steps)
        try:
            devs = predictor.fit_window_batch(states[:, lo : k + 1])
        except RankDeficient:
            devs = states[:, k] - eq.state
            fallbacks["rank_deficient"] += 1
    if feature_source == "true":
        horizon_states, dead = _nonlinear_horizon_batch(
            model, states[:, k], predictor.horizon, dt, eq
        )
        feats = batch_prediction_features(horizon_states, eq.state, controller.decimation)
        if dead.any():
            fallbacks["diverged_horizon"] += int(dead.sum())
            linear_states = predictor.predict_horizon(devs)
            lin_feats = batch_prediction_features(linear_states, eq.state, controller.decimation)
            feats[dead] = lin_feats[dead]
    else:
        linear_states = predictor.predict_horizon(devs)
        feats = batch_prediction_features(linear_states, eq.state, controller.decimation)
    return infer_features(controller, feats)
