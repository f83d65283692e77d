"""Linearized response prediction from short measurement windows.

During online control the full multi-second response needed as controller
input is not yet available; it is predicted by fitting the zero-input
linearized dynamics to the trailing 0.1-1 s of measurements and propagating
the fitted deviation over the horizon. Transition matrices are powers of the
single-step RK4 matrix of the linear system and are precomputed once per
(A, dt, horizon).
"""

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient

DEFAULT_HORIZON = 15.0
MAX_WINDOW_SECONDS = 1.0
COND_LIMIT = 1e12


@dataclass(frozen=True)
class MeasurementWindow:
    """Trailing measured states at spacing dt, ending at time t_end."""

    dt: float
    states: np.ndarray  # (K, 2N), oldest first
    t_end: float

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if states.ndim != 2 or len(states) < 2:
            raise ValueError("window needs at least two samples")
        if not np.all(np.isfinite(states)):
            raise ValueError("window samples must be finite")


@dataclass(frozen=True)
class PredictedTrajectory:
    """Horizon prediction shaped like a Trajectory, tagged with its source."""

    dt: float
    states: np.ndarray
    controls: np.ndarray
    equilibrium_state: np.ndarray
    horizon: float
    source: str = "linear_prediction"

    @property
    def deviations(self):
        return self.states - self.equilibrium_state


def rk4_linear_step_matrix(a, dt):
    """Single-step transition matrix: RK4 applied to the columns of the identity."""
    a = np.asarray(a, dtype=float)
    eye = np.eye(a.shape[0])
    k1 = a @ eye
    k2 = a @ (eye + 0.5 * dt * k1)
    k3 = a @ (eye + 0.5 * dt * k2)
    k4 = a @ (eye + dt * k3)
    return eye + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


class LinearPredictor:
    """Window fitting and horizon propagation for one (A, eq, dt) triple.

    The constructor precomputes the transition-matrix path over the horizon
    and the prefix normal matrices used by the window fit; afterwards all
    methods are read-only and safe to call concurrently.
    """

    def __init__(self, a, eq, dt, horizon=DEFAULT_HORIZON, max_window=MAX_WINDOW_SECONDS):
        self.a = np.asarray(a, dtype=float)
        self.eq = eq
        self.dt = float(dt)
        self.horizon = float(horizon)
        dim = self.a.shape[0]
        n_horizon = round(self.horizon / self.dt)
        if abs(self.horizon - n_horizon * self.dt) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be an integer multiple of dt")
        step = rk4_linear_step_matrix(self.a, self.dt)
        max_steps = max(n_horizon, round(max_window / self.dt)) + 1
        path = np.empty((max_steps + 1, dim, dim))
        path[0] = np.eye(dim)
        for k in range(1, max_steps + 1):
            path[k] = step @ path[k - 1]
        self.step_matrix = step
        self.n_horizon = n_horizon
        self._path = path
        # prefix sums of Phi_k' Phi_k for window lengths up to max_steps+1
        gram = np.empty_like(path)
        gram[0] = path[0].T @ path[0]
        for k in range(1, max_steps + 1):
            gram[k] = gram[k - 1] + path[k].T @ path[k]
        self._gram_prefix = gram

    def fit_window(self, window):
        """Least-squares deviation estimate at the window's end.

        Fits the initial deviation d0 minimizing sum_k |Phi(t_k) d0 - y_k|^2
        over the window samples (y = measured state minus equilibrium), then
        returns Phi(T_w) d0. Raises RankDeficient when the normal matrix is
        ill-conditioned (degenerate window).
        """
        if abs(window.dt - self.dt) > 1e-12:
            raise ValueError("window sample spacing must match the predictor dt")
        n_samples = len(window.states)
        if n_samples - 1 >= len(self._path):
            raise ValueError("window longer than the precomputed horizon")
        dev = window.states - self.eq.state
        normal = self._gram_prefix[n_samples - 1]
        rhs = np.zeros(self.a.shape[0])
        for k in range(n_samples):
            rhs = rhs + self._path[k].T @ dev[k]
        if np.linalg.cond(normal) > COND_LIMIT:
            raise RankDeficient("window fit normal matrix is ill-conditioned")
        d0 = np.linalg.solve(normal, rhs)
        return self._path[n_samples - 1] @ d0

    def fit_window_batch(self, windows):
        """Vectorized :meth:`fit_window` over windows stacked as (C, K, 2N).

        All windows share the same length and sample spacing, so the normal
        matrix is shared and factorized once.
        """
        windows = np.asarray(windows, dtype=float)
        n_samples = windows.shape[1]
        if n_samples < 2 or n_samples - 1 >= len(self._path):
            raise ValueError("window length out of the precomputed range")
        dev = windows - self.eq.state
        normal = self._gram_prefix[n_samples - 1]
        if np.linalg.cond(normal) > COND_LIMIT:
            raise RankDeficient("window fit normal matrix is ill-conditioned")
        rhs = np.einsum("kij,cki->cj", self._path[:n_samples], dev)
        d0 = np.linalg.solve(normal, rhs.T).T
        return d0 @ self._path[n_samples - 1].T

    def predict_horizon(self, deviation_now):
        """Zero-input propagation of a deviation over the full horizon.

        Accepts a single deviation (2N,) or a batch (C, 2N); returns one
        PredictedTrajectory or a states array (C, K+1, 2N) for batches.
        """
        deviation_now = np.asarray(deviation_now, dtype=float)
        phis = self._path[: self.n_horizon + 1]
        if deviation_now.ndim == 1:
            devs = phis @ deviation_now
            return PredictedTrajectory(
                dt=self.dt,
                states=self.eq.state + devs,
                controls=np.zeros(len(devs)),
                equilibrium_state=self.eq.state,
                horizon=self.horizon,
            )
        devs = np.einsum("kij,cj->cki", phis, deviation_now)
        return self.eq.state + devs


def prediction_features(predicted, decimation=1):
    """Flatten a prediction's deviations into the controller input layout.

    Samples are taken every ``decimation`` steps (always including t=0) and
    flattened sample-major: (d1, o1, d2, o2) at t0, then t1, ...
    """
    dev = predicted.deviations[::decimation]
    return dev.reshape(-1)


def feature_dim(horizon, dt, state_dim, decimation=1):
    n_samples = round(horizon / dt) + 1
    kept = (n_samples + decimation - 1) // decimation
    return kept * state_dim


def batch_prediction_features(states_batch, eq_state, decimation=1):
    """Feature matrix (C, d) from batched predicted states (C, K+1, 2N)."""
    dev = states_batch[:, ::decimation, :] - eq_state
    return dev.reshape(len(states_batch), -1)
