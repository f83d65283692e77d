"""Fixed-step RK4 integration of the microgrid under a control policy.

Trajectories are uniformly sampled at ``dt`` (default 0.01 s, i.e. 100 Hz).
The control is sampled from the policy at the start of each step and held
constant over the step (zero-order hold).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteState
from .model import vector_field

DEFAULT_DT = 0.01
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state/control time series."""

    dt: float
    states: np.ndarray  # (K+1, 2N)
    controls: np.ndarray  # (K+1,)
    t0: float = 0.0

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(states) != len(controls) or len(states) < 2:
            raise ValueError("states and controls must have equal length >= 2")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
            raise ValueError("trajectory samples must be finite")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.states))

    @property
    def tf(self):
        return self.t0 + self.dt * (len(self.states) - 1)


class ZeroPolicy:
    """No control injection."""

    def control(self, t, x):
        return 0.0


class ConstantPolicy:
    """Constant injection, e.g. for step-response checks."""

    def __init__(self, value):
        self.value = float(value)

    def control(self, t, x):
        return self.value


class SchedulePolicy:
    """Piecewise-constant injection: one value per interval of fixed length."""

    def __init__(self, values, interval_length):
        self.values = [float(v) for v in values]
        self.interval_length = float(interval_length)
        if self.interval_length <= 0:
            raise ValueError("interval_length must be positive")

    def control(self, t, x):
        idx = int(np.floor(t / self.interval_length + 1e-9))
        return self.values[min(max(idx, 0), len(self.values) - 1)]


class ReplayPolicy:
    """Replays a recorded per-sample control sequence (cost re-verification)."""

    def __init__(self, controls, dt):
        self.controls = np.asarray(controls, dtype=float)
        self.dt = float(dt)

    def control(self, t, x):
        idx = int(round(t / self.dt))
        return float(self.controls[min(max(idx, 0), len(self.controls) - 1)])


class LinearFeedbackPolicy:
    """State feedback ``u = -K (x - x_eq)``, saturated to the admissible box."""

    def __init__(self, gain, equilibrium, u_max=None):
        self.gain = np.asarray(gain, dtype=float).reshape(-1)
        self.equilibrium = equilibrium
        self.u_max = None if u_max is None else float(u_max)
        if not np.all(np.isfinite(self.gain)):
            raise ValueError("feedback gain must be finite")

    def control(self, t, x):
        u = -float(self.gain @ (x - self.equilibrium.state))
        if self.u_max is not None:
            u = min(max(u, -self.u_max), self.u_max)
        return u


def rk4_generic(f, x, h):
    """One classical RK4 step of ``dx/dt = f(x)``; shared combination arithmetic."""
    half_h = 0.5 * h
    k1 = f(x)
    k2 = f(x + half_h * k1)
    k3 = f(x + half_h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def rk4_step(model, x, u, h):
    """One RK4 step of the swing equations with ``u`` held constant.

    Accepts batched states of shape (..., 2N) with ``u`` scalar or (...,).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    return rk4_generic(lambda s: vector_field(model, s, u), np.asarray(x, dtype=float), h)


def check_finite(x, t):
    """Divergence guard shared by the scalar and batched integration loops."""
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise NonFiniteState(f"integration diverged at t={t:g}")


def num_steps(tf, dt):
    """Number of integration steps, requiring tf/dt to be (nearly) integral."""
    if tf <= 0 or dt <= 0:
        raise ValueError("tf and dt must be positive")
    ratio = tf / dt
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"tf={tf} must be an integer multiple of dt={dt}")
    return n


def simulate(model, x0, policy, tf, dt=DEFAULT_DT):
    """Integrate the closed- or open-loop system and return the sampled Trajectory.

    Raises NonFiniteState when any state component leaves the divergence guard
    box (|component| > 1e6) or becomes non-finite.
    """
    n = num_steps(tf, dt)
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (model.state_dim,):
        raise ValueError(f"x0 must have shape ({model.state_dim},)")
    check_finite(x, 0.0)
    states = np.empty((n + 1, model.state_dim))
    controls = np.empty(n + 1)
    states[0] = x
    for k in range(n):
        t = k * dt
        u = float(policy.control(t, x))
        controls[k] = u
        x = rk4_step(model, x, u, dt)
        check_finite(x, (k + 1) * dt)
        states[k + 1] = x
    controls[n] = float(policy.control(n * dt, x))
    return Trajectory(dt=dt, states=states, controls=controls)


def write_trajectory_csv(traj, path):
    """Export a trajectory as CSV with 15 significant digits."""
    n_mach = traj.states.shape[1] // 2
    cols = []
    for i in range(1, n_mach + 1):
        cols += [f"delta{i}", f"domega{i}"]
    header = "t," + ",".join(cols) + ",u"
    data = np.column_stack([traj.times, traj.states, traj.controls])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.15g")
