"""Quadratic running cost and trajectory cost.

The running cost penalizes squared angle deviation from equilibrium, squared
speed deviation, and squared control effort. Trajectory cost integrates it by
the trapezoidal rule over the uniform sample grid, plus an optional terminal
penalty on the final state deviation.

Accumulation order is fixed (left-to-right over samples) so that the batched
schedule evaluator in :mod:`microstab.search` reproduces these values bit for
bit.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostWeights:
    """Weights of the three quadratic penalty terms plus terminal weight."""

    w1: float = 1.0  # angle deviation, rad^-2
    w2: float = 1.0  # speed deviation, (rad/s)^-2
    w3: float = 0.5  # control effort, pu^-2
    terminal_weight: float = 0.0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ValueError("cost weights must be nonnegative")
        if self.w1 == 0 and self.w2 == 0 and self.w3 == 0:
            raise ValueError("at least one cost weight must be positive")
        if self.terminal_weight < 0:
            raise ValueError("terminal weight must be nonnegative")


def deviation_sumsq(x, eq_state):
    """Sum of squared state deviations from equilibrium, shape (...,)."""
    dim = len(eq_state)
    acc = (x[..., 0] - eq_state[0]) ** 2
    for c in range(1, dim):
        acc = acc + (x[..., c] - eq_state[c]) ** 2
    return acc


def running_cost(weights, x, eq, u):
    """Instantaneous quadratic cost at state ``x`` (shape (..., 2N)) and control ``u``.

    Angle terms are measured against the equilibrium angles; speed deviations
    are penalized directly (their equilibrium value is zero by definition).
    """
    eq_state = eq.state
    n = len(eq_state) // 2
    ang = (x[..., 0] - eq_state[0]) ** 2
    for i in range(1, n):
        ang = ang + (x[..., 2 * i] - eq_state[2 * i]) ** 2
    spd = x[..., 1] ** 2
    for i in range(1, n):
        spd = spd + x[..., 2 * i + 1] ** 2
    return weights.w1 * ang + weights.w2 * spd + weights.w3 * (u * u)


def trapezoid_cost(dt, running_sum, first, last, terminal_sumsq, weights):
    """Combine a left-to-right running-cost sum into the trajectory cost.

    ``running_sum`` is the plain sequential sum of all sampled running costs;
    ``first``/``last`` are the endpoint samples. Shared by the scalar and
    batched evaluation paths so both produce identical floats.
    """
    base = dt * (running_sum - 0.5 * (first + last))
    return base + weights.terminal_weight * terminal_sumsq


def trajectory_cost(weights, traj, eq):
    """Trapezoidal integral of the running cost over a trajectory, plus terminal penalty."""
    integrand = running_cost(weights, traj.states, eq, traj.controls)
    total = 0.0
    for v in integrand.tolist():
        total += v
    term = deviation_sumsq(traj.states[-1], eq.state) if weights.terminal_weight != 0.0 else 0.0
    return float(
        trapezoid_cost(traj.dt, total, float(integrand[0]), float(integrand[-1]), term, weights)
    )
