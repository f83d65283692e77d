"""Optimal piecewise-constant ESS schedules by brute-force enumeration.

Tiny instances are solved exactly by exhaustive enumeration of all level
combinations; larger ones by deterministic coordinate descent (sweeping the
intervals, holding the others fixed). Candidate evaluation runs through a
batched integrator that performs the same elementwise arithmetic as
:func:`microstab.simulate.simulate`, so batch costs equal scalar costs bit
for bit and search results are reproducible regardless of chunking.
"""

import math
from dataclasses import dataclass

import numpy as np

from .cost import running_cost, deviation_sumsq, trapezoid_cost, trajectory_cost
from .errors import BudgetExceeded, NonFiniteState
from .model import vector_field
from .simulate import (
    DIVERGENCE_LIMIT,
    SchedulePolicy,
    num_steps,
    rk4_generic,
    simulate,
)

DEFAULT_U_MAX = 0.2
DEFAULT_BUDGET = 10**6
DEFAULT_MAX_SWEEPS = 20
CHUNK_SIZE = 16384


def default_levels(u_max=DEFAULT_U_MAX):
    return (-u_max, -u_max / 2.0, 0.0, u_max / 2.0, u_max)


@dataclass(frozen=True)
class ControlGrid:
    """Admissible control box, discrete level set, and time partition."""

    u_max: float = DEFAULT_U_MAX
    levels: tuple = None
    num_intervals: int = 15
    tf: float = 15.0

    def __post_init__(self):
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")
        levels = default_levels(self.u_max) if self.levels is None else tuple(
            float(v) for v in self.levels
        )
        if not levels:
            raise ValueError("levels must be nonempty")
        if list(levels) != sorted(levels):
            raise ValueError("levels must be sorted ascending")
        if 0.0 not in levels:
            raise ValueError("levels must contain 0")
        if min(levels) < -self.u_max or max(levels) > self.u_max:
            raise ValueError("levels must lie within the control box")
        if self.num_intervals < 1:
            raise ValueError("num_intervals must be >= 1")
        if self.tf <= 0:
            raise ValueError("tf must be positive")
        object.__setattr__(self, "levels", levels)

    @property
    def interval_length(self):
        return self.tf / self.num_intervals

    def steps_per_interval(self, dt):
        spi = round(self.interval_length / dt)
        if spi < 1 or abs(self.interval_length - spi * dt) > 1e-9 * max(1.0, self.interval_length):
            raise ValueError(
                f"interval length {self.interval_length} must be an integer multiple of dt={dt}"
            )
        return spi


@dataclass(frozen=True)
class ControlSchedule:
    """One control value per interval over [0, tf]."""

    grid: ControlGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.num_intervals,):
            raise ValueError("schedule must provide one value per interval")
        if np.any(np.abs(values) > self.grid.u_max + 1e-12):
            raise ValueError("schedule values must lie within the control box")

    def policy(self):
        return SchedulePolicy(self.values, self.grid.interval_length)


@dataclass(frozen=True)
class SearchResult:
    schedule: ControlSchedule
    cost: float
    evaluations: int
    method: str
    sweep_costs: tuple = ()  # coordinate descent: evaluated cost after each sweep


def schedule_cost(model, x0, schedule, weights, eq, dt):
    """Cost of simulating a schedule; +inf when the simulation diverges."""
    try:
        traj = simulate(model, x0, schedule.policy(), schedule.grid.tf, dt)
    except NonFiniteState:
        return math.inf
    return trajectory_cost(weights, traj, eq)


def evaluate_schedules(model, x0, values, grid, weights, eq, dt, chunk_size=CHUNK_SIZE):
    """Costs of many candidate schedules, batched.

    ``values`` has shape (n, m); ``x0`` is one shared state of shape (2N,) or
    per-candidate states of shape (n, 2N). Diverging candidates get +inf.
    Per-candidate results are bit-identical to :func:`schedule_cost`.
    """
    values = np.ascontiguousarray(values, dtype=float)
    n_cand, m = values.shape
    if m != grid.num_intervals:
        raise ValueError("values must have one column per interval")
    spi = grid.steps_per_interval(dt)
    n_steps = num_steps(grid.tf, dt)
    x0 = np.asarray(x0, dtype=float)
    shared_x0 = x0.ndim == 1
    if not shared_x0 and x0.shape[0] != n_cand:
        raise ValueError("per-candidate x0 must match the number of candidates")
    costs = np.empty(n_cand)
    eq_state = eq.state
    for lo in range(0, n_cand, chunk_size):
        hi = min(lo + chunk_size, n_cand)
        c = hi - lo
        vals_t = np.ascontiguousarray(values[lo:hi].T)  # (m, c): row per interval
        if shared_x0:
            x = np.repeat(x0[None, :], c, axis=0)
        else:
            x = x0[lo:hi].copy()
        dead = ~(np.max(np.abs(x), axis=1) <= DIVERGENCE_LIMIT)
        if dead.any():
            x[dead] = eq_state
        u = vals_t[0]
        first = running_cost(weights, x, eq, u)
        acc = first.copy()
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(1, n_steps + 1):
                x = rk4_generic(lambda s: vector_field(model, s, u), x, dt)
                newly = ~(np.max(np.abs(x), axis=1) <= DIVERGENCE_LIMIT)
                if newly.any():
                    dead |= newly
                    x[newly] = eq_state
                u = vals_t[min(k // spi, m - 1)]
                step_cost = running_cost(weights, x, eq, u)
                acc += step_cost
        last = step_cost
        term = deviation_sumsq(x, eq_state) if weights.terminal_weight != 0.0 else 0.0
        chunk_costs = trapezoid_cost(dt, acc, first, last, term, weights)
        chunk_costs[dead] = np.inf
        costs[lo:hi] = chunk_costs
    return costs


def _enumerate_values(levels, m, lo, hi):
    """Rows lo..hi of the lexicographic enumeration of level combinations."""
    levels = np.asarray(levels)
    n_levels = len(levels)
    idx = np.arange(lo, hi, dtype=np.int64)
    digits = np.empty((hi - lo, m), dtype=np.int64)
    for j in range(m):
        digits[:, j] = (idx // n_levels ** (m - 1 - j)) % n_levels
    return levels[digits]


def exhaustive_search(model, x0, grid, weights, eq, dt, budget=DEFAULT_BUDGET):
    """Global minimum over all level combinations.

    Ties are broken toward the lexicographically smallest value sequence
    (levels ascending, first interval most significant), so the result is
    independent of evaluation order and chunking. Raises BudgetExceeded when
    |levels|^m exceeds the budget.
    """
    n_levels = len(grid.levels)
    total = n_levels**grid.num_intervals
    if total > budget:
        raise BudgetExceeded(
            f"{n_levels}^{grid.num_intervals} = {total} schedules exceed budget {budget}"
        )
    best_cost = math.inf
    best_idx = -1
    for lo in range(0, total, CHUNK_SIZE):
        hi = min(lo + CHUNK_SIZE, total)
        vals = _enumerate_values(grid.levels, grid.num_intervals, lo, hi)
        costs = evaluate_schedules(model, x0, vals, grid, weights, eq, dt)
        pick = int(np.argmin(costs))  # first occurrence: lexicographically smallest
        if costs[pick] < best_cost:
            best_cost = float(costs[pick])
            best_idx = lo + pick
    if not math.isfinite(best_cost):
        best_idx = 0  # every candidate diverged; report the first deterministically
    values = _enumerate_values(grid.levels, grid.num_intervals, best_idx, best_idx + 1)[0]
    schedule = ControlSchedule(grid=grid, values=values)
    cost = schedule_cost(model, x0, schedule, weights, eq, dt)
    return SearchResult(schedule=schedule, cost=cost, evaluations=total, method="exhaustive")


def _candidate_rows(values, j, candidates):
    rows = np.repeat(values[None, :], len(candidates), axis=0)
    rows[:, j] = candidates
    return rows


def coordinate_descent(
    model, x0, grid, weights, eq, dt, init=None, max_sweeps=DEFAULT_MAX_SWEEPS
):
    """Deterministic per-interval improvement until a sweep changes nothing.

    At each interval the level minimizing total cost (others fixed) is chosen,
    ties resolving to the smaller level index. The current value is kept as an
    extra candidate when it lies off the level set (possible for user-supplied
    inits), which guarantees the final cost never exceeds the init's cost.
    """
    m = grid.num_intervals
    if init is None:
        values = np.zeros(m)
    else:
        if init.grid.num_intervals != m:
            raise ValueError("init schedule must match the grid partition")
        values = np.asarray(init.values, dtype=float).copy()
    levels = np.asarray(grid.levels)
    evaluations = 0
    sweep_costs = []
    last_cost = math.inf
    for _ in range(max_sweeps):
        changed = False
        for j in range(m):
            candidates = levels
            if values[j] not in levels:
                candidates = np.append(levels, values[j])
            rows = _candidate_rows(values, j, candidates)
            costs = evaluate_schedules(model, x0, rows, grid, weights, eq, dt)
            evaluations += len(candidates)
            pick = int(np.argmin(costs))
            if candidates[pick] != values[j]:
                changed = True
                values[j] = candidates[pick]
            last_cost = float(costs[pick])
        sweep_costs.append(last_cost)
        if not changed:
            break
    schedule = ControlSchedule(grid=grid, values=values)
    cost = schedule_cost(model, x0, schedule, weights, eq, dt)
    return SearchResult(
        schedule=schedule,
        cost=cost,
        evaluations=evaluations,
        method="coordinate_descent",
        sweep_costs=tuple(sweep_costs),
    )


def coordinate_descent_batch(
    model, x0s, grid, weights, eq, dt, max_sweeps=DEFAULT_MAX_SWEEPS
):
    """Lockstep coordinate descent over many initial states (all-zero inits).

    Runs the same per-case decisions as :func:`coordinate_descent` but batches
    every (interval, level) evaluation across cases. Returns the per-case
    schedule values (C, m) and final costs (C,).
    """
    x0s = np.asarray(x0s, dtype=float)
    n_cases = x0s.shape[0]
    m = grid.num_intervals
    levels = np.asarray(grid.levels)
    n_levels = len(levels)
    values = np.zeros((n_cases, m))
    x0_rep = np.repeat(x0s, n_levels, axis=0)
    for _ in range(max_sweeps):
        changed = False
        for j in range(m):
            rows = np.repeat(values, n_levels, axis=0)
            rows[:, j] = np.tile(levels, n_cases)
            costs = evaluate_schedules(model, x0_rep, rows, grid, weights, eq, dt)
            picks = np.argmin(costs.reshape(n_cases, n_levels), axis=1)
            new_col = levels[picks]
            if np.any(new_col != values[:, j]):
                changed = True
            values[:, j] = new_col
        if not changed:
            break
    final_costs = evaluate_schedules(model, x0s, values, grid, weights, eq, dt)
    return values, final_costs


def upsample_schedule(parent, grid):
    """Hold each parent interval's value over the child intervals it covers."""
    child_len = grid.interval_length
    parent_len = parent.grid.interval_length
    values = np.empty(grid.num_intervals)
    for i in range(grid.num_intervals):
        idx = int(np.floor(i * child_len / parent_len + 1e-9))
        values[i] = parent.values[min(idx, parent.grid.num_intervals - 1)]
    return ControlSchedule(grid=grid, values=values)


def interval_refinement_study(
    model,
    x0,
    weights,
    eq,
    interval_lengths,
    dt,
    levels=None,
    u_max=DEFAULT_U_MAX,
    tf=15.0,
    budget=DEFAULT_BUDGET,
    max_sweeps=DEFAULT_MAX_SWEEPS,
):
    """Search at successively shorter intervals, seeding each run from the last.

    Returns a list of (interval_length, SearchResult). Exhaustive enumeration
    is used whenever it fits the budget; otherwise coordinate descent starts
    from the previous (coarser) solution held constant over the finer grid.
    """
    results = []
    prev = None
    for length in interval_lengths:
        m = round(tf / length)
        if m < 1 or abs(tf - m * length) > 1e-9 * tf:
            raise ValueError(f"interval length {length} must divide tf={tf}")
        grid = ControlGrid(u_max=u_max, levels=levels, num_intervals=m, tf=tf)
        grid.steps_per_interval(dt)  # validates divisibility by dt
        n_levels = len(grid.levels)
        if n_levels**m <= budget:
            res = exhaustive_search(model, x0, grid, weights, eq, dt, budget=budget)
        else:
            init = None if prev is None else upsample_schedule(prev, grid)
            res = coordinate_descent(
                model, x0, grid, weights, eq, dt, init=init, max_sweeps=max_sweeps
            )
        results.append((length, res))
        prev = res.schedule
    return results
