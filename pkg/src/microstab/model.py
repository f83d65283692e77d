"""Classical-model microgrid dynamics.

Two synchronous machines (a diesel unit and an emulated-inertia unit) swing
against an infinite bus representing the main grid. The state vector is
``[delta1, domega1, delta2, domega2]``: rotor angles in rad relative to the
infinite bus and speed deviations in rad/s. An energy-storage system injects
real power ``u`` (per unit) into one machine's power balance.

All kernel functions accept states with arbitrary leading batch dimensions
``(..., 2N)`` and apply identical elementwise arithmetic, so scalar and
batched simulations produce bit-identical samples.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import NoConvergence, SingularJacobian

OMEGA0_60HZ = 2.0 * math.pi * 60.0

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


@dataclass(frozen=True)
class MachineParams:
    """Classical-model parameters of one synchronous machine (per unit, H in s)."""

    inertia_h: float
    damping_kd: float
    mech_power_pm: float
    emf_e: float

    def __post_init__(self):
        if not self.inertia_h > 0:
            raise ValueError(f"inertia_h must be positive, got {self.inertia_h}")
        if self.damping_kd < 0:
            raise ValueError(f"damping_kd must be nonnegative, got {self.damping_kd}")
        if not self.emf_e > 0:
            raise ValueError(f"emf_e must be positive, got {self.emf_e}")


@dataclass(frozen=True)
class ReducedNetwork:
    """Admittance coupling between machine internal buses and the infinite bus.

    ``conductance_g`` and ``susceptance_b`` are symmetric (N+1)x(N+1) per-unit
    matrices; the last index is the infinite bus (fixed angle 0, voltage 1).
    """

    conductance_g: np.ndarray
    susceptance_b: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.conductance_g, dtype=float)
        b = np.asarray(self.susceptance_b, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape != b.shape:
            raise ValueError("G and B must be square matrices of equal shape")
        if not np.allclose(g, g.T, atol=1e-12):
            raise ValueError("conductance matrix must be symmetric")
        if not np.allclose(b, b.T, atol=1e-12):
            raise ValueError("susceptance matrix must be symmetric")
        if np.any(np.diag(g) < 0):
            raise ValueError("diagonal conductances must be nonnegative")
        object.__setattr__(self, "conductance_g", g)
        object.__setattr__(self, "susceptance_b", b)


@dataclass(frozen=True)
class MicrogridModel:
    """Machines plus reduced network; owns the swing-equation vector field."""

    machines: tuple
    network: ReducedNetwork
    omega0: float = OMEGA0_60HZ
    ess_bus: int = 1  # 1-based machine index receiving the ESS injection

    def __post_init__(self):
        n = len(self.machines)
        if n < 1:
            raise ValueError("at least one machine required")
        if self.network.conductance_g.shape[0] != n + 1:
            raise ValueError("network must have one node per machine plus the infinite bus")
        if not 1 <= self.ess_bus <= n:
            raise ValueError(f"ess_bus must be in 1..{n}, got {self.ess_bus}")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        object.__setattr__(self, "machines", tuple(self.machines))
        # precomputed kernel constants
        e = np.array([m.emf_e for m in self.machines])
        g = self.network.conductance_g
        b = self.network.susceptance_b
        volt = np.append(e, 1.0)  # infinite bus voltage
        pair_terms = []
        for i in range(n):
            terms = []
            for j in range(n + 1):
                if j == i:
                    continue
                terms.append((j, e[i] * volt[j] * g[i, j], e[i] * volt[j] * b[i, j]))
            pair_terms.append(tuple(terms))
        object.__setattr__(self, "_e", e)
        object.__setattr__(self, "_pm", np.array([m.mech_power_pm for m in self.machines]))
        object.__setattr__(self, "_kd", np.array([m.damping_kd for m in self.machines]))
        object.__setattr__(self, "_self_g", e * e * np.diag(g)[:n])
        object.__setattr__(self, "_pair_terms", tuple(pair_terms))
        object.__setattr__(
            self, "_swing_gain", self.omega0 / (2.0 * np.array([m.inertia_h for m in self.machines]))
        )

    @property
    def n_machines(self):
        return len(self.machines)

    @property
    def state_dim(self):
        return 2 * len(self.machines)

    @property
    def ess_index(self):
        """0-based machine index of the ESS injection."""
        return self.ess_bus - 1


@dataclass(frozen=True)
class Equilibrium:
    """Stationary point: machine angles with zero speed deviations."""

    state: np.ndarray
    residual: float

    def __post_init__(self):
        state = np.asarray(self.state, dtype=float)
        object.__setattr__(self, "state", state)
        if np.any(state[1::2] != 0.0):
            raise ValueError("equilibrium speed deviations must be exactly zero")
        if not self.residual < NEWTON_TOL:
            raise ValueError(f"equilibrium residual {self.residual} exceeds {NEWTON_TOL}")

    @property
    def angles(self):
        return self.state[0::2]


def _pe_from_trig(model, sins, coss):
    """Electrical power of each machine from per-node sin/cos values.

    ``sins``/``coss`` are length-N sequences of broadcast-compatible arrays for
    the machine angles (the infinite bus contributes sin 0, cos 1). Returns a
    list of N arrays. Term order is fixed so results are reproducible across
    batch shapes.
    """
    n = model.n_machines
    bus = n
    out = []
    for i in range(n):
        acc = model._self_g[i]
        si, ci = sins[i], coss[i]
        for j, eg, eb in model._pair_terms[i]:
            if j == bus:
                cd, sd = ci, si
            else:
                sj, cj = sins[j], coss[j]
                cd = ci * cj + si * sj
                sd = si * cj - ci * sj
            if eg != 0.0 and eb != 0.0:
                acc = acc + (eg * cd + eb * sd)
            elif eg != 0.0:
                acc = acc + eg * cd
            elif eb != 0.0:
                acc = acc + eb * sd
        out.append(acc)
    return out


def electrical_power(model, angles):
    """Per-machine electrical power output at the given rotor angles.

    ``angles`` has shape (..., N); returns shape (..., N). The infinite bus
    sits at angle 0 with voltage 1 pu.
    """
    angles = np.asarray(angles, dtype=float)
    sins = [np.sin(angles[..., i]) for i in range(model.n_machines)]
    coss = [np.cos(angles[..., i]) for i in range(model.n_machines)]
    pe = _pe_from_trig(model, sins, coss)
    # fully decoupled machines leave scalar accumulators; broadcast before stacking
    shape = angles[..., 0].shape
    return np.stack([np.broadcast_to(np.asarray(p, dtype=float), shape) for p in pe], axis=-1)


def vector_field(model, x, u):
    """Swing-equation time derivative of the state.

    ``x`` has shape (..., 2N); ``u`` is the ESS injection in pu, scalar or
    shape (...,). The injection enters exactly one machine's power balance.
    """
    x = np.asarray(x, dtype=float)
    n = model.n_machines
    sins = [np.sin(x[..., 2 * i]) for i in range(n)]
    coss = [np.cos(x[..., 2 * i]) for i in range(n)]
    pe = _pe_from_trig(model, sins, coss)
    out = np.empty_like(x)
    for i in range(n):
        omega = x[..., 2 * i + 1]
        out[..., 2 * i] = omega
        if i == model.ess_index:
            accel = model._pm[i] - pe[i] + u - model._kd[i] * omega / model.omega0
        else:
            accel = model._pm[i] - pe[i] - model._kd[i] * omega / model.omega0
        out[..., 2 * i + 1] = model._swing_gain[i] * accel
    return out


def _pe_jacobian(model, angles):
    """Analytic d(Pe)/d(delta), an NxN matrix at the given machine angles."""
    n = model.n_machines
    bus = n
    jac = np.zeros((n, n))
    for i in range(n):
        for j, eg, eb in model._pair_terms[i]:
            diff = angles[i] - (0.0 if j == bus else angles[j])
            dterm = -eg * math.sin(diff) + eb * math.cos(diff)
            jac[i, i] += dterm
            if j != bus:
                jac[i, j] = -dterm
    return jac


def find_equilibrium(model, guess=None):
    """Solve ``Pm = Pe(delta)`` for the machine angles by Newton iteration.

    Raises NoConvergence if the mismatch does not fall below ``NEWTON_TOL``
    within ``NEWTON_MAX_ITER`` iterations (infeasible mechanical power) and
    SingularJacobian at a power-transfer limit.
    """
    n = model.n_machines
    angles = np.zeros(n) if guess is None else np.array(guess, dtype=float)
    if angles.shape != (n,) or not np.all(np.isfinite(angles)):
        raise ValueError("guess must be a finite length-N angle vector")
    for _ in range(NEWTON_MAX_ITER):
        mismatch = model._pm - electrical_power(model, angles)
        if np.max(np.abs(mismatch)) < NEWTON_TOL:
            state = np.zeros(2 * n)
            state[0::2] = angles
            return Equilibrium(state=state, residual=float(np.max(np.abs(mismatch))))
        jac = _pe_jacobian(model, angles)
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("power-flow Jacobian is singular") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("power-flow Jacobian is numerically singular")
        angles = angles + step
    raise NoConvergence(
        f"equilibrium Newton iteration did not converge in {NEWTON_MAX_ITER} steps"
    )


def linearize(model, eq):
    """Analytic Jacobians (A, B) of the vector field at an equilibrium.

    State order is (delta1, domega1, delta2, domega2, ...); B is 2N x 1 with
    its only nonzero entry at the ESS machine's speed row.
    """
    n = model.n_machines
    pe_jac = _pe_jacobian(model, eq.angles)
    a = np.zeros((2 * n, 2 * n))
    for i in range(n):
        a[2 * i, 2 * i + 1] = 1.0
        for j in range(n):
            a[2 * i + 1, 2 * j] = -model._swing_gain[i] * pe_jac[i, j]
        a[2 * i + 1, 2 * i + 1] = -model._swing_gain[i] * model._kd[i] / model.omega0
    b = np.zeros((2 * n, 1))
    b[2 * model.ess_index + 1, 0] = model._swing_gain[model.ess_index]
    return a, b


def default_model():
    """Desk-scale two-machine model: lossless ties, 60 Hz base."""
    b = np.array(
        [
            [0.0, 2.0, 5.0],
            [2.0, 0.0, 5.0],
            [5.0, 5.0, 0.0],
        ]
    )
    g = np.zeros((3, 3))
    return MicrogridModel(
        machines=(
            MachineParams(inertia_h=6.5, damping_kd=2.0, mech_power_pm=0.6, emf_e=1.05),
            MachineParams(inertia_h=3.0, damping_kd=2.0, mech_power_pm=0.4, emf_e=1.05),
        ),
        network=ReducedNetwork(conductance_g=g, susceptance_b=b),
    )


def offset_state(eq, ddelta, ddomega=None):
    """Equilibrium state displaced by per-machine angle (rad) and speed (rad/s) offsets."""
    ddelta = np.atleast_1d(np.asarray(ddelta, dtype=float))
    x = eq.state.copy()
    x[0::2] += ddelta
    if ddomega is not None:
        x[1::2] += np.atleast_1d(np.asarray(ddomega, dtype=float))
    return x
