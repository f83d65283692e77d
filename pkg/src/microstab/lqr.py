"""Infinite-horizon LQR synthesis for the linearized microgrid.

The continuous algebraic Riccati equation is solved by Kleinman's Newton
iteration: each step solves a Lyapunov equation exactly through the
Kronecker-sum linear system, which is cheap at this state dimension and
keeps the package dependency-free.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NoStabilizingSeed, SingularSystem
from .simulate import LinearFeedbackPolicy

KLEINMAN_TOL = 1e-12
KLEINMAN_MAX_ITER = 100
RESIDUAL_TOL = 1e-8


def _sym(m):
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class LqrProblem:
    """Quadratic regulator data: dynamics (a, b) and cost (q, r, n_cross)."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    n_cross: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        q = np.asarray(self.q, dtype=float)
        r = np.atleast_2d(np.asarray(self.r, dtype=float))
        n_cross = self.n_cross
        n_cross = np.zeros((b.shape[0], b.shape[1])) if n_cross is None else np.asarray(
            n_cross, dtype=float
        ).reshape(b.shape)
        dim = a.shape[0]
        if a.shape != (dim, dim) or b.shape[0] != dim or q.shape != (dim, dim):
            raise ValueError("inconsistent LQR matrix shapes")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.any(np.linalg.eigvalsh(_sym(q)) < -1e-10):
            raise ValueError("Q must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(_sym(r)) <= 0):
            raise ValueError("R must be positive definite")
        for name, val in (("a", a), ("b", b), ("q", q), ("r", r), ("n_cross", n_cross)):
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class LqrSolution:
    """Stabilizing Riccati solution and feedback gain."""

    p: np.ndarray
    gain: np.ndarray  # (m, n); u = -gain @ (x - x_eq)
    riccati_residual: float
    iterations: int


def weights_to_lqr(weights, a, b):
    """Map the running-cost weights onto LQR matrices.

    Q = diag(w1, w2, w1, w2, ...) in the interleaved (angle, speed) state
    order, R = [w3], no cross term. The state is implicitly the deviation
    from equilibrium, matching the angle-deviation form of the running cost.
    """
    dim = np.asarray(a).shape[0]
    diag = np.empty(dim)
    diag[0::2] = weights.w1
    diag[1::2] = weights.w2
    return LqrProblem(a=a, b=b, q=np.diag(diag), r=np.array([[weights.w3]]))


def solve_lyapunov(f, w):
    """Solve ``F' X + X F + W = 0`` for symmetric X via the Kronecker system.

    Requires F Hurwitz; raises SingularSystem otherwise (or on eigenvalue-sum
    degeneracy, which Hurwitz F excludes).
    """
    f = np.asarray(f, dtype=float)
    w = np.asarray(w, dtype=float)
    dim = f.shape[0]
    eigs = np.linalg.eigvals(f)
    if np.max(eigs.real) >= 0.0:
        raise SingularSystem("Lyapunov coefficient matrix is not Hurwitz")
    lhs = np.kron(np.eye(dim), f.T) + np.kron(f.T, np.eye(dim))
    try:
        vec = np.linalg.solve(lhs, -w.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem("Lyapunov system is singular") from exc
    return _sym(vec.reshape((dim, dim), order="F"))


def _spectral_abscissa(m):
    return float(np.max(np.linalg.eigvals(m).real))


def _stabilizing_seed(a, b):
    """Initial stabilizing gain: scan injection-aligned gains K = alpha * B'."""
    candidates = [0.0]
    for k in range(-3, 10):
        candidates += [10.0**k, -(10.0**k)]
    for alpha in candidates:
        gain = alpha * b.T
        if _spectral_abscissa(a - b @ gain) < 0.0:
            return gain
    raise NoStabilizingSeed("no stabilizing seed gain along the injection direction")


def riccati_residual(prob, p):
    """Max-abs residual of the continuous algebraic Riccati equation."""
    a, b, q, r, n_cross = prob.a, prob.b, prob.q, prob.r, prob.n_cross
    gain_term = (p @ b + n_cross) @ np.linalg.solve(r, b.T @ p + n_cross.T)
    return float(np.max(np.abs(a.T @ p + p @ a - gain_term + q)))


def solve_care(prob):
    """Stabilizing CARE solution by Kleinman iteration.

    Each iterate solves a Lyapunov equation on the current closed loop; the
    gain sequence converges quadratically. Raises NoConvergence if the gain
    update does not fall below 1e-12 within 100 iterations.
    """
    a, b, q, r, n_cross = prob.a, prob.b, prob.q, prob.r, prob.n_cross
    gain = _stabilizing_seed(a, b)
    p = None
    for it in range(1, KLEINMAN_MAX_ITER + 1):
        closed = a - b @ gain
        w = q + gain.T @ r @ gain - n_cross @ gain - gain.T @ n_cross.T
        p = solve_lyapunov(closed, w)
        new_gain = np.linalg.solve(r, b.T @ p + n_cross.T)
        delta = float(np.max(np.abs(new_gain - gain)))
        gain = new_gain
        if delta < KLEINMAN_TOL:
            residual = riccati_residual(prob, p)
            if _spectral_abscissa(a - b @ gain) >= 0.0:
                raise NoConvergence("converged Riccati iterate is not stabilizing")
            return LqrSolution(p=p, gain=gain, riccati_residual=residual, iterations=it)
    raise NoConvergence(f"Kleinman iteration did not converge in {KLEINMAN_MAX_ITER} steps")


def lqr_policy(sol, eq, u_max):
    """Feedback policy ``u = -K (x - x_eq)`` saturated to the admissible box."""
    return LinearFeedbackPolicy(gain=sol.gain, equilibrium=eq, u_max=u_max)
