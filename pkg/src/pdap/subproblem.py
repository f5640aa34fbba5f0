"""Group-sparse coefficient problem on a fixed support.

    min_u  1/2 ||sum_i A(x_i) u_i - y_d||^2 + beta * sum_i ||u_i||_H

solved by a semismooth Newton method on the fixed-point residual theta of the
proximal gradient map. Steps are globalized by a line search on the objective
and followed by one proximal gradient step (which fixes exact zeros); FISTA
steps serve as a fallback when no Newton step is acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .objective import LinearCost, ProblemSpec, UnsupportedCost, prox_group_blocks
from .operator import assemble

MAX_INNER = 500
# blocks with norm <= _SMALL_BLOCK * ||theta||_inf count as nearly zero
_SMALL_BLOCK = 1e3


class MaxInnerIterations(RuntimeError):
    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


class NonfiniteObjective(FloatingPointError):
    pass


@dataclass
class ActiveSet:
    points: np.ndarray
    assembled: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, kernel, points) -> "ActiveSet":
        points = np.asarray(points, dtype=float).reshape(-1, kernel.d)
        return cls(points, assemble(kernel, points))

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SubproblemResult:
    coeffs: np.ndarray
    kkt_residual: float
    inner_iters: int
    solver_path: str
    fista_steps: int = 0


class _Quadratic:
    """f(u) = 1/2 ||A u - b||^2 with u flattened block-wise."""

    def __init__(self, A: np.ndarray, b: np.ndarray, dim_h: int, beta: float):
        self.A, self.b, self.h, self.beta = A, b, dim_h, beta
        self.H = A.T @ A
        self.Atb = A.T @ b
        L = float(np.linalg.norm(A, 2)) ** 2 if A.size else 0.0
        self.tau = 1.0 / L if L > 0 else 1.0

    def grad(self, u):
        return self.A.T @ (self.A @ u - self.b)

    def objective(self, u):
        r = self.A @ u - self.b
        return 0.5 * float(r @ r) + self.beta * float(np.sum(np.linalg.norm(u.reshape(-1, self.h), axis=1)))

    def prox_step(self, u, tau=None):
        tau = self.tau if tau is None else tau
        v = u - tau * self.grad(u)
        return prox_group_blocks(v.reshape(-1, self.h), tau * self.beta).ravel()

    def directional_derivative(self, u, d):
        """One-sided derivative of the objective at u along d."""
        U, D = u.reshape(-1, self.h), d.reshape(-1, self.h)
        n = np.linalg.norm(U, axis=1)
        nz = n > 0
        val = float(self.grad(u) @ d)
        val += self.beta * float(np.sum(np.einsum("ij,ij->i", U[nz], D[nz]) / n[nz]))
        val += self.beta * float(np.sum(np.linalg.norm(D[~nz], axis=1)))
        return val

    def theta(self, u):
        return u - self.prox_step(u)

    def jacobian(self, u, inactive=()):
        """An element of the generalized Jacobian of theta at u.

        Blocks listed in ``inactive`` use the zero block of the prox Jacobian
        even when the prox is differentiable there.
        """
        n = u.size
        v = (u - self.tau * self.grad(u)).reshape(-1, self.h)
        tb = self.tau * self.beta
        D = np.zeros((n, n))
        for i, vi in enumerate(v):
            nv = np.linalg.norm(vi)
            if nv > tb and i not in inactive:
                s = slice(i * self.h, (i + 1) * self.h)
                D[s, s] = np.eye(self.h) - (tb / nv) * (np.eye(self.h) - np.outer(vi, vi) / nv**2)
        return np.eye(n) - D @ (np.eye(n) - self.tau * self.H)


def _fista(q: _Quadratic, u: np.ndarray, steps: int) -> np.ndarray:
    x_prev = u.copy()
    z = u.copy()
    t = 1.0
    for _ in range(steps):
        x = q.prox_step(z)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x + ((t - 1.0) / t_next) * (x - x_prev)
        x_prev, t = x, t_next
    return x_prev


def default_tol(prob: ProblemSpec) -> float:
    return 1e-13 * (1.0 + float(np.linalg.norm(prob.loss.y_d)))


def solve_coefficients(
    prob: ProblemSpec,
    active: ActiveSet,
    warm: np.ndarray | None = None,
    tol: float | None = None,
    max_iter: int = MAX_INNER,
    fista_batch: int = 25,
) -> SubproblemResult:
    """Solve the coefficient problem on ``active`` to ||theta||_inf <= tol."""
    if not isinstance(prob.cost, LinearCost):
        raise UnsupportedCost("coefficient subproblem requires the linear cost")
    h = prob.kernel.dim_h
    N = len(active)
    tol = default_tol(prob) if tol is None else tol
    if N == 0:
        return SubproblemResult(np.zeros((0, h)), 0.0, 0, "newton")
    q = _Quadratic(active.assembled, prob.loss.y_d, h, prob.cost.beta)
    u = np.zeros(N * h) if warm is None else np.asarray(warm, dtype=float).reshape(-1).copy()
    if u.size != N * h:
        raise ValueError("warm start has the wrong shape")

    used_newton = used_fista = False
    fista_steps = 0
    theta = q.theta(u)
    res = float(np.max(np.abs(theta)))
    it = 0
    while res > tol:
        if it >= max_iter:
            final = _finish(q, u, h)
            raise MaxInnerIterations(
                f"subproblem not solved after {max_iter} iterations (residual {res:.3e})",
                SubproblemResult(final[0], final[1], it, _path(used_newton, used_fista), fista_steps),
            )
        it += 1
        t = _newton_step_length(q, u, theta)
        if t is not None:
            used_newton = True
            u = q.prox_step(u + t[0] * t[1])
        else:
            used_fista = True
            fista_steps += fista_batch
            fu = _fista(q, u, fista_batch)
            u = fu if q.objective(fu) <= q.objective(u) else q.prox_step(u)
        if not np.all(np.isfinite(u)):
            raise NonfiniteObjective("non-finite coefficients in subproblem")
        theta = q.theta(u)
        res = float(np.max(np.abs(theta)))
    coeffs, kkt = _finish(q, u, h)
    if not np.isfinite(q.objective(coeffs.ravel())):
        raise NonfiniteObjective("non-finite objective in subproblem")
    return SubproblemResult(coeffs, kkt, it, _path(used_newton, used_fista), fista_steps)


def _crossing_times(u: np.ndarray, d: np.ndarray, h: int) -> np.ndarray:
    """Per block, the t minimizing ||u_i + t d_i|| (inf where d_i = 0)."""
    U, D = u.reshape(-1, h), d.reshape(-1, h)
    dd = np.einsum("ij,ij->i", D, D)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -np.einsum("ij,ij->i", U, D) / dd
    return np.where(dd > 0, t, np.inf)


def _armijo_best(q: _Quadratic, u: np.ndarray, d: np.ndarray):
    """(objective, t) of the best Armijo point among halvings of 1 and block crossing times."""
    slope = q.directional_derivative(u, d)
    if not slope < 0:
        return None
    tc = _crossing_times(u, d, q.h)
    candidates = list(0.5 ** np.arange(60)) + list(tc[(tc > 0) & (tc < 1)])
    j0 = q.objective(u)
    best = None
    for t in candidates:
        val = q.objective(u + t * d)
        if val <= j0 + 1e-4 * t * slope and (best is None or val < best[0]):
            best = (val, t)
    return best


def _newton_step_length(q: _Quadratic, u: np.ndarray, theta: np.ndarray, max_trials: int = 5):
    """Semismooth Newton direction and an accepted step length, or None.

    The full step is taken whenever it shrinks ||theta|| by 0.9. Otherwise the
    step length is the best Armijo point (on the objective) among halvings of 1
    and the points where a block's norm is minimal along the direction, which
    lets clustered points hand over their mass in a single step.

    Blocks whose norm is of the order of the residual sit next to the kink of
    the prox; the Jacobian there is nearly singular and the direction pushes
    them through zero. Such blocks are switched to inactive and the direction
    recomputed; the best of the trial directions is returned.
    """
    inactive: set[int] = set()
    best = None
    norm_theta = np.linalg.norm(theta)
    res = float(np.max(np.abs(theta)))
    for _ in range(max_trials):
        J = q.jacobian(u, inactive)
        try:
            d = np.linalg.solve(J, -theta)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(J, -theta, rcond=None)[0]
        if not np.all(np.isfinite(d)):
            break
        if np.linalg.norm(q.theta(u + d)) <= 0.9 * norm_theta:
            return 1.0, d
        found = _armijo_best(q, u, d)
        if found is not None and (best is None or found[0] < best[0]):
            best = (found[0], found[1], d)
        tc = _crossing_times(u, d, q.h)
        small = np.linalg.norm(u.reshape(-1, q.h), axis=1) <= _SMALL_BLOCK * res
        crossing = set(np.flatnonzero((tc > 0) & (tc < 1) & small).tolist())
        if crossing <= inactive:
            break
        inactive |= crossing
    return None if best is None else (best[1], best[2])


def _path(newton: bool, fista: bool) -> str:
    if newton and fista:
        return "mixed"
    return "fista" if fista else "newton"


def _finish(q: _Quadratic, u: np.ndarray, h: int):
    """One proximal gradient step: exact zeros and dual-aligned directions."""
    u1 = q.prox_step(u)
    if np.linalg.norm(q.theta(u1)) > np.linalg.norm(q.theta(u)):
        u1 = u
    return u1.reshape(-1, h), float(np.max(np.abs(q.theta(u1)))) if u1.size else 0.0


def subproblem_objective(prob: ProblemSpec, active: ActiveSet, coeffs: np.ndarray) -> float:
    q = _Quadratic(active.assembled, prob.loss.y_d, prob.kernel.dim_h, prob.cost.beta)
    return q.objective(np.asarray(coeffs, float).ravel())


def prox_gradient_oracle(prob: ProblemSpec, active: ActiveSet, n_steps: int, warm=None) -> np.ndarray:
    """Plain fixed-step proximal gradient, used as an independent reference."""
    h = prob.kernel.dim_h
    q = _Quadratic(active.assembled, prob.loss.y_d, h, prob.cost.beta)
    u = np.zeros(len(active) * h) if warm is None else np.asarray(warm, float).ravel().copy()
    for _ in range(n_steps):
        u = q.prox_step(u)
    return u.reshape(-1, h)


def kkt_report(prob: ProblemSpec, active: ActiveSet, coeffs: np.ndarray) -> dict:
    """Deviation from ||p(x_i)|| = lambda and u_i/||u_i|| = p(x_i)/lambda on nonzero blocks."""
    h = prob.kernel.dim_h
    coeffs = np.asarray(coeffs, float).reshape(-1, h)
    A = active.assembled
    p = (-(A.T @ (A @ coeffs.ravel() - prob.loss.y_d))).reshape(-1, h)
    pn = np.linalg.norm(p, axis=1)
    un = np.linalg.norm(coeffs, axis=1)
    nz = un > 0
    if not np.any(nz):
        lam = float(pn.max()) if len(pn) else 0.0
        return {"lambda": lam, "max_norm_dev": 0.0, "max_align_dev": 0.0}
    lam = float(pn[nz].max())
    norm_dev = float(np.max(np.abs(pn[nz] - lam)))
    align = coeffs[nz] / un[nz, None] - p[nz] / lam
    return {
        "lambda": lam,
        "max_norm_dev": norm_dev,
        "max_align_dev": float(np.max(np.linalg.norm(align, axis=1))),
    }
