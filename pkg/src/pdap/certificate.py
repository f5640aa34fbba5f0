"""Dual variable p = -K* grad F(Ku), certificate P(x) = ||p(x)||_H and the primal-dual gap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measure import DiscreteMeasure, tv_norm
from .objective import INFEASIBLE, LinearCost, ProblemSpec, g_trial_mass, grad_F
from .operator import Kernel, apply_K, kstar_batch


class NearZeroCertificate(ArithmeticError):
    """P is not differentiable where p(x) vanishes."""


@dataclass
class MaximizerConfig:
    n_starts: int = 30
    newton_tol: float = 1e-12
    max_newton_iters: int = 60
    max_halvings: int = 40


def _tol_p(gradF: np.ndarray) -> float:
    return 1e-12 * float(np.linalg.norm(gradF))


def eval_P_batch(kernel: Kernel, gradF: np.ndarray, xs: np.ndarray, order: int = 0):
    """Vectorized certificate evaluation.

    Returns (P, gradP, hessP, p, ok). Derivatives are NaN where ``ok`` is False,
    i.e. where ||p(x)|| <= 1e-12 ||gradF||.
    """
    p, dp, d2p = kstar_batch(kernel, -np.asarray(gradF, dtype=float), xs, order)
    P = np.linalg.norm(p, axis=1)
    ok = P > _tol_p(gradF)
    if order == 0:
        return P, None, None, p, ok
    safe = np.where(ok, P, 1.0)
    gP = np.einsum("nih,nh->ni", dp, p) / safe[:, None]
    hP = None
    if order >= 2:
        hP = (
            np.einsum("nijh,nh->nij", d2p, p)
            + np.einsum("nih,njh->nij", dp, dp)
            - gP[:, :, None] * gP[:, None, :]
        ) / safe[:, None, None]
        hP[~ok] = np.nan
    gP[~ok] = np.nan
    return P, gP, hP, p, ok


def eval_P(kernel: Kernel, gradF: np.ndarray, x, order: int = 0):
    """Certificate at one point: (P, gradP, hessP, p).

    Raises NearZeroCertificate for order >= 1 where ||p(x)|| is (numerically) zero.
    """
    xs = np.asarray(x, dtype=float).reshape(1, kernel.d)
    P, gP, hP, p, ok = eval_P_batch(kernel, gradF, xs, order)
    if order >= 1 and not ok[0]:
        raise NearZeroCertificate(f"||p(x)|| = {P[0]:.3e} too small for derivatives")
    return (
        float(P[0]),
        None if gP is None else gP[0],
        None if hP is None else hP[0],
        p[0],
    )


@dataclass
class MaxResult:
    xhat: np.ndarray
    p_max: float
    local_maxima: np.ndarray = field(repr=False, default=None)
    local_values: np.ndarray = field(repr=False, default=None)
    n_skipped: int = 0


def _projected_grad(x, g, kernel):
    pg = g.copy()
    lo, hi = kernel.domain.lower, kernel.domain.upper
    at_lo = (x <= lo) & (pg < 0)
    at_hi = (x >= hi) & (pg > 0)
    pg[at_lo | at_hi] = 0.0
    return pg


def _select(xs: np.ndarray, vals: np.ndarray) -> int:
    """Index of the largest value; ties broken by lexicographically smallest point."""
    best = vals.max()
    tied = np.flatnonzero(vals == best)
    if len(tied) == 1:
        return int(tied[0])
    order = np.lexsort(xs[tied].T[::-1])
    return int(tied[order[0]])


def find_global_max(
    kernel: Kernel,
    gradF: np.ndarray,
    current_support: np.ndarray | None = None,
    cfg: MaximizerConfig | None = None,
) -> MaxResult:
    """Multi-start damped Newton ascent of P over the domain.

    Starts are a uniform grid plus the current support points. Each iterate is
    clamped to the domain; a start stops once the projected gradient satisfies
    ``|grad P| <= newton_tol * (1 + P)``. Non-concave iterates take a gradient
    step instead; both use backtracking on P.
    """
    cfg = cfg or MaximizerConfig()
    dom = kernel.domain
    starts = dom.grid(cfg.n_starts)
    if current_support is not None and len(current_support):
        starts = np.vstack([starts, np.asarray(current_support, float).reshape(-1, kernel.d)])
    X = dom.clamp(starts.copy())
    P0, _, _, _, ok0 = eval_P_batch(kernel, gradF, X, 0)
    grid_n = len(dom.grid(cfg.n_starts))

    if not np.any(ok0):
        i = _select(X[:grid_n], P0[:grid_n])
        return MaxResult(X[i].copy(), float(P0[i]), X.copy(), P0.copy(), n_skipped=len(X))

    active = ok0.copy()
    vals = P0.copy()
    diam = float(np.max(dom.upper - dom.lower))
    for _ in range(cfg.max_newton_iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        P, gP, hP, _, ok = eval_P_batch(kernel, gradF, X[idx], 2)
        vals[idx] = P
        bad = ~ok
        active[idx[bad]] = False
        idx, P, gP, hP = idx[ok], P[ok], gP[ok], hP[ok]
        pg = np.stack([_projected_grad(X[i], g, kernel) for i, g in zip(idx, gP)]) if len(idx) else gP
        done = np.linalg.norm(pg, axis=1) <= cfg.newton_tol * (1.0 + P)
        active[idx[done]] = False
        idx, P, gP, hP = idx[~done], P[~done], gP[~done], hP[~done]
        if len(idx) == 0:
            break
        # search directions
        D = np.empty_like(gP)
        concave = np.zeros(len(idx), dtype=bool)
        for n in range(len(idx)):
            H, g = hP[n], gP[n]
            eig = np.linalg.eigvalsh(H)
            if np.all(eig < 0):
                D[n] = -np.linalg.solve(H, g)
                concave[n] = True
            else:
                ng = np.linalg.norm(g)
                D[n] = g * min(1.0 / max(np.max(np.abs(eig)), 1e-300), 0.05 * diam / ng)
        # Newton decrement below the rounding level of P: the gain of the step
        # cannot be resolved, so take it and stop this start
        resolved = concave & (np.einsum("ni,ni->n", gP, D) <= 1e-15 * (1.0 + P))
        if np.any(resolved):
            X[idx[resolved]] = dom.clamp(X[idx[resolved]] + D[resolved])
            active[idx[resolved]] = False
            idx, P, gP, D = idx[~resolved], P[~resolved], gP[~resolved], D[~resolved]
            if len(idx) == 0:
                continue
        # vectorized backtracking on P
        t = np.ones(len(idx))
        pending = np.ones(len(idx), dtype=bool)
        Xnew = X[idx].copy()
        for _h in range(cfg.max_halvings + 1):
            pi = np.flatnonzero(pending)
            if len(pi) == 0:
                break
            cand = dom.clamp(X[idx[pi]] + t[pi, None] * D[pi])
            Pc, _, _, _, _ = eval_P_batch(kernel, gradF, cand, 0)
            step = cand - X[idx[pi]]
            gain = np.einsum("ni,ni->n", gP[pi], step)
            accept = Pc >= P[pi] + 1e-4 * gain
            tiny = np.linalg.norm(step, axis=1) <= 1e-15 * (1.0 + np.linalg.norm(X[idx[pi]], axis=1))
            accept |= tiny & (Pc >= P[pi])
            Xnew[pi[accept]] = cand[accept]
            pending[pi[accept]] = False
            t[pi[~accept]] *= 0.5
        # stalled line searches and steps that do not move terminate their start
        active[idx[pending]] = False
        moved = ~pending
        still = moved & np.all(Xnew == X[idx], axis=1)
        active[idx[still]] = False
        X[idx[moved]] = Xnew[moved]
    Pf, _, _, _, okf = eval_P_batch(kernel, gradF, X, 0)
    i = _select(X, Pf)
    return MaxResult(X[i].copy(), float(Pf[i]), X.copy(), Pf.copy(), n_skipped=int(np.sum(~ok0)))


@dataclass
class DualState:
    """Quantities derived from an iterate u: y = Ku, grad F(y), lambda and the certificate maximum."""

    y: np.ndarray
    gradF: np.ndarray
    lambda_k: float
    xhat: np.ndarray
    p_max: float
    p_xhat: np.ndarray
    pairing: float  # <p, u>
    maximizer: MaxResult = field(repr=False, default=None)

    @property
    def pnorm_gap(self) -> float:
        """||p||_C - lambda."""
        return self.p_max - self.lambda_k


def compute_dual(
    prob: ProblemSpec,
    m: DiscreteMeasure,
    cfg: MaximizerConfig | None = None,
    lambda_points: np.ndarray | None = None,
) -> DualState:
    """Evaluate the dual state of ``m``.

    lambda is the largest certificate value over ``lambda_points`` (default: the
    support of m; 0 for an empty set).
    """
    kernel = prob.kernel
    y = apply_K(kernel, m)
    gF = grad_F(prob.loss, y)
    pts = m.points if lambda_points is None else np.asarray(lambda_points, float).reshape(-1, kernel.d)
    if len(pts):
        Pl, _, _, _, _ = eval_P_batch(kernel, gF, pts, 0)
        lam = float(Pl.max())
    else:
        lam = 0.0
    if len(m):
        _, _, _, p_sup, _ = eval_P_batch(kernel, gF, m.points, 0)
        pairing = float(np.sum(p_sup * m.coeffs))
    else:
        pairing = 0.0
    res = find_global_max(kernel, gF, m.points, cfg)
    _, _, _, p_hat, _ = eval_P_batch(kernel, gF, res.xhat.reshape(1, -1), 0)
    return DualState(y, gF, lam, res.xhat, res.p_max, p_hat[0], pairing, res)


def trial_point(prob: ProblemSpec, dual: DualState) -> DiscreteMeasure:
    """Minimizer of <-p, v> + G(||v||) over ||v|| <= M0: a single Dirac at xhat (or zero)."""
    d, h = prob.kernel.d, prob.kernel.dim_h
    if dual.p_max == 0.0:
        return DiscreteMeasure.empty(d, h)
    mass = g_trial_mass(prob.cost, dual.p_max, prob.m0_bound)
    if mass == 0.0:
        return DiscreteMeasure.empty(d, h)
    return DiscreteMeasure.dirac(dual.xhat, mass * dual.p_xhat / dual.p_max)


def _G(prob: ProblemSpec, val: float) -> float:
    g = prob.cost(val)
    if g is INFEASIBLE:
        raise ValueError("gap undefined for an infeasible iterate")
    return g


def gap(prob: ProblemSpec, m: DiscreteMeasure, dual: DualState) -> float:
    """Phi(m) = <p, v - m> + G(||m||) - G(||v||) with v the trial point (closed-form max)."""
    mass = 0.0 if dual.p_max == 0.0 else g_trial_mass(prob.cost, dual.p_max, prob.m0_bound)
    # <p, v> = mass * ||p||_C for v = mass * p(xhat)/||p||_C delta_xhat
    return mass * dual.p_max - dual.pairing + _G(prob, tv_norm(m)) - _G(prob, mass)


def gap_upper_bound(prob: ProblemSpec, dual: DualState) -> float:
    """M0 * (||p||_C - lambda)."""
    return prob.m0_bound * (dual.p_max - dual.lambda_k)


def gap_direct(prob: ProblemSpec, m: DiscreteMeasure, gradF: np.ndarray, xs: np.ndarray) -> float:
    """Gap with the inner max taken over Diracs at the grid ``xs`` and masses in {0, M0}.

    For the linear cost and the ball the inner objective is linear in the mass,
    so the extreme masses suffice; used as an oracle for ``gap``.
    """
    P, _, _, p, _ = eval_P_batch(prob.kernel, gradF, xs, 0)
    if len(m):
        _, _, _, p_sup, _ = eval_P_batch(prob.kernel, gradF, m.points, 0)
        pairing = float(np.sum(p_sup * m.coeffs))
    else:
        pairing = 0.0
    M0 = prob.m0_bound
    Pmax = float(P.max())
    best = max(0.0 - _G(prob, 0.0), M0 * Pmax - _G(prob, M0))
    return best - pairing + _G(prob, tv_norm(m))


def is_linear_cost(prob: ProblemSpec) -> bool:
    return isinstance(prob.cost, LinearCost)
