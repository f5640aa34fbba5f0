"""Property suite behind ``pdap check``: each check returns a CheckResult; none raise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .certificate import compute_dual, eval_P_batch, gap, gap_upper_bound
from .measure import DiscreteMeasure
from .objective import LinearCost, ProblemSpec, QuadraticLoss, prox_group, prox_group_blocks
from .operator import HelmholtzKernel, Kernel, KernelEvaluation, apply_K, kstar_batch
from .solver import SolverConfig, run
from .subproblem import ActiveSet, solve_coefficients, subproblem_objective


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28} {self.value:.3e} (limit {self.threshold:.1e}) {self.detail}"


class FlippedDerivativeKernel(Kernel):
    """Wraps a kernel and negates dA; used to confirm that the FD check catches sign errors."""

    def __init__(self, base: Kernel):
        self.base = base
        self.domain = base.domain

    @property
    def dim_h(self) -> int:
        return self.base.dim_h

    @property
    def dim_y(self) -> int:
        return self.base.dim_y

    def evaluate(self, xs, order: int = 0) -> KernelEvaluation:
        ev = self.base.evaluate(xs, order)
        return KernelEvaluation(ev.A, None if ev.dA is None else -ev.dA, ev.d2A)


def default_kernel() -> HelmholtzKernel:
    return HelmholtzKernel([4 * np.pi, 6 * np.pi], 0.5)


def _random_measure(rng, kernel: Kernel, n: int) -> DiscreteMeasure:
    lo, hi = kernel.domain.lower, kernel.domain.upper
    pts = lo + (hi - lo) * rng.random((n, kernel.d))
    return DiscreteMeasure(pts, rng.standard_normal((n, kernel.dim_h)))


def adjointness_error(kernel: Kernel, n_seeds: int = 100) -> float:
    """max over seeds of |<Ku, y> - <u, K*y>| / max(1, |<Ku, y>|)."""
    worst = 0.0
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        m = _random_measure(rng, kernel, int(rng.integers(1, 6)))
        y = rng.standard_normal(kernel.dim_y)
        lhs = float(apply_K(kernel, m) @ y)
        p, _, _ = kstar_batch(kernel, y, m.points, 0)
        rhs = float(np.sum(p * m.coeffs))
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    return worst


def _rel(a, b) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) / scale


def derivative_errors(kernel: Kernel, n_points: int = 50, step: float = 1e-6, seed: int = 0) -> dict:
    """Worst relative errors of dp, grad P (vs central FD of p, P) and hess P (vs FD of grad P)."""
    rng = np.random.default_rng(seed)
    lo, hi = kernel.domain.lower, kernel.domain.upper
    margin = 1e-3 * (hi - lo)
    xs = lo + margin + (hi - lo - 2 * margin) * rng.random((n_points, kernel.d))
    errs = {"dp": 0.0, "gradP": 0.0, "hessP": 0.0}
    for x in xs:
        gradF = rng.standard_normal(kernel.dim_y)
        _, dp, _ = kstar_batch(kernel, -gradF, x[None], 1)
        _, gP, hP, _, ok = eval_P_batch(kernel, gradF, x[None], 2)
        if not ok[0]:
            continue
        fd_dp = np.zeros_like(dp[0])
        fd_gP = np.zeros(kernel.d)
        fd_hP = np.zeros((kernel.d, kernel.d))
        for i in range(kernel.d):
            e = np.zeros(kernel.d)
            e[i] = step
            pts = np.stack([x + e, x - e])
            p2, _, _ = kstar_batch(kernel, -gradF, pts, 0)
            P2, g2, _, _, _ = eval_P_batch(kernel, gradF, pts, 1)
            fd_dp[i] = (p2[0] - p2[1]) / (2 * step)
            fd_gP[i] = (P2[0] - P2[1]) / (2 * step)
            fd_hP[:, i] = (g2[0] - g2[1]) / (2 * step)
        errs["dp"] = max(errs["dp"], _rel(dp[0], fd_dp))
        errs["gradP"] = max(errs["gradP"], _rel(gP[0], fd_gP))
        errs["hessP"] = max(errs["hessP"], _rel(hP[0], fd_hP))
    return errs


def prox_error(n_samples: int = 200, seed: int = 0) -> float:
    """Worst violation of the prox optimality condition and of nonexpansiveness."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        v, w = rng.standard_normal(4), rng.standard_normal(4)
        t = float(rng.uniform(0, 3))
        pv, pw = prox_group(v, t), prox_group(w, t)
        worst = max(worst, np.linalg.norm(pv - pw) - np.linalg.norm(v - w))
        r = v - pv  # must lie in t * subdifferential of the norm at pv
        if np.linalg.norm(pv) > 0:
            worst = max(worst, float(np.linalg.norm(r - t * pv / np.linalg.norm(pv))))
        else:
            worst = max(worst, float(np.linalg.norm(r)) - t)
        worst = max(worst, float(np.max(np.abs(prox_group_blocks(v[None], t)[0] - pv))))
    return max(worst, 0.0)


def batched_prox_gradient(H: np.ndarray, c: np.ndarray, tau: np.ndarray, beta: float, h: int, steps: int):
    """Fixed-step proximal gradient for a batch of problems 1/2 u'Hu - c'u + beta sum ||u_i||."""
    B, n = c.shape
    u = np.zeros((B, n))
    tb = (tau * beta)[:, None]
    for _ in range(steps):
        V = (u - tau[:, None] * (np.einsum("bjk,bk->bj", H, u) - c)).reshape(B, n // h, h)
        nv = np.sqrt(np.einsum("bnh,bnh->bn", V, V))
        scale = np.maximum(1.0 - tb / np.maximum(nv, 1e-300), 0.0)
        u = (V * scale[..., None]).reshape(B, n)
    return u


def random_subproblems(kernel: Kernel, n_sets: int = 20, max_points: int = 4, seed: int = 0):
    """(ProblemSpec, ActiveSet) pairs with well separated random points and data from a random source."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sets):
        n = int(rng.integers(1, max_points + 1))
        while True:
            pts = np.sort(rng.uniform(-1, 1, n))
            if n == 1 or np.min(np.diff(pts)) > 0.1:
                break
        src = _random_measure(rng, kernel, 3)
        y_d = apply_K(kernel, src) + 0.1 * rng.standard_normal(kernel.dim_y)
        prob = ProblemSpec(kernel, QuadraticLoss(y_d), LinearCost(1.0))
        out.append((prob, ActiveSet.build(kernel, pts[:, None])))
    return out


def subproblem_oracle_gap(kernel: Kernel, n_sets: int = 20, steps: int = 100_000, seed: int = 0) -> float:
    """Worst |objective(solver) - objective(proximal gradient oracle)| over random active sets.

    Problems are padded to a common size with zero columns, whose blocks the
    prox keeps at exactly zero.
    """
    cases = random_subproblems(kernel, n_sets, seed=seed)
    h = kernel.dim_h
    n_max = max(len(a) for _, a in cases) * h
    H = np.zeros((len(cases), n_max, n_max))
    c = np.zeros((len(cases), n_max))
    tau = np.zeros(len(cases))
    for i, (prob, act) in enumerate(cases):
        A = act.assembled
        H[i, : A.shape[1], : A.shape[1]] = A.T @ A
        c[i, : A.shape[1]] = A.T @ prob.loss.y_d
        tau[i] = 1.0 / np.linalg.norm(A, 2) ** 2
    U = batched_prox_gradient(H, c, tau, 1.0, h, steps)
    worst = 0.0
    for i, (prob, act) in enumerate(cases):
        n = act.assembled.shape[1]
        mine = subproblem_objective(prob, act, solve_coefficients(prob, act).coeffs)
        ref = subproblem_objective(prob, act, U[i, :n].reshape(-1, h))
        worst = max(worst, abs(mine - ref))
    return worst


def closed_form_subproblem_error() -> float:
    """One point, A = 2I on R^2, y_d = (3, 0), beta = 1: the solution is (1.25, 0)."""

    class _Scaled(Kernel):
        domain = default_kernel().domain

        @property
        def dim_h(self):
            return 2

        @property
        def dim_y(self):
            return 2

        def evaluate(self, xs, order=0):
            xs = np.asarray(xs, float).reshape(-1, 1)
            A = np.broadcast_to(2.0 * np.eye(2), (len(xs), 2, 2)).copy()
            z1 = np.zeros((len(xs), 1, 2, 2)) if order >= 1 else None
            z2 = np.zeros((len(xs), 1, 1, 2, 2)) if order >= 2 else None
            return KernelEvaluation(A, z1, z2)

    k = _Scaled()
    prob = ProblemSpec(k, QuadraticLoss(np.array([3.0, 0.0])), LinearCost(1.0))
    res = solve_coefficients(prob, ActiveSet.build(k, np.zeros((1, 1))))
    return float(np.max(np.abs(res.coeffs[0] - np.array([1.25, 0.0]))))


def sandwich_violation(kernel: Kernel, max_iter: int = 15, seed: int = 3) -> float:
    """Largest violation (relative to 1 + F(0)) of r_j <= Phi <= M0 (||p|| - lambda) along a PDAP run.

    j_bar is the final objective of a longer PDAP run, an upper estimate of
    min j; this can only make r_j smaller, so the check stays sound.
    """
    rng = np.random.default_rng(seed)
    src = _random_measure(rng, kernel, 3)
    y_d = apply_K(kernel, src) + 0.05 * rng.standard_normal(kernel.dim_y)
    prob = ProblemSpec(kernel, QuadraticLoss(y_d), LinearCost(1.0))
    res = run(prob, SolverConfig(method="pdap", tol=1e-12, max_iter=max_iter, record_timing=False))
    j_bar = min(r.j_val for r in res.history)
    if res.final_record is not None:
        j_bar = min(j_bar, res.final_record.j_val)
    worst = 0.0
    for r in res.history:
        worst = max(worst, (r.j_val - j_bar) - r.gap, r.gap - r.gap_bound)
    return max(worst, 0.0) / prob.scale


def gap_closed_form_error(kernel: Kernel) -> float:
    """At u = 0 with the linear cost: Phi = M0 max(0, ||K* y_d||_C - beta)."""
    rng = np.random.default_rng(11)
    y_d = apply_K(kernel, _random_measure(rng, kernel, 2))
    prob = ProblemSpec(kernel, QuadraticLoss(y_d), LinearCost(1.0))
    m = DiscreteMeasure.empty(kernel.d, kernel.dim_h)
    dual = compute_dual(prob, m)
    expect = prob.m0_bound * max(0.0, dual.p_max - 1.0)
    return abs(gap(prob, m, dual) - expect) / max(1.0, expect) + max(0.0, gap(prob, m, dual) - gap_upper_bound(prob, dual))


def run_checks(kernel: Kernel | None = None, oracle_steps: int = 100_000) -> list[CheckResult]:
    kernel = kernel or default_kernel()
    out = []
    adj = adjointness_error(kernel)
    out.append(CheckResult("adjointness (100 seeds)", adj <= 1e-12, adj, 1e-12))
    der = derivative_errors(kernel)
    out.append(CheckResult("FD dp", der["dp"] <= 1e-5, der["dp"], 1e-5))
    out.append(CheckResult("FD grad P", der["gradP"] <= 1e-5, der["gradP"], 1e-5))
    out.append(CheckResult("FD hess P", der["hessP"] <= 1e-4, der["hessP"], 1e-4))
    pe = prox_error()
    out.append(CheckResult("prox properties", pe <= 1e-12, pe, 1e-12))
    cf = closed_form_subproblem_error()
    out.append(CheckResult("subproblem closed form", cf <= 1e-12, cf, 1e-12))
    og = subproblem_oracle_gap(kernel, steps=oracle_steps)
    out.append(CheckResult("subproblem vs prox-grad", og <= 1e-10, og, 1e-10, f"({oracle_steps} oracle steps)"))
    gc = gap_closed_form_error(kernel)
    out.append(CheckResult("gap at zero", gc <= 1e-12, gc, 1e-12))
    sw = sandwich_violation(kernel)
    out.append(CheckResult("gap sandwich (PDAP)", sw <= 1e-10, sw, 1e-10))
    return out


def format_table(results: list[CheckResult]) -> str:
    return "\n".join(r.line() for r in results)

