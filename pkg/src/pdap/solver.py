"""Outer loops: generalized conditional gradient (GCG), SPINAT(l) and PDAP."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certificate import DualState, MaximizerConfig, compute_dual, gap, gap_upper_bound, trial_point
from .measure import DiscreteMeasure, axpy, prune, tv_norm
from .objective import LinearCost, ProblemSpec, UnsupportedCost, eval_j_finite, prox_group_blocks
from .subproblem import ActiveSet, kkt_report, solve_coefficients

log = logging.getLogger(__name__)

METHODS = ("pdap", "gcg", "spinat")
HISTORY_COLUMNS = (
    "k", "j", "gap", "lambda", "pnorm", "support_size", "xhat", "step_size", "inner_iters", "wall_ms",
)


@dataclass
class SolverConfig:
    method: str = "pdap"
    spinat_steps: int = 1
    tol: float = 1e-12
    max_iter: int = 50
    armijo_gamma: float = 0.1
    armijo_max_halvings: int = 50
    sub_tol: float | None = None
    maximizer: MaximizerConfig = field(default_factory=MaximizerConfig)
    record_timing: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.spinat_steps < 1:
            raise ValueError("spinat_steps must be >= 1")
        if not 0 < self.armijo_gamma < 1:
            raise ValueError("armijo_gamma must lie in (0, 1)")
        if isinstance(self.maximizer, dict):
            self.maximizer = MaximizerConfig(**self.maximizer)

    @property
    def label(self) -> str:
        return f"spinat{self.spinat_steps}" if self.method == "spinat" else self.method


@dataclass
class IterateRecord:
    k: int
    j_val: float
    gap: float
    lambda_k: float
    pnorm_c: float
    support_size: int
    xhat: np.ndarray
    step_size: float = 0.0
    inner_iters: int = 0
    wall_ms: float = 0.0
    gap_bound: float = 0.0
    kkt_norm_dev: float = 0.0
    kkt_align_dev: float = 0.0

    def row(self) -> list[str]:
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        return [
            str(self.k), f(self.j_val), f(self.gap), f(self.lambda_k), f(self.pnorm_c),
            str(self.support_size), ";".join(f(v) for v in np.ravel(self.xhat)),
            f(self.step_size), str(self.inner_iters), f(self.wall_ms),
        ]


@dataclass
class StepInfo:
    step_size: float = 0.0
    inner_iters: int = 0
    lambda_points: np.ndarray | None = None
    kkt: dict | None = None
    stalled: bool = False


class SolverError(RuntimeError):
    """A step failed; ``partial`` holds the RunResult up to the failure."""

    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


def gcg_step(prob: ProblemSpec, m: DiscreteMeasure, dual: DualState, cfg: SolverConfig):
    """Convex combination with the trial Dirac, step size by Armijo halving."""
    v = trial_point(prob, dual)
    phi = gap(prob, m, dual)
    info = StepInfo()
    if phi <= 0.0:
        return m, info
    j0 = eval_j_finite(prob, m)
    delta = axpy(v, -1.0, m)
    s = 1.0
    for _ in range(cfg.armijo_max_halvings + 1):
        cand = axpy(m, s, delta)
        if eval_j_finite(prob, cand) <= j0 - cfg.armijo_gamma * s * phi:
            info.step_size = s
            return prune(cand, 0.0), info
        s *= 0.5
    log.warning("GCG line search failed (gap %.3e); iterate kept", phi)
    info.stalled = True
    return m, info


def _prox_gradient_passes(prob: ProblemSpec, m: DiscreteMeasure, passes: int) -> DiscreteMeasure:
    """Proximal gradient passes on the coefficients of m with backtracking from 1/sigma_max^2."""
    if len(m) == 0:
        return m
    act = ActiveSet.build(prob.kernel, m.points)
    A, b, beta, h = act.assembled, prob.loss.y_d, prob.cost.beta, m.dim_h
    tau0 = 1.0 / float(np.linalg.norm(A, 2)) ** 2
    u = m.coeffs.ravel().copy()
    for _ in range(passes):
        r = A @ u - b
        f0 = 0.5 * float(r @ r)
        g = A.T @ r
        tau = tau0
        for _h in range(60):
            un = prox_group_blocks((u - tau * g).reshape(-1, h), tau * beta).ravel()
            rn = A @ un - b
            du = un - u
            if 0.5 * float(rn @ rn) <= f0 + float(g @ du) + float(du @ du) / (2 * tau) * (1 + 1e-12):
                break
            tau *= 0.5
        u = un
    return DiscreteMeasure(m.points, u.reshape(-1, h))


def spinat_step(prob: ProblemSpec, m: DiscreteMeasure, dual: DualState, cfg: SolverConfig, l: int | None = None):
    """GCG step followed by ``l`` proximal gradient passes on its support."""
    l = cfg.spinat_steps if l is None else l
    half, info = gcg_step(prob, m, dual, cfg)
    if info.step_size == 0.0:
        return half, info
    out = prune(_prox_gradient_passes(prob, half, l), 0.0)
    if eval_j_finite(prob, out) > eval_j_finite(prob, half):
        out = half
    info.inner_iters = l
    return out, info


def pdap_step(prob: ProblemSpec, m: DiscreteMeasure, dual: DualState, cfg: SolverConfig):
    """Insert xhat, solve the coefficient problem on the enlarged support, drop zero coefficients."""
    xhat = np.asarray(dual.xhat, float).reshape(1, -1)
    hit = np.flatnonzero(np.all(m.points == xhat, axis=1)) if len(m) else np.zeros(0, int)
    if len(hit):
        points, warm = m.points, m.coeffs
    else:
        points = np.vstack([m.points, xhat])
        warm = np.vstack([m.coeffs, np.zeros((1, prob.kernel.dim_h))])
    act = ActiveSet.build(prob.kernel, points)
    res = solve_coefficients(prob, act, warm, tol=cfg.sub_tol)
    info = StepInfo(step_size=1.0, inner_iters=res.inner_iters, lambda_points=points)
    info.kkt = kkt_report(prob, act, res.coeffs)
    return prune(DiscreteMeasure(points, res.coeffs), 0.0), info


_STEPS: dict[str, Callable] = {"pdap": pdap_step, "gcg": gcg_step, "spinat": spinat_step}


@dataclass
class RunResult:
    history: list
    final: DiscreteMeasure
    status: str
    iterates: list = field(default_factory=list, repr=False)
    final_dual: DualState | None = field(default=None, repr=False)
    final_record: IterateRecord | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _criterion(cfg: SolverConfig, dual: DualState, phi: float) -> float:
    if cfg.method == "pdap":
        return dual.p_max - dual.lambda_k
    return phi


def run(
    prob: ProblemSpec,
    cfg: SolverConfig,
    u0: DiscreteMeasure | None = None,
    on_record: Callable[[IterateRecord], None] | None = None,
    keep_iterates: bool = True,
) -> RunResult:
    """Iterate until the stopping quantity is <= tol or max_iter iterations ran.

    One record per iteration k describes u^k and the step taken from it. The
    stopping quantity is ||p||_C - lambda for PDAP and the gap Phi otherwise.
    """
    if cfg.method == "pdap" and not isinstance(prob.cost, LinearCost):
        raise UnsupportedCost("PDAP requires the linear cost")
    step = _STEPS[cfg.method]
    m = u0 if u0 is not None else DiscreteMeasure.empty(prob.kernel.d, prob.kernel.dim_h)
    history: list[IterateRecord] = []
    iterates: list[DiscreteMeasure] = []
    lambda_points = None
    last_kkt = None
    t0 = time.perf_counter()
    status = "max_iter"
    dual = final_rec = None
    for k in range(cfg.max_iter + 1):
        dual = compute_dual(prob, m, cfg.maximizer, lambda_points)
        phi = gap(prob, m, dual)
        if keep_iterates:
            iterates.append(m)
        rec = IterateRecord(
            k=k,
            j_val=eval_j_finite(prob, m),
            gap=phi,
            lambda_k=dual.lambda_k,
            pnorm_c=dual.p_max,
            support_size=len(m),
            xhat=np.asarray(dual.xhat).copy(),
            gap_bound=gap_upper_bound(prob, dual),
        )
        if last_kkt is not None:
            rec.kkt_norm_dev = last_kkt["max_norm_dev"]
            rec.kkt_align_dev = last_kkt["max_align_dev"]
        done = _criterion(cfg, dual, phi) <= cfg.tol or dual.p_max == 0.0
        if done or k == cfg.max_iter:
            status = "converged" if done else "max_iter"
            if cfg.record_timing:
                rec.wall_ms = 1e3 * (time.perf_counter() - t0)
            final_rec = rec
            # u^{max_iter} is evaluated but gets no row: no step is taken from it
            if k < cfg.max_iter:
                history.append(rec)
                if on_record is not None:
                    on_record(rec)
            break
        try:
            m_next, info = step(prob, m, dual, cfg)
        except Exception as exc:
            partial = RunResult(history, m, "error", iterates, dual)
            raise SolverError(f"{cfg.label} step {k} failed: {exc}", partial) from exc
        rec.step_size = info.step_size
        rec.inner_iters = info.inner_iters
        lambda_points = info.lambda_points
        last_kkt = info.kkt
        m = m_next
        if cfg.record_timing:
            rec.wall_ms = 1e3 * (time.perf_counter() - t0)
        history.append(rec)
        if on_record is not None:
            on_record(rec)
    return RunResult(history, m, status, iterates, dual, final_rec)


class HistoryWriter:
    """Streams IterateRecords to CSV, flushing after every row."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(HISTORY_COLUMNS)
        self._fh.flush()

    def __call__(self, rec: IterateRecord) -> None:
        self._w.writerow(rec.row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def support_growth_ok(result: RunResult, method: str) -> bool:
    """GCG adds at most one point per step; PDAP keeps at most |support| + 1."""
    sizes = [r.support_size for r in result.history]
    return all(b <= a + 1 for a, b in zip(sizes, sizes[1:]))


def tv_bound_ok(prob: ProblemSpec, result: RunResult) -> bool:
    return all(tv_norm(m) <= prob.m0_bound * (1 + 1e-12) for m in result.iterates)
