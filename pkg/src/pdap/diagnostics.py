"""Post-processing against a high-accuracy reference solution.

Residuals, support and coefficient errors, a computable upper bound on the
dual Lipschitz distance to the reference, geometric rate fits and the
conditioning of the matrix with columns k(x_n, p(x_n)/lambda).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .certificate import MaximizerConfig, eval_P_batch
from .measure import DiscreteMeasure, lump
from .objective import ProblemSpec, eval_j_finite, grad_F
from .operator import Kernel, apply_K
from .solver import RunResult, SolverConfig, run

METRICS_COLUMNS = ("k", "r_j", "gap", "support_error", "coeff_error", "dual_bound")


class NonPositiveSeries(ValueError):
    pass


class ZeroLambda(ArithmeticError):
    pass


@dataclass
class Reference:
    u_bar: DiscreteMeasure
    j_bar: float
    lambda_bar: float
    R: float
    gradF: np.ndarray = field(repr=False, default=None)
    converged: bool = True
    iterations: int = 0
    unlumped: DiscreteMeasure | None = field(repr=False, default=None)

    @property
    def n_points(self) -> int:
        return len(self.u_bar)


def separation_radius(points: np.ndarray, domain=None, cap: float = 0.1) -> float:
    """Half the smallest pairwise distance, capped at ``cap`` and at the distance to the boundary."""
    points = np.asarray(points, float)
    R = cap
    if len(points) > 1:
        diff = points[:, None, :] - points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        dist[np.diag_indices(len(points))] = np.inf
        R = min(R, 0.5 * float(dist.min()))
    if domain is not None and len(points):
        wall = np.minimum(points - domain.lower, domain.upper - points).min()
        if wall > 0:
            R = min(R, float(wall))
    return R


def make_reference(
    prob: ProblemSpec,
    u_final: DiscreteMeasure,
    lump_radius: float = 1e-5,
    converged: bool = True,
    iterations: int = 0,
) -> Reference:
    """Lump a high-accuracy iterate into the reference.

    j_bar is taken from the unlumped iterate: lumping moves mass by up to the
    lumping radius and can raise j above what the solver actually reached.
    """
    u_bar = lump(u_final, lump_radius)
    gF = grad_F(prob.loss, apply_K(prob.kernel, u_final))
    P, _, _, _, _ = eval_P_batch(prob.kernel, gF, u_final.points, 0)
    lam = float(P.max()) if len(P) else 0.0
    R = separation_radius(u_bar.points, prob.domain)
    return Reference(
        u_bar, eval_j_finite(prob, u_final), lam, R, gF, converged, iterations, u_final,
    )


def compute_reference(
    prob: ProblemSpec,
    tol: float = 1e-13,
    max_iter: int = 200,
    lump_radius: float = 1e-5,
    maximizer: MaximizerConfig | None = None,
) -> Reference:
    """PDAP run to ``tol`` followed by lumping at ``lump_radius``."""
    cfg = SolverConfig(
        method="pdap", tol=tol, max_iter=max_iter, record_timing=False,
        maximizer=maximizer or MaximizerConfig(),
    )
    res = run(prob, cfg, keep_iterates=False)
    return make_reference(prob, res.final, lump_radius, res.converged, len(res.history))


def residual(ref: Reference, prob: ProblemSpec, m: DiscreteMeasure) -> float:
    """r_j(m) = j(m) - j_bar."""
    return eval_j_finite(prob, m) - ref.j_bar


def assign_to_balls(ref: Reference, points: np.ndarray) -> np.ndarray:
    """Index of the reference point whose closed R-ball contains each point, or -1."""
    points = np.asarray(points, float).reshape(-1, ref.u_bar.d)
    if len(points) == 0 or ref.n_points == 0:
        return -np.ones(len(points), dtype=int)
    dist = np.linalg.norm(points[:, None, :] - ref.u_bar.points[None, :, :], axis=-1)
    idx = np.argmin(dist, axis=1)
    return np.where(dist[np.arange(len(points)), idx] <= ref.R, idx, -1)


@dataclass
class ErrorReport:
    support_error: float
    coeff_error: float
    n_outliers: int
    outlier_mass: float
    empty_balls: list

    @property
    def clean(self) -> bool:
        return self.n_outliers == 0 and not self.empty_balls


def error_report(ref: Reference, m: DiscreteMeasure) -> ErrorReport:
    """Support and lumped-coefficient errors of m relative to the reference.

    Points outside every ball are outliers: counted and their mass summed, but
    they do not enter the two errors.
    """
    owner = assign_to_balls(ref, m.points)
    sup_err, coeff_err, empty = 0.0, 0.0, []
    for n in range(ref.n_points):
        inside = owner == n
        if not np.any(inside):
            empty.append(n)
            coeff_err = max(coeff_err, float(np.linalg.norm(ref.u_bar.coeffs[n])))
            continue
        dist = np.linalg.norm(m.points[inside] - ref.u_bar.points[n], axis=1)
        sup_err = max(sup_err, float(dist.max()))
        lumped = m.coeffs[inside].sum(axis=0)
        coeff_err = max(coeff_err, float(np.linalg.norm(ref.u_bar.coeffs[n] - lumped)))
    out = owner < 0
    return ErrorReport(sup_err, coeff_err, int(out.sum()), float(m.coeff_norms[out].sum()), empty)


def support_error(ref: Reference, m: DiscreteMeasure) -> float:
    return error_report(ref, m).support_error


def coeff_error(ref: Reference, m: DiscreteMeasure) -> float:
    return error_report(ref, m).coeff_error


def dual_norm_bound(ref: Reference, m: DiscreteMeasure) -> float:
    """Upper bound on sup <phi, m - u_bar> over phi with sup norm and Lipschitz constant <= 1.

    Per ball: ||u_bar_n - U_n|| + sum over in-ball points of |x - x_n| ||m(x)||,
    plus the total mass of m outside all balls.
    """
    owner = assign_to_balls(ref, m.points)
    norms = m.coeff_norms
    total = float(norms[owner < 0].sum())
    for n in range(ref.n_points):
        inside = owner == n
        lumped = m.coeffs[inside].sum(axis=0) if np.any(inside) else np.zeros(ref.u_bar.dim_h)
        total += float(np.linalg.norm(ref.u_bar.coeffs[n] - lumped))
        if np.any(inside):
            dist = np.linalg.norm(m.points[inside] - ref.u_bar.points[n], axis=1)
            total += float(dist @ norms[inside])
    return total


@dataclass
class RateFit:
    zeta: float
    r2: float
    n_points: int


def fit_rate(series, tail: int | None = None) -> RateFit:
    """Least-squares fit of log(series) against k over the last ``tail`` entries; zeta = exp(slope)."""
    s = np.asarray(series, float)
    if tail is not None:
        if tail < 3:
            raise ValueError("tail must contain at least 3 points")
        s = s[-tail:]
    if len(s) < 3:
        raise ValueError("rate fit needs at least 3 points")
    if not np.all(s > 0):
        raise NonPositiveSeries("rate fit needs a positive series")
    k = np.arange(len(s), dtype=float)
    logs = np.log(s)
    slope, intercept = np.polyfit(k, logs, 1)
    fitted = slope * k + intercept
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    ss_res = float(np.sum((logs - fitted) ** 2))
    # a constant series is fitted exactly; its ss_tot is rounding noise
    r2 = 1.0 if np.ptp(logs) == 0 else 1.0 - ss_res / ss_tot
    return RateFit(float(math.exp(slope)), r2, len(s))


def tail_rate(series, burn_in: int = 3, tail_frac: float = 0.6, floor: float = 0.0) -> RateFit:
    """Rate over the last ``tail_frac`` of the series after ``burn_in``.

    The series is cut at its first entry <= floor: values at the rounding level
    of j carry no rate information.
    """
    s = np.asarray(series, float)[burn_in:]
    below = np.flatnonzero(s <= floor)
    if len(below):
        s = s[: below[0]]
    tail = max(3, int(math.ceil(tail_frac * len(s))))
    return fit_rate(s, min(tail, len(s)) if len(s) >= 3 else tail)


def kbar_matrix(ref: Reference, kernel: Kernel) -> np.ndarray:
    """dim_y x N matrix with columns k(x_n, p(x_n)/lambda)."""
    if not ref.lambda_bar > 0:
        raise ZeroLambda("lambda_bar must be positive")
    _, _, _, p, _ = eval_P_batch(kernel, ref.gradF, ref.u_bar.points, 0)
    A = kernel.evaluate(ref.u_bar.points, 0).A  # (N, dy, dh)
    return np.einsum("nyh,nh->yn", A, p / ref.lambda_bar)


def condition_of(matrix: np.ndarray) -> dict:
    sv = np.linalg.svd(np.asarray(matrix, float), compute_uv=False)
    min_sv = float(sv.min()) if sv.size else 0.0
    cond = float(sv.max() / min_sv) if min_sv > 0 else math.inf
    return {"cond": cond, "min_sv": min_sv, "rank_deficient": min_sv <= 1e-12 * max(1.0, float(sv.max()))}


def kbar_condition(ref: Reference, kernel: Kernel) -> dict:
    return condition_of(kbar_matrix(ref, kernel))


def theta0(ref: Reference, kernel: Kernel) -> float:
    """Smallest curvature -lambda_max(hess P_bar) over the reference support (informational)."""
    _, _, hP, _, ok = eval_P_batch(kernel, ref.gradF, ref.u_bar.points, 2)
    if not np.all(ok):
        return math.nan
    return float(min(-np.linalg.eigvalsh(h).max() for h in hP))


def certificate_profile_ok(ref: Reference, kernel: Kernel, n_grid: int = 20001, slack: float = 1e-9) -> bool:
    """P_bar <= lambda_bar up to slack everywhere on a grid and maximal only near the support."""
    xs = kernel.domain.grid(n_grid)
    P, _, _, _, _ = eval_P_batch(kernel, ref.gradF, xs, 0)
    if P.max() > ref.lambda_bar * (1 + slack) + slack:
        return False
    near = assign_to_balls(ref, xs) >= 0
    return bool(np.all(P[~near] < ref.lambda_bar * (1 - 1e-6)))


def run_metrics(ref: Reference, prob: ProblemSpec, result: RunResult) -> list[dict]:
    """One metrics row per evaluated iterate of ``result`` (which must keep its iterates).

    This includes the last iterate of a run stopped by max_iter, which has no
    history row.
    """
    records = list(result.history)
    if result.final_record is not None and (not records or records[-1] is not result.final_record):
        records.append(result.final_record)
    if len(result.iterates) < len(records):
        raise ValueError("run_metrics needs a run with keep_iterates=True")
    rows = []
    for rec, m in zip(records, result.iterates):
        rep = error_report(ref, m)
        rows.append({
            "k": rec.k,
            "r_j": rec.j_val - ref.j_bar,
            "gap": rec.gap,
            "support_error": rep.support_error,
            "coeff_error": rep.coeff_error,
            "dual_bound": dual_norm_bound(ref, m),
        })
    return rows


def write_metrics(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r["k"]] + [format(float(r[c]), ".17g") for c in METRICS_COLUMNS[1:]])


def precision_cut(rows: list[dict], ref: Reference) -> int:
    """Number of leading rows before r_j first reaches the rounding floor of j.

    From there on the iterate agrees with the reference to working precision
    and the error series only record the reference's own lumping.
    """
    floor = 1e-13 * max(1.0, abs(ref.j_bar))
    for i, r in enumerate(rows):
        if r["r_j"] <= floor:
            return i
    return len(rows)


def series_rate(rows: list[dict], ref: Reference, key: str) -> RateFit | None:
    cut = precision_cut(rows, ref)
    try:
        return tail_rate([r[key] for r in rows[:cut]])
    except ValueError:
        return None


def summarize(ref: Reference, prob: ProblemSpec, result: RunResult, rows: list[dict], tol: float) -> dict:
    """summary.json content for one method."""
    fits = {name: series_rate(rows, ref, key) for name, key in
            (("residual", "r_j"), ("support", "support_error"), ("coeff", "coeff_error"))}
    iters = len(result.history) if result.converged else None
    kb = kbar_condition(ref, prob.kernel) if ref.lambda_bar > 0 else {"cond": math.nan, "min_sv": 0.0}
    out = {
        "zeta_residual": fits["residual"].zeta if fits["residual"] else None,
        "zeta_support": fits["support"].zeta if fits["support"] else None,
        "zeta_coeff": fits["coeff"].zeta if fits["coeff"] else None,
        "r2_residual": fits["residual"].r2 if fits["residual"] else None,
        "r2_support": fits["support"].r2 if fits["support"] else None,
        "r2_coeff": fits["coeff"].r2 if fits["coeff"] else None,
        "cond_kbar": kb["cond"],
        "min_sv_kbar": kb["min_sv"],
        "theta0": theta0(ref, prob.kernel),
        "iters_to_tol": iters,
        "final_support": len(result.final),
        "status": result.status,
        "tol": tol,
    }
    return out


def write_summary(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
