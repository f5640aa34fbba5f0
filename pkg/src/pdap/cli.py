"""Command line entry point: ``pdap {solve,compare,reference,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import checks, diagnostics
from .experiment import ExperimentConfig, build_problem
from .measure import save_measure
from .solver import HistoryWriter, RunResult, SolverError, run

log = logging.getLogger("pdap")

EXIT_CONVERGED, EXIT_ERROR, EXIT_MAX_ITER = 0, 1, 2


def load_config(path: str | None, seed: int | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path) if path else ExperimentConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg


def _base_solver(cfg: ExperimentConfig, method: str, spinat_steps: int | None) -> dict:
    if method in cfg.solvers:
        base = dict(cfg.solvers[method])
    else:
        matches = [s for s in cfg.solvers.values() if s.get("method") == method]
        if spinat_steps is not None:
            matches = [s for s in matches if s.get("spinat_steps", 1) == spinat_steps] or matches
        base = dict(matches[0]) if matches else {"method": method}
    base["method"] = method
    return base


def solver_overrides(args) -> dict:
    out = {}
    if args.tol is not None:
        out["tol"] = args.tol
    if args.max_iter is not None:
        out["max_iter"] = args.max_iter
    if args.spinat_steps is not None:
        out["spinat_steps"] = args.spinat_steps
    if args.no_timing:
        out["record_timing"] = False
    return out


def solve_to_dir(cfg: ExperimentConfig, solver: dict, out_dir, keep_iterates: bool = False) -> RunResult:
    """Run one method, streaming history.csv and writing measure_final.json into ``out_dir``."""
    from .solver import SolverConfig

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prob, _ = build_problem(cfg)
    scfg = SolverConfig(**solver)
    with HistoryWriter(out_dir / "history.csv") as writer:
        try:
            result = run(prob, scfg, on_record=writer, keep_iterates=keep_iterates)
        except SolverError as exc:
            save_measure(exc.partial.final, out_dir / "measure_final.json")
            raise
    save_measure(result.final, out_dir / "measure_final.json")
    return result


def cmd_solve(args) -> int:
    try:
        cfg = load_config(args.config, args.seed)
        solver = {**_base_solver(cfg, args.method, args.spinat_steps), **solver_overrides(args)}
        out = Path(args.out or cfg.output_dir)
        result = solve_to_dir(cfg, solver, out)
    except (OSError, ValueError, KeyError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    rec = result.final_record
    print(
        f"{solver['method']}: {result.status} after {len(result.history)} iterations, "
        f"j = {rec.j_val:.15g}, gap = {rec.gap:.3e}, support = {rec.support_size}"
    )
    return EXIT_CONVERGED if result.converged else EXIT_MAX_ITER


def _reference_payload(ref: diagnostics.Reference, prob) -> dict:
    kb = diagnostics.kbar_condition(ref, prob.kernel) if ref.lambda_bar > 0 else {"cond": None, "min_sv": 0.0}
    return {
        "j_bar": ref.j_bar,
        "lambda_bar": ref.lambda_bar,
        "R": ref.R,
        "converged": ref.converged,
        "iterations": ref.iterations,
        "n_points": ref.n_points,
        "cond_kbar": kb["cond"],
        "min_sv_kbar": kb["min_sv"],
        "theta0": diagnostics.theta0(ref, prob.kernel),
        "points": ref.u_bar.points.tolist(),
        "coeffs": ref.u_bar.coeffs.tolist(),
    }


def compute_reference_for(cfg: ExperimentConfig) -> diagnostics.Reference:
    prob, _ = build_problem(cfg)
    r = cfg.reference
    return diagnostics.compute_reference(prob, r["tol"], r["max_iter"], r["lump_radius"])


def cmd_reference(args) -> int:
    try:
        cfg = load_config(args.config, args.seed)
        prob, _ = build_problem(cfg)
        ref = compute_reference_for(cfg)
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = _reference_payload(ref, prob)
        (out / "reference.json").write_text(json.dumps(payload, indent=2) + "\n")
        save_measure(ref.u_bar, out / "reference_measure.json")
    except (OSError, ValueError, KeyError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"reference: {ref.n_points} points, j_bar = {ref.j_bar:.15g}, R = {ref.R:.3g}, "
          f"cond(Kbar) = {payload['cond_kbar']:.4g}")
    return EXIT_CONVERGED


def _job(kind: str, cfg_json: str, name: str, solver: dict | None, out_dir: str):
    """Pool worker: returns (name, payload, error message or None)."""
    cfg = ExperimentConfig.from_dict(json.loads(cfg_json))
    try:
        if kind == "reference":
            return name, compute_reference_for(cfg), None
        return name, solve_to_dir(cfg, solver, Path(out_dir) / name, keep_iterates=True), None
    except Exception as exc:  # reported per method; the others still run
        partial = getattr(exc, "partial", None)
        return name, partial, f"{type(exc).__name__}: {exc}"


def max_workers(n_jobs: int) -> int:
    env = os.environ.get("SPARSE_SOLVER_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def residual_at(result: RunResult, ref: diagnostics.Reference, k: int) -> float:
    """r_j(u^k); beyond the last row the last evaluated iterate stands in (it is final)."""
    rec = result.history[k] if k < len(result.history) else result.final_record
    return rec.j_val - ref.j_bar


@dataclass
class CompareOutcome:
    reference: diagnostics.Reference
    results: dict = field(repr=False)
    report: dict = field(default_factory=dict)
    problem: object = field(repr=False, default=None)


def run_compare(cfg: ExperimentConfig, out_dir, names=None, no_timing: bool = False) -> CompareOutcome:
    """All configured methods on one data set, diagnostics against one shared reference."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(names or cfg.solvers)
    cfg_json = json.dumps(json.loads(cfg.to_json()))
    jobs = [("reference", cfg_json, "reference", None, str(out_dir))]
    for name in names:
        solver = dict(cfg.solvers[name])
        if no_timing:
            solver["record_timing"] = False
        jobs.append(("method", cfg_json, name, solver, str(out_dir)))
    workers = max_workers(len(jobs))
    if workers == 1:
        results = [_job(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, *zip(*jobs)))
    by_name = {name: (payload, err) for name, payload, err in results}
    ref, ref_err = by_name.pop("reference")
    if ref_err:
        raise RuntimeError(f"reference failed: {ref_err}")
    prob, _ = build_problem(cfg)
    (out_dir / "reference.json").write_text(json.dumps(_reference_payload(ref, prob), indent=2) + "\n")
    report = {"methods": {}, "errors": {}}
    results = {}
    for name in names:
        result, err = by_name[name]
        results[name] = result
        if err:
            report["errors"][name] = err
            log.error("%s failed: %s", name, err)
            continue
        rows = diagnostics.run_metrics(ref, prob, result)
        diagnostics.write_metrics(out_dir / name / "metrics.csv", rows)
        summary = diagnostics.summarize(ref, prob, result, rows, cfg.solvers[name].get("tol", 1e-12))
        diagnostics.write_summary(out_dir / name / "summary.json", summary)
        summary["residual_k50"] = residual_at(result, ref, 50)
        report["methods"][name] = summary
    (out_dir / "comparison.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return CompareOutcome(ref, results, report, prob)


def cmd_compare(args) -> int:
    try:
        cfg = load_config(args.config, args.seed)
        report = run_compare(cfg, args.out or cfg.output_dir, no_timing=args.no_timing).report
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for name, s in report["methods"].items():
        print(f"{name:<10} {s['status']:<9} support {s['final_support']:>3}  r_j(k=50) {s['residual_k50']:.3e}  "
              f"zeta_residual {s['zeta_residual']}")
    for name, err in report["errors"].items():
        print(f"{name:<10} failed: {err}")
    return EXIT_ERROR if report["errors"] else EXIT_CONVERGED


def cmd_check(args) -> int:
    results = checks.run_checks(oracle_steps=args.oracle_steps)
    print(checks.format_table(results))
    return EXIT_CONVERGED if all(r.passed for r in results) else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pdap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON (defaults built in)")
        p.add_argument("--seed", type=int, help="noise seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-timing", action="store_true", help="write wall_ms = 0 for byte-stable output")

    p = sub.add_parser("solve", help="run one method and write history.csv and measure_final.json")
    common(p)
    p.add_argument("--method", choices=("pdap", "gcg", "spinat"), default="pdap")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--spinat-steps", type=int)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", help="run all configured methods against one reference")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("reference", help="compute and store the lumped reference solution")
    common(p)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("check", help="run the property suite")
    p.add_argument("--oracle-steps", type=int, default=100_000)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
