import csv

import numpy as np
import pytest

from pdap import solver as solver_mod
from pdap.certificate import compute_dual
from pdap.checks import default_kernel
from pdap.measure import DiscreteMeasure
from pdap.objective import LinearCost, NormBall, ProblemSpec, QuadraticLoss, UnsupportedCost, eval_j_finite
from pdap.operator import apply_K
from pdap.solver import (
    HISTORY_COLUMNS,
    HistoryWriter,
    SolverConfig,
    SolverError,
    _prox_gradient_passes,
    gcg_step,
    pdap_step,
    read_history,
    run,
    spinat_step,
    support_growth_ok,
    tv_bound_ok,
)
from pdap.subproblem import ActiveSet, solve_coefficients, subproblem_objective

KERNEL = default_kernel()


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(21)
    src = DiscreteMeasure(np.array([[-0.5], [0.3]]), rng.standard_normal((2, 4)))
    y_d = apply_K(KERNEL, src) + 0.05 * rng.standard_normal(28)
    return ProblemSpec(KERNEL, QuadraticLoss(y_d), LinearCost(1.0))


@pytest.fixture(scope="module")
def small_optimum(small_problem):
    res = run(small_problem, SolverConfig(method="pdap", tol=1e-12, max_iter=80, record_timing=False))
    assert res.converged
    return res


@pytest.mark.parametrize("kwargs", [dict(tol=0.0), dict(max_iter=0), dict(method="newton"),
                                    dict(spinat_steps=0), dict(armijo_gamma=1.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_config_labels_and_maximizer_dict():
    cfg = SolverConfig(method="spinat", spinat_steps=100, maximizer={"n_starts": 10})
    assert cfg.label == "spinat100" and cfg.maximizer.n_starts == 10


def test_huge_tol_stops_at_first_record(small_problem):
    res = run(small_problem, SolverConfig(method="gcg", tol=1e10))
    assert res.converged and len(res.history) == 1 and res.history[0].k == 0
    assert len(res.final) == 0


@pytest.mark.parametrize("method", ["pdap", "gcg", "spinat"])
def test_max_iter_one_records_one_step(small_problem, method):
    res = run(small_problem, SolverConfig(method=method, max_iter=1, record_timing=False))
    assert res.status == "max_iter" and len(res.history) == 1
    assert res.final_record.k == 1


def test_gcg_first_step_inserts_one_point(small_problem):
    res = run(small_problem, SolverConfig(method="gcg", max_iter=1))
    assert len(res.final) == 1
    np.testing.assert_array_equal(res.final.points[0], res.history[0].xhat)


def test_zero_is_optimal_for_weak_data(small_problem):
    weak = ProblemSpec(KERNEL, QuadraticLoss(1e-3 * small_problem.loss.y_d), LinearCost(1.0))
    m = DiscreteMeasure.empty(1, 4)
    dual = compute_dual(weak, m)
    assert dual.p_max < 1.0
    nxt, info = gcg_step(weak, m, dual, SolverConfig(method="gcg"))
    assert len(nxt) == 0 and info.step_size == 0.0
    res = run(weak, SolverConfig(method="gcg"))
    assert res.converged and len(res.history) == 1


def test_gcg_step_at_optimum_keeps_iterate(small_problem, small_optimum):
    opt = small_optimum.final
    dual = compute_dual(small_problem, opt)
    nxt, _ = gcg_step(small_problem, opt, dual, SolverConfig(method="gcg"))
    assert eval_j_finite(small_problem, nxt) >= eval_j_finite(small_problem, opt) - 1e-12 * small_problem.scale
    assert eval_j_finite(small_problem, nxt) <= eval_j_finite(small_problem, opt) + 1e-12 * small_problem.scale


def test_spinat_one_pass_fixed_point(small_problem):
    act = ActiveSet.build(KERNEL, [[-0.5], [0.3]])
    sol = solve_coefficients(small_problem, act)
    m = DiscreteMeasure(act.points, sol.coeffs)
    out = _prox_gradient_passes(small_problem, m, 1)
    np.testing.assert_allclose(out.coeffs, m.coeffs, atol=1e-10)


def test_spinat_long_passes_match_subproblem(small_problem):
    act = ActiveSet.build(KERNEL, [[-0.5], [0.3]])
    exact = subproblem_objective(small_problem, act, solve_coefficients(small_problem, act).coeffs)
    m = DiscreteMeasure(act.points, np.zeros((2, 4)))
    # the passes reach the exact objective to rounding within ~100 steps here;
    # 5000 stand in for l -> infinity
    long = _prox_gradient_passes(small_problem, m, 5000)
    assert abs(subproblem_objective(small_problem, act, long.coeffs) - exact) <= 1e-8


def test_pdap_step_with_xhat_in_support(small_problem):
    m = run(small_problem, SolverConfig(method="pdap", max_iter=3)).final
    dual = compute_dual(small_problem, m)
    dual.xhat = m.points[0].copy()
    nxt, info = pdap_step(small_problem, m, dual, SolverConfig())
    assert len(info.lambda_points) == len(m)
    assert eval_j_finite(small_problem, nxt) <= eval_j_finite(small_problem, m) + 1e-12 * small_problem.scale


def test_pdap_optimal_input_terminates(small_problem, small_optimum):
    res = small_optimum
    again = run(small_problem, SolverConfig(method="pdap", tol=1e-12), u0=res.final)
    assert again.converged and len(again.history) == 1


def test_pdap_requires_linear_cost(small_problem):
    with pytest.raises(UnsupportedCost):
        run(ProblemSpec(KERNEL, small_problem.loss, NormBall(2.0)), SolverConfig(method="pdap"))


def test_gcg_with_norm_ball(small_problem):
    prob = ProblemSpec(KERNEL, small_problem.loss, NormBall(2.0))
    res = run(prob, SolverConfig(method="gcg", max_iter=15))
    j = [r.j_val for r in res.history]
    assert all(b <= a + 1e-12 * prob.scale for a, b in zip(j, j[1:]))
    assert tv_bound_ok(prob, res)


def test_history_writer_columns(tmp_path, small_problem):
    path = tmp_path / "h.csv"
    with HistoryWriter(path) as w:
        run(small_problem, SolverConfig(method="gcg", max_iter=3, record_timing=False), on_record=w)
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == HISTORY_COLUMNS
    rows = read_history(path)
    assert [int(r["k"]) for r in rows] == [0, 1, 2]
    assert all(float(r["wall_ms"]) == 0.0 for r in rows)


def test_failed_step_keeps_partial_history(tmp_path, small_problem, monkeypatch):
    calls = {"n": 0}
    real = solver_mod.solve_coefficients

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise RuntimeError("injected failure")
        return real(*args, **kwargs)

    monkeypatch.setattr(solver_mod, "solve_coefficients", flaky)
    path = tmp_path / "h.csv"
    with pytest.raises(SolverError) as info:
        with HistoryWriter(path) as w:
            run(small_problem, SolverConfig(method="pdap", max_iter=10), on_record=w)
    assert len(info.value.partial.history) == 2
    assert len(read_history(path)) == 2


# Properties over the full default comparison ---------------------------------

@pytest.mark.slow
@pytest.mark.parametrize("name", ["pdap", "gcg", "spinat1", "spinat100"])
def test_monotone_descent_and_support_growth(compare_run, name):
    outcome = compare_run["outcome"]
    res = outcome.results[name]
    j = [r.j_val for r in res.history] + [res.final_record.j_val]
    scale = outcome.problem.scale
    assert all(b <= a + 1e-12 * scale for a, b in zip(j, j[1:]))
    assert support_growth_ok(res, name)
    assert tv_bound_ok(outcome.problem, res)


@pytest.mark.slow
def test_pdap_dominates_gcg(compare_run):
    res = compare_run["outcome"].results
    pdap = [r.j_val for r in res["pdap"].history] + [res["pdap"].final_record.j_val]
    gcg = [r.j_val for r in res["gcg"].history] + [res["gcg"].final_record.j_val]
    for k, jg in enumerate(gcg):
        jp = pdap[min(k, len(pdap) - 1)]
        assert jp <= jg + 1e-12


@pytest.mark.slow
def test_pdap_termination_certificate(compare_run):
    outcome = compare_run["outcome"]
    res = outcome.results["pdap"]
    assert res.converged
    r_final = res.final_record.j_val - outcome.reference.j_bar
    assert r_final <= outcome.problem.m0_bound * 1e-12 + 1e-13 * outcome.problem.scale
