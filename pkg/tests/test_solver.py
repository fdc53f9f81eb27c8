import math

import numpy as np
import pytest

from lovofit.datagen import TRUE_PARAMS, generate
from lovofit.lovo import (
    LovoProblem,
    Observation,
    active_jacobian,
    lovo_gradient,
    select_active,
    sp_value,
)
from lovofit.models import EvaluationError, Model, builtin_model
from lovofit.solver import (
    ACCEPT_RHO,
    ACCEPT_SIMPLE,
    STATUS_CONVERGED,
    STATUS_MAX_ITER,
    STATUS_NUMERIC,
    STATUS_STALL,
    SolverParams,
    lm_direction,
    rho,
    solve,
)


def linear_problem(ts, ys, p):
    data = tuple(Observation((t,), y) for t, y in zip(ts, ys))
    return LovoProblem(data, builtin_model("linear"), p)


# --------------------------------------------------------------------- params


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(eps_grad=0.0),
        dict(lambda0=-1.0),
        dict(lambda_min=0.0),
        dict(lambda_bar=1.0),
        dict(max_iter=0),
        dict(max_inner=0),
        dict(acceptance="maybe"),
        dict(mu=0.0),
        dict(mu=1.0),
    ],
)
def test_solver_params_validation(kwargs):
    with pytest.raises(ValueError):
        SolverParams(**kwargs)


def test_solver_params_defaults():
    p = SolverParams()
    assert p.eps_grad == 1e-4
    assert p.lambda0 == 1.0
    assert p.lambda_min == 1e-16
    assert p.lambda_bar == 2.0
    assert p.max_iter == 400
    assert p.max_inner == 50
    assert p.acceptance == ACCEPT_SIMPLE
    assert p.mu == 0.1


# --------------------------------------------------------------- lm_direction


def test_lm_direction_solves_damped_normal_equations():
    rng = np.random.default_rng(1)
    for _ in range(20):
        J = rng.standard_normal((7, 3))
        F = rng.standard_normal(7)
        gamma = float(rng.uniform(0.01, 10.0))
        d = lm_direction(J, F, gamma)
        lhs = (J.T @ J + gamma * np.eye(3)) @ d
        assert np.allclose(lhs, -J.T @ F, atol=1e-10)


def test_lm_direction_rejects_negative_damping():
    with pytest.raises(ValueError):
        lm_direction(np.eye(2), np.ones(2), -1.0)


def test_lm_direction_singular_without_damping():
    J = np.array([[1.0, 1.0], [2.0, 2.0]])  # rank 1
    with pytest.raises(np.linalg.LinAlgError):
        lm_direction(J, np.ones(2), 0.0)
    d = lm_direction(J, np.ones(2), 1e-8)  # any damping regularizes it
    assert np.all(np.isfinite(d))


# ----------------------------------------------------------------- solve runs


def test_recovers_exact_line():
    pb = linear_problem([1, 2, 3, 4], [3, 5, 7, 9], 4)  # y = 2t + 1
    out = solve(pb, np.zeros(2))
    assert out.converged
    assert out.x == pytest.approx([2.0, 1.0], abs=1e-6)
    assert out.sp < 1e-10
    assert np.array_equal(out.active_indices, [0, 1, 2, 3])


def test_ignores_planted_outlier():
    ts = [1, 2, 3, 4, 5, 6]
    ys = [2 * t + 1 for t in ts]
    ys[3] = 500.0
    pb = linear_problem(ts, ys, 5)
    out = solve(pb, np.zeros(2))
    assert out.converged
    assert out.x == pytest.approx([2.0, 1.0], abs=1e-6)
    assert 3 not in set(out.active_indices.tolist())


def test_x0_shape_validation():
    pb = linear_problem([1, 2], [1, 2], 2)
    with pytest.raises(ValueError):
        solve(pb, np.zeros(3))


def test_max_iter_status():
    inst = generate("logistic", 20, 18, 3)
    pb = LovoProblem(inst.dataset, builtin_model("logistic"), 18)
    out = solve(pb, np.zeros(4), SolverParams(max_iter=2), engine="python")
    assert out.status == STATUS_MAX_ITER
    assert out.iterations == 2


def test_numeric_error_at_start():
    def nope(x, t):
        raise EvaluationError("cannot")

    model = Model(name="nope", n=1, m=1, eval=nope,
                  jac_row=lambda x, t: np.array([1.0]))
    pb = LovoProblem((Observation((1.0,), 1.0),), model, 1)
    out = solve(pb, np.zeros(1))
    assert out.status == STATUS_NUMERIC
    assert out.iterations == 0
    assert math.isnan(out.sp)
    assert out.active_indices.size == 0


def test_inner_stall_when_no_step_evaluates():
    # evaluation succeeds only exactly at the origin, so every trial step
    # fails and the inner loop exhausts its rejection budget
    def origin_only(x, t):
        if x[0] != 0.0:
            raise EvaluationError("off limits")
        return 0.0

    model = Model(name="frozen", n=1, m=1, eval=origin_only,
                  jac_row=lambda x, t: np.array([1.0]))
    pb = LovoProblem((Observation((1.0,), 5.0),), model, 1)
    out = solve(pb, np.zeros(1), SolverParams(max_inner=3))
    assert out.status == STATUS_STALL
    assert out.iterations == 0
    assert out.x == pytest.approx([0.0])


def test_engine_dispatch_rules():
    pb = linear_problem([1, 2, 3], [1, 2, 3], 3)
    custom = Model(name="c", n=1, m=1, eval=lambda x, t: x[0] * t[0])
    pb_custom = LovoProblem(pb.dataset, custom, 3)
    with pytest.raises(ValueError, match="no compiled kernel"):
        solve(pb_custom, np.zeros(1), engine="kernel")
    with pytest.raises(ValueError, match="trace"):
        solve(pb, np.zeros(2), SolverParams(collect_trace=True), engine="kernel")
    with pytest.raises(ValueError, match="unknown engine"):
        solve(pb, np.zeros(2), engine="fastest")


def test_custom_model_runs_through_reference_engine():
    # exponential decay with finite-difference derivatives only
    decay = Model(name="decay", n=2, m=1,
                  eval=lambda x, t: x[0] * math.exp(-x[1] * t[0]))
    ts = np.linspace(0.0, 2.0, 12)
    ys = 3.0 * np.exp(-1.5 * ts)
    data = tuple(Observation((t,), y) for t, y in zip(ts, ys))
    pb = LovoProblem(data, decay, 12)
    out = solve(pb, np.array([1.0, 0.5]))
    assert out.converged
    assert out.x == pytest.approx([3.0, 1.5], rel=1e-4)


# ------------------------------------------------------------------ the trace


def collect_traces(acceptance):
    traces = []
    for name in ("linear", "cubic", "expon", "logistic"):
        model = builtin_model(name)
        for seed in range(6):
            inst = generate(name, 12, 10, 100 + seed)
            pb = LovoProblem(inst.dataset, model, 10)
            rng = np.random.default_rng(seed)
            params = SolverParams(acceptance=acceptance, collect_trace=True)
            out = solve(pb, rng.standard_normal(model.n), params)
            traces.append(out)
    return traces


def test_trace_strict_decrease_in_simple_mode():
    for out in collect_traces(ACCEPT_SIMPLE):
        accepted = [t for t in out.trace if t.accepted]
        sps = [t.sp for t in accepted]
        assert all(b < a for a, b in zip(sps, sps[1:])), out.status
        assert all(math.isnan(t.rho) for t in out.trace)
        # at most one acceptance per outer iteration
        per_iter = {}
        for t in out.trace:
            per_iter[t.iteration] = per_iter.get(t.iteration, 0) + t.accepted
        assert all(v <= 1 for v in per_iter.values())


def test_trace_ratio_threshold_in_rho_mode():
    saw_accept = False
    for out in collect_traces(ACCEPT_RHO):
        for t in out.trace:
            if t.accepted:
                saw_accept = True
                assert t.rho >= SolverParams().mu
    assert saw_accept


def test_trace_lambda_escalates_between_rejections():
    inst = generate("cubic", 10, 9, 77)
    pb = LovoProblem(inst.dataset, builtin_model("cubic"), 9)
    out = solve(pb, np.zeros(4), SolverParams(collect_trace=True))
    by_iter = {}
    for t in out.trace:
        by_iter.setdefault(t.iteration, []).append(t)
    for records in by_iter.values():
        lams = [t.lam for t in records]
        assert all(b == a * 2.0 for a, b in zip(lams, lams[1:]))
        for t in records:
            assert t.gamma == pytest.approx(t.lam * t.grad_norm**2, rel=1e-12)


def test_trace_off_by_default():
    pb = linear_problem([1, 2, 3], [1, 2, 3], 3)
    assert solve(pb, np.zeros(2)).trace == ()


# ------------------------------------------------------------------- rho test


def test_rho_rejects_zero_step():
    pb = linear_problem([1, 2, 3], [3, 5, 8], 3)
    x = np.array([1.0, 1.0])
    act = select_active(pb, x)
    with pytest.raises(ValueError, match="predicted"):
        rho(pb, x, np.zeros(2), act, 1.0)


def test_rho_approaches_two_under_heavy_damping():
    inst = generate("cubic", 10, 9, 11, noise_sigma=1.0)
    pb = LovoProblem(inst.dataset, builtin_model("cubic"), 9)
    x = np.asarray(TRUE_PARAMS["cubic"])
    act = select_active(pb, x)
    g = lovo_gradient(pb, x, act)
    J = active_jacobian(pb, x, act)
    F = act.residuals[act.indices]
    values = []
    for lam in (1e4, 1e6, 1e8):
        gamma = lam * float(g @ g)
        d = lm_direction(J, F, gamma)
        values.append(rho(pb, x, d, act, gamma))
    assert values[-1] == pytest.approx(2.0, abs=1e-3)
    assert all(abs(v - 2.0) < 0.05 for v in values)


def test_rho_near_one_for_tiny_gauss_newton_step_on_smooth_fit():
    # with mild damping near the optimum the quadratic model is accurate,
    # so the ratio should be sane (positive, order one)
    pb = linear_problem([1, 2, 3, 4], [3.1, 4.8, 7.2, 8.9], 4)
    x = np.array([1.9, 1.1])
    act = select_active(pb, x)
    g = lovo_gradient(pb, x, act)
    J = active_jacobian(pb, x, act)
    gamma = 1e-6 * float(g @ g)
    d = lm_direction(J, act.residuals[act.indices], gamma)
    val = rho(pb, x, d, act, gamma)
    assert val == pytest.approx(1.0, abs=1e-6)  # linear model: exact prediction


# ------------------------------------------------------------ engine parity


def test_engines_agree_on_well_conditioned_runs():
    for name in ("linear", "cubic", "expon", "logistic"):
        model = builtin_model(name)
        x_true = np.asarray(TRUE_PARAMS[name])
        inst = generate(name, 16, 14, 900, noise_sigma=1.0)
        pb = LovoProblem(inst.dataset, model, 14)
        x0 = x_true * 1.02
        for acceptance in (ACCEPT_SIMPLE, ACCEPT_RHO):
            params = SolverParams(acceptance=acceptance)
            a = solve(pb, x0, params, engine="python")
            b = solve(pb, x0, params, engine="kernel")
            assert a.status == STATUS_CONVERGED
            assert b.status == STATUS_CONVERGED
            scale = np.maximum(1.0, np.abs(a.x))
            assert np.all(np.abs(a.x - b.x) <= 1e-6 * scale), (name, acceptance)
            assert a.sp == pytest.approx(b.sp, rel=1e-9)


def test_reported_objective_is_canonical_for_both_engines():
    # whatever engine produced x, the outcome must quote exactly the same
    # objective/gradient the library computes at that x
    inst = generate("cubic", 12, 10, 21)
    pb = LovoProblem(inst.dataset, builtin_model("cubic"), 10)
    for engine in ("python", "kernel"):
        out = solve(pb, np.zeros(4), engine=engine)
        assert out.sp == sp_value(pb, out.x)
        act = select_active(pb, out.x)
        g = lovo_gradient(pb, out.x, act)
        assert out.grad_norm == float(np.sqrt(g @ g))
        assert np.array_equal(out.active_indices, act.indices)


def test_auto_engine_matches_explicit_kernel():
    inst = generate("linear", 10, 9, 5)
    pb = LovoProblem(inst.dataset, builtin_model("linear"), 9)
    x0 = np.array([0.3, -0.7])
    auto = solve(pb, x0)
    kern = solve(pb, x0, engine="kernel")
    assert auto.status == kern.status
    assert np.array_equal(auto.x, kern.x)
