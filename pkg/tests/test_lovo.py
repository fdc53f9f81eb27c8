from itertools import combinations

import numpy as np
import pytest

from lovofit.lovo import (
    LovoProblem,
    Observation,
    active_jacobian,
    lovo_gradient,
    residual_vector,
    select_active,
    sp_value,
)
from lovofit.models import builtin_model


def brute_force_sp(problem, x):
    """Minimum of 0.5*||F_C||^2 over every p-subset C — independent oracle."""
    F = [problem.dataset[i].y - problem.model.eval(np.asarray(x, float),
                                                   np.asarray(problem.dataset[i].t))
         for i in range(problem.r)]
    best = None
    for combo in combinations(range(problem.r), problem.p):
        val = 0.5 * sum(F[i] ** 2 for i in combo)
        if best is None or val < best:
            best = val
    return best


def make_linear_problem(ts, ys, p):
    data = tuple(Observation((t,), y) for t, y in zip(ts, ys))
    return LovoProblem(data, builtin_model("linear"), p)


def test_observation_coerces_and_validates():
    obs = Observation(3, 4)
    assert obs.t == (3.0,)
    assert obs.y == 4.0
    assert Observation((1, 2), 0).t == (1.0, 2.0)
    with pytest.raises(ValueError):
        Observation((float("nan"),), 1.0)
    with pytest.raises(ValueError):
        Observation((1.0,), float("inf"))


def test_problem_validation():
    model = builtin_model("linear")
    data = (Observation((1.0,), 1.0), Observation((2.0,), 2.0))
    with pytest.raises(ValueError):
        LovoProblem((), model, 1)
    with pytest.raises(ValueError):
        LovoProblem(data, model, 0)
    with pytest.raises(ValueError):
        LovoProblem(data, model, 3)
    with pytest.raises(ValueError, match="observation 0"):
        LovoProblem((Observation((1.0, 2.0), 0.0),), model, 1)
    pb = LovoProblem(data, model, 2)
    assert pb.r == 2
    assert pb.t_matrix.shape == (2, 1)
    assert np.array_equal(pb.y_vector, [1.0, 2.0])


def test_residual_vector_simple():
    pb = make_linear_problem([1, 2, 3], [10, 20, 30], 2)
    F = residual_vector(pb, (10.0, 0.0))
    assert np.array_equal(F, [0.0, 0.0, 0.0])
    F = residual_vector(pb, (0.0, 1.0))
    assert np.array_equal(F, [9.0, 19.0, 29.0])


def test_select_active_picks_smallest_squares():
    pb = make_linear_problem([1, 2, 3, 4], [0.1, -5.0, 0.2, 7.0], 2)
    act = select_active(pb, (0.0, 0.0))
    assert np.array_equal(act.indices, [0, 2])
    assert act.sp_value == pytest.approx(0.5 * (0.01 + 0.04))
    assert act.residuals.shape == (4,)
    # residuals are reported for every point, trusted or not
    assert act.residuals[3] == 7.0


def test_select_active_breaks_ties_by_index():
    # residuals (1, -1, 1): squared all equal; stable order keeps low indices
    pb = make_linear_problem([1, 1, 1], [1.0, -1.0, 1.0], 2)
    act = select_active(pb, (0.0, 0.0))
    assert np.array_equal(act.indices, [0, 1])


def test_sp_value_matches_enumeration_oracle():
    rng = np.random.default_rng(11)
    model = builtin_model("linear")
    for _ in range(40):
        r = int(rng.integers(1, 7))
        data = tuple(
            Observation((float(t),), float(y))
            for t, y in zip(rng.uniform(-3, 3, r), rng.uniform(-3, 3, r))
        )
        for p in range(1, r + 1):
            pb = LovoProblem(data, model, p)
            for _ in range(5):
                x = rng.standard_normal(2) * 2.0
                got = sp_value(pb, x)
                want = brute_force_sp(pb, x)
                assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_classical_least_squares_when_p_equals_r():
    pb = make_linear_problem([1, 2, 3], [2, 3, 10], 3)
    x = np.array([1.0, 1.0])
    F = residual_vector(pb, x)
    assert sp_value(pb, x) == pytest.approx(0.5 * float(F @ F))


def test_active_jacobian_is_negated_model_jacobian():
    model = builtin_model("cubic")
    data = tuple(Observation((float(t),), float(t)) for t in range(1, 6))
    pb = LovoProblem(data, model, 3)
    x = np.array([0.1, -0.2, 0.3, 0.4])
    act = select_active(pb, x)
    J = active_jacobian(pb, x, act)
    assert np.array_equal(J, -model.jac_many(x, pb.t_matrix[act.indices]))


def test_gradient_matches_finite_difference_of_objective():
    # compare d S_p / d x against central differences wherever the trusted
    # set is locally stable (a clear gap between p-th and (p+1)-th residual)
    rng = np.random.default_rng(5)
    model = builtin_model("cubic")
    checked = 0
    while checked < 20:
        data = tuple(
            Observation((float(t),), float(y))
            for t, y in zip(rng.uniform(-2, 2, 8), rng.uniform(-4, 4, 8))
        )
        pb = LovoProblem(data, model, 5)
        x = rng.standard_normal(4)
        R = np.sort(residual_vector(pb, x) ** 2)
        if R[5] - R[4] < 1e-3:  # selection could flip under perturbation
            continue
        act = select_active(pb, x)
        grad = lovo_gradient(pb, x, act)
        h = 1e-6
        fd = np.empty(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd[j] = (sp_value(pb, x + e) - sp_value(pb, x - e)) / (2 * h)
        assert np.allclose(grad, fd, rtol=1e-5, atol=1e-6)
        checked += 1


def test_overflowing_point_yields_infinite_objective():
    pb = make_linear_problem([1, 2], [0, 0], 2)
    # parameters big enough that the squared residuals exceed float range
    val = sp_value(pb, (1e200, 0.0))
    assert np.isinf(val)
