"""Damped Gauss-Newton (Levenberg-Marquardt) iteration on the LOVO objective.

Each outer iteration works on the currently trusted points: it solves

    (J^T J + gamma I) d = -J^T F,      gamma = lambda * ||J^T F||^2,

for the trusted residual Jacobian ``J``, and accepts the step when the
objective over the *re-selected* trusted set decreases (optionally a
ratio test against the quadratic model).  Rejections double ``lambda`` and
re-solve; acceptances relax it.  Because the damping is proportional to the
squared gradient norm, steps become nearly Gauss-Newton close to a solution
and nearly (scaled) steepest descent far from one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .lovo import active_jacobian, lovo_gradient, select_active, sp_value
from .models import EvaluationError

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_NUMERIC = "numeric_error"
STATUS_STALL = "inner_stall"

_KERNEL_STATUS = (STATUS_CONVERGED, STATUS_MAX_ITER, STATUS_NUMERIC, STATUS_STALL)

ACCEPT_SIMPLE = "simple_decrease"
ACCEPT_RHO = "rho_test"


@dataclass(frozen=True)
class SolverParams:
    """Tuning knobs for the iteration.

    ``eps_grad`` is the stationarity tolerance on the trusted-set gradient;
    ``lambda0``/``lambda_min``/``lambda_bar`` control the damping schedule;
    ``max_iter`` caps accepted steps and ``max_inner`` caps consecutive
    rejections inside one outer iteration.  ``acceptance`` selects plain
    objective decrease or the ratio test with threshold ``mu``.
    """

    eps_grad: float = 1e-4
    lambda0: float = 1.0
    lambda_min: float = 1e-16
    lambda_bar: float = 2.0
    max_iter: int = 400
    max_inner: int = 50
    acceptance: str = ACCEPT_SIMPLE
    mu: float = 0.1
    collect_trace: bool = False

    def __post_init__(self):
        if self.eps_grad <= 0:
            raise ValueError("eps_grad must be positive")
        if self.lambda0 <= 0 or self.lambda_min <= 0:
            raise ValueError("lambda0 and lambda_min must be positive")
        if self.lambda_bar <= 1:
            raise ValueError("lambda_bar must exceed 1")
        if self.max_iter < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be at least 1")
        if self.acceptance not in (ACCEPT_SIMPLE, ACCEPT_RHO):
            raise ValueError(f"unknown acceptance rule: {self.acceptance!r}")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")


class TraceRecord(NamedTuple):
    iteration: int
    lam: float
    gamma: float
    sp: float
    grad_norm: float
    accepted: bool
    rho: float = math.nan  # ratio-test value; NaN in simple-decrease mode


@dataclass(frozen=True)
class SolverOutcome:
    """Result of one solver run.

    ``sp``, ``grad_norm`` and ``active_indices`` always describe the returned
    ``x``; on a numeric failure they may be NaN/empty when the model cannot
    be evaluated there.
    """

    x: np.ndarray
    status: str
    iterations: int
    sp: float
    grad_norm: float
    active_indices: np.ndarray
    trace: tuple = ()

    @property
    def converged(self):
        return self.status == STATUS_CONVERGED


def lm_direction(J, F, gamma):
    """Solve ``(J^T J + gamma I) d = -J^T F`` by Cholesky factorization.

    Raises:
        ValueError: if ``gamma`` is negative.
        numpy.linalg.LinAlgError: if the damped matrix is not positive
            definite (e.g. rank-deficient ``J`` with ``gamma == 0``).
    """
    J = np.asarray(J, dtype=float)
    F = np.asarray(F, dtype=float)
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    A = J.T @ J
    A[np.diag_indices_from(A)] += gamma
    return _damped_solve(A, J.T @ F)


def _damped_solve(A, g):
    """Return ``d`` with ``A d = -g``; ``A`` must already include damping."""
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(g)):
        raise np.linalg.LinAlgError("non-finite linear system")
    c, low = cho_factor(A, lower=True, check_finite=False)
    return cho_solve((c, low), -g, check_finite=False)


def rho(problem, x, d, active, gamma):
    """Actual-over-predicted decrease of the trusted quadratic model.

    The numerator is the drop of the full objective ``S_p``; the denominator
    is the drop predicted by the model
    ``m(d) = 0.5 ||F + J d||^2 + 0.5 gamma ||d||^2`` built on the trusted set
    at ``x``.  For very strong damping the ratio tends to 2.

    Raises:
        ValueError: if the predicted decrease is not positive (degenerate
            model or zero step); callers should escalate the damping.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    F_act = active.residuals[active.indices]
    J = active_jacobian(problem, x, active)
    lin = F_act + J @ d
    md = 0.5 * float(lin @ lin) + 0.5 * gamma * float(d @ d)
    predicted = active.sp_value - md
    if not predicted > 0:
        raise ValueError("nonpositive predicted decrease")
    actual = active.sp_value - sp_value(problem, x + d)
    return actual / predicted


class _State(NamedTuple):
    """Everything the outer loop needs at the current iterate."""

    sp: float
    sel: np.ndarray  # trusted indices, ascending residual order
    F_act: np.ndarray
    grad: np.ndarray
    gn2: float
    JTJ: np.ndarray


def _objective_parts(problem, x):
    """Residuals, trusted selection and S_p at ``x`` (no derivatives)."""
    F = problem.y_vector - problem.model.eval_many(x, problem.t_matrix)
    with np.errstate(over="ignore"):  # inf marks a hopeless trial point
        R = F * F
    chosen = np.argsort(R, kind="stable")[: problem.p]
    spv = 0.5 * float(R[chosen].sum())
    return F, chosen, spv


def _derivative_parts(problem, x, F, chosen, spv):
    """Extend objective parts with gradient data; None signals failure."""
    try:
        Jres = -problem.model.jac_many(x, problem.t_matrix[chosen])
    except EvaluationError:
        return None
    F_act = F[chosen]
    grad = Jres.T @ F_act
    gn2 = float(grad @ grad)
    if not math.isfinite(gn2):
        return None
    return _State(spv, chosen, F_act, grad, gn2, Jres.T @ Jres)


def solve(problem, x0, params=None, engine="auto"):
    """Run the solver from ``x0`` and report the final iterate.

    Args:
        problem: a :class:`~lovofit.lovo.LovoProblem`.
        x0: starting parameter vector of length ``model.n``.
        params: :class:`SolverParams`; defaults are used when omitted.
        engine: ``"auto"`` picks the compiled fast path for built-in models
            (unless a trace is requested), ``"python"`` forces the reference
            implementation, ``"kernel"`` demands the fast path.

    Returns:
        :class:`SolverOutcome` with a status of ``converged``, ``max_iter``,
        ``numeric_error`` or ``inner_stall``.
    """
    if params is None:
        params = SolverParams()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.model.n,):
        raise ValueError(
            f"x0 must have shape ({problem.model.n},), got {x0.shape}"
        )
    if engine == "auto":
        use_kernel = (
            problem.model.kernel_code is not None and not params.collect_trace
        )
    elif engine == "kernel":
        if problem.model.kernel_code is None:
            raise ValueError("model has no compiled kernel")
        if params.collect_trace:
            raise ValueError("trace collection requires the python engine")
        use_kernel = True
    elif engine == "python":
        use_kernel = False
    else:
        raise ValueError(f"unknown engine: {engine!r}")
    if use_kernel:
        return _solve_kernel(problem, x0, params)
    return _solve_python(problem, x0, params)


def _finalize(problem, x, status, iterations, trace=()):
    """Recompute the reported quantities at ``x`` with the canonical routines."""
    try:
        active = select_active(problem, x)
    except EvaluationError:
        return SolverOutcome(
            x=x, status=status, iterations=iterations, sp=math.nan,
            grad_norm=math.nan, active_indices=np.empty(0, dtype=np.intp),
            trace=tuple(trace),
        )
    try:
        grad = lovo_gradient(problem, x, active)
        gn = float(np.sqrt(grad @ grad))
    except EvaluationError:
        gn = math.nan
    return SolverOutcome(
        x=x, status=status, iterations=iterations, sp=active.sp_value,
        grad_norm=gn, active_indices=active.indices, trace=tuple(trace),
    )


def _solve_python(problem, x0, params):
    x = x0.copy()
    lam = params.lambda0
    trace = []
    use_rho = params.acceptance == ACCEPT_RHO

    try:
        F, chosen, spv = _objective_parts(problem, x)
    except EvaluationError:
        return _finalize(problem, x, STATUS_NUMERIC, 0)
    state = _derivative_parts(problem, x, F, chosen, spv)
    if state is None:
        return _finalize(problem, x, STATUS_NUMERIC, 0)

    k = 0
    while True:
        gn = math.sqrt(state.gn2)
        if gn < params.eps_grad:
            return _finalize(problem, x, STATUS_CONVERGED, k, trace)
        if k >= params.max_iter:
            return _finalize(problem, x, STATUS_MAX_ITER, k, trace)

        accepted = False
        rejections = 0
        trial = None
        while rejections < params.max_inner:
            gamma = lam * state.gn2
            ok = False
            ratio = math.nan
            try:
                d = _damped_solve(
                    state.JTJ + gamma * np.eye(len(x)), state.grad
                )
            except np.linalg.LinAlgError:
                d = None
            if d is not None:
                try:
                    trial = _objective_parts(problem, x + d)
                except EvaluationError:
                    trial = None
                if trial is not None and math.isfinite(trial[2]):
                    if use_rho:
                        ratio = _step_ratio(state, d, gamma, trial[2])
                        ok = ratio is not None and ratio >= params.mu
                        ratio = math.nan if ratio is None else ratio
                    else:
                        ok = trial[2] < state.sp
            if params.collect_trace:
                trace.append(
                    TraceRecord(k, lam, gamma, state.sp, gn, ok, ratio)
                )
            if ok:
                accepted = True
                break
            lam *= params.lambda_bar
            rejections += 1

        if not accepted:
            return _finalize(problem, x, STATUS_STALL, k, trace)

        lam = max(params.lambda_min, lam / params.lambda_bar)
        x = x + d
        F, chosen, spv = trial
        state = _derivative_parts(problem, x, F, chosen, spv)
        k += 1
        if state is None:
            return _finalize(problem, x, STATUS_NUMERIC, k, trace)


def _step_ratio(state, d, gamma, sp_trial):
    """Actual-over-predicted decrease; None when the prediction is degenerate
    (nonpositive predicted decrease), which callers must treat as a rejection."""
    # m(d) = 0.5 ||F + J d||^2 + 0.5 gamma ||d||^2; use J^T J and J^T F to
    # avoid keeping J around: ||F + J d||^2 = ||F||^2 + 2 g.d + d.JTJ.d
    with np.errstate(over="ignore", invalid="ignore"):
        quad = float(d @ (state.JTJ @ d))
        md = (state.sp + float(state.grad @ d)
              + 0.5 * quad + 0.5 * gamma * float(d @ d))
    predicted = state.sp - md
    if not predicted > 0:
        return None
    return (state.sp - sp_trial) / predicted


def _solve_kernel(problem, x0, params):
    from . import _kernel

    x, code, iters = _kernel.lm_lovo(
        problem.model.kernel_code,
        problem.t_matrix,
        problem.y_vector,
        problem.p,
        x0,
        params.eps_grad,
        params.lambda0,
        params.lambda_min,
        params.lambda_bar,
        params.mu,
        params.acceptance == ACCEPT_RHO,
        params.max_iter,
        params.max_inner,
    )
    return _finalize(problem, x, _KERNEL_STATUS[code], iters)
