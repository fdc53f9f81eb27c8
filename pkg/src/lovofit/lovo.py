"""Low order-value objective: trusted-set selection, objective and gradient.

Given residuals ``F_i(x) = y_i - phi(x, t_i)`` the objective only sums the
``p`` smallest squared residuals,

    S_p(x) = sum of the p smallest  0.5 * F_i(x)^2 ,

so the ``r - p`` worst-fitting points never influence the fit.  With ``p = r``
this reduces to classical least squares.  The minimizing index set at ``x`` is
the *active set*; its residuals drive the gradient and model updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .models import Model


@dataclass(frozen=True)
class Observation:
    """One data point: independent values ``t`` (length m) and response ``y``."""

    t: tuple
    y: float

    def __post_init__(self):
        t = tuple(float(v) for v in np.atleast_1d(self.t))
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", float(self.y))
        if not all(np.isfinite(v) for v in t) or not np.isfinite(self.y):
            raise ValueError("observation components must be finite")


@dataclass(frozen=True)
class LovoProblem:
    """A dataset, a model, and the number ``p`` of points to trust."""

    dataset: tuple
    model: Model
    p: int

    def __post_init__(self):
        object.__setattr__(self, "dataset", tuple(self.dataset))
        r = len(self.dataset)
        if r == 0:
            raise ValueError("dataset must not be empty")
        if not 1 <= self.p <= r:
            raise ValueError(f"p must be in [1, {r}], got {self.p}")
        for i, obs in enumerate(self.dataset):
            if len(obs.t) != self.model.m:
                raise ValueError(
                    f"observation {i} has {len(obs.t)} independent values, "
                    f"model {self.model.name!r} expects {self.model.m}"
                )

    @property
    def r(self):
        return len(self.dataset)

    @cached_property
    def t_matrix(self):
        """(r, m) array of independent values, row i belongs to dataset[i]."""
        return np.array([obs.t for obs in self.dataset], dtype=float)

    @cached_property
    def y_vector(self):
        return np.array([obs.y for obs in self.dataset], dtype=float)


@dataclass(frozen=True)
class ActiveSet:
    """The ``p`` trusted indices at a point, with objective value and residuals.

    ``indices`` are sorted ascending; ``residuals`` holds all ``r`` residuals
    (not only the trusted ones) so callers can inspect the discarded points.
    """

    indices: np.ndarray
    sp_value: float
    residuals: np.ndarray


def residual_vector(problem, x):
    """All ``r`` residuals ``y_i - phi(x, t_i)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    return problem.y_vector - problem.model.eval_many(x, problem.t_matrix)


def select_active(problem, x):
    """Pick the ``p`` observations with smallest squared residual at ``x``.

    Ties between equal squared residuals are broken toward the smaller
    dataset index (stable sort), which keeps the selection reproducible.
    """
    F = residual_vector(problem, x)
    # squared residuals may overflow to inf at wild trial points; an infinite
    # S_p is meaningful (the point is infinitely bad), so silence the warning
    with np.errstate(over="ignore"):
        R = F * F
    order = np.argsort(R, kind="stable")
    chosen = order[: problem.p]
    # Summation in ascending order of squared residual is the one canonical
    # evaluation; every other routine reporting S_p reuses it.
    spv = 0.5 * float(R[chosen].sum())
    return ActiveSet(
        indices=np.sort(chosen), sp_value=spv, residuals=F
    )


def sp_value(problem, x):
    """Objective value ``S_p(x)``."""
    return select_active(problem, x).sp_value


def active_jacobian(problem, x, active):
    """(p, n) Jacobian of the trusted residuals at ``x`` (rows are ``-d phi/dx``)."""
    x = np.asarray(x, dtype=float)
    T = problem.t_matrix[active.indices]
    return -problem.model.jac_many(x, T)


def lovo_gradient(problem, x, active):
    """Gradient of ``S_p`` through the active set: ``J^T F`` over trusted rows."""
    J = active_jacobian(problem, x, active)
    return J.T @ active.residuals[active.indices]
