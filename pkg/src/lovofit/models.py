"""Parametric model definitions used by the fitting routines.

A model is a smooth map ``phi(x, t)`` from an ``n``-vector of parameters and an
``m``-vector of independent values to a scalar prediction.  Five families are
built in (``linear``, ``cubic``, ``expon``, ``logistic``, ``circle``); user
models can be constructed directly from plain Python callables, in which case
missing derivatives fall back to central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# exp() overflows double precision just above this argument magnitude; the
# exponential-family models refuse to evaluate past it instead of silently
# returning inf.
EXP_ARG_LIMIT = 709.0

_SQRT_EPS = float(np.sqrt(np.finfo(float).eps))


class EvaluationError(Exception):
    """Raised when a model cannot be evaluated at the requested point."""

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (observation {index})"
        super().__init__(message)


# ---------------------------------------------------------------------------
# built-in model functions (module level so Model instances stay picklable)
# ---------------------------------------------------------------------------


def _linear_eval(x, t):
    return x[0] * t[0] + x[1]


def _linear_jac(x, t):
    return np.array([t[0], 1.0])


def _linear_eval_many(x, T):
    return x[0] * T[:, 0] + x[1]


def _linear_jac_many(x, T):
    J = np.empty((T.shape[0], 2))
    J[:, 0] = T[:, 0]
    J[:, 1] = 1.0
    return J


def _cubic_eval(x, t):
    s = t[0]
    return ((x[0] * s + x[1]) * s + x[2]) * s + x[3]


def _cubic_jac(x, t):
    s = t[0]
    return np.array([s**3, s**2, s, 1.0])


def _cubic_eval_many(x, T):
    s = T[:, 0]
    return ((x[0] * s + x[1]) * s + x[2]) * s + x[3]


def _cubic_jac_many(x, T):
    s = T[:, 0]
    J = np.empty((T.shape[0], 4))
    J[:, 0] = s**3
    J[:, 1] = s**2
    J[:, 2] = s
    J[:, 3] = 1.0
    return J


def _expon_arg_check(arg):
    bad = np.abs(arg) > EXP_ARG_LIMIT
    if np.any(bad):
        raise EvaluationError(
            "exponential argument out of range", index=int(np.argmax(bad))
        )


def _expon_eval(x, t):
    arg = -x[2] * t[0]
    if abs(arg) > EXP_ARG_LIMIT:
        raise EvaluationError("exponential argument out of range")
    return x[0] + x[1] * np.exp(arg)


def _expon_jac(x, t):
    arg = -x[2] * t[0]
    if abs(arg) > EXP_ARG_LIMIT:
        raise EvaluationError("exponential argument out of range")
    e = np.exp(arg)
    return np.array([1.0, e, -x[1] * t[0] * e])


def _expon_eval_many(x, T):
    arg = -x[2] * T[:, 0]
    _expon_arg_check(arg)
    return x[0] + x[1] * np.exp(arg)


def _expon_jac_many(x, T):
    s = T[:, 0]
    arg = -x[2] * s
    _expon_arg_check(arg)
    e = np.exp(arg)
    J = np.empty((T.shape[0], 3))
    J[:, 0] = 1.0
    J[:, 1] = e
    J[:, 2] = -x[1] * s * e
    return J


def _logistic_eval(x, t):
    arg = -x[2] * t[0] + x[3]
    if abs(arg) > EXP_ARG_LIMIT:
        raise EvaluationError("exponential argument out of range")
    return x[0] + x[1] / (1.0 + np.exp(arg))


def _logistic_jac(x, t):
    arg = -x[2] * t[0] + x[3]
    if abs(arg) > EXP_ARG_LIMIT:
        raise EvaluationError("exponential argument out of range")
    u = np.exp(arg)
    den = 1.0 + u
    # u/den stays in (0, 1]; den*den would overflow for arguments near the
    # exp limit even though the derivative itself tends to zero there
    w = x[1] * (u / den) / den
    return np.array([1.0, 1.0 / den, t[0] * w, -w])


def _logistic_eval_many(x, T):
    arg = -x[2] * T[:, 0] + x[3]
    _expon_arg_check(arg)
    return x[0] + x[1] / (1.0 + np.exp(arg))


def _logistic_jac_many(x, T):
    s = T[:, 0]
    arg = -x[2] * s + x[3]
    _expon_arg_check(arg)
    u = np.exp(arg)
    den = 1.0 + u
    w = x[1] * (u / den) / den
    J = np.empty((T.shape[0], 4))
    J[:, 0] = 1.0
    J[:, 1] = 1.0 / den
    J[:, 2] = s * w
    J[:, 3] = -w
    return J


def _circle_eval(x, t):
    return (t[0] - x[0]) ** 2 + (t[1] - x[1]) ** 2 - x[2] ** 2


def _circle_jac(x, t):
    return np.array([-2.0 * (t[0] - x[0]), -2.0 * (t[1] - x[1]), -2.0 * x[2]])


def _circle_eval_many(x, T):
    return (T[:, 0] - x[0]) ** 2 + (T[:, 1] - x[1]) ** 2 - x[2] ** 2


def _circle_jac_many(x, T):
    J = np.empty((T.shape[0], 3))
    J[:, 0] = -2.0 * (T[:, 0] - x[0])
    J[:, 1] = -2.0 * (T[:, 1] - x[1])
    J[:, 2] = -2.0 * x[2]
    return J


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    """A parametric model ``phi(x, t)`` with first derivatives in ``x``.

    Args:
        name: identifying label, carried into reports and data files.
        n: number of parameters.
        m: dimension of the independent variable ``t``.
        eval: callable ``(x, t) -> float``.
        jac_row: callable ``(x, t) -> (n,) array`` of ``d phi / d x``; when
            omitted, a central finite-difference approximation is used.
        eval_many: optional vectorized form ``(x, T(r,m)) -> (r,)``.
        jac_many: optional vectorized form ``(x, T(r,m)) -> (r,n)``.
        kernel_code: internal dispatch tag for the compiled fast path; user
            models leave it ``None`` and run through the generic solver.
    """

    name: str
    n: int
    m: int
    eval: Callable = field(repr=False)
    jac_row: Callable | None = field(default=None, repr=False)
    eval_many: Callable | None = field(default=None, repr=False)
    jac_many: Callable | None = field(default=None, repr=False)
    kernel_code: int | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("model dimensions must be positive")
        if self.jac_row is None:
            object.__setattr__(self, "jac_row", _fd_jac_factory(self.eval))
        if self.eval_many is None:
            object.__setattr__(self, "eval_many", _rowwise_factory(self.eval))
        if self.jac_many is None:
            object.__setattr__(
                self, "jac_many", _rowwise_factory(self.jac_row, self.n)
            )


def _fd_jac_factory(evalf):
    """Central finite differences with per-coordinate steps scaled to |x_j|."""

    def fd_jac(x, t):
        x = np.asarray(x, dtype=float)
        g = np.empty(x.size)
        for j in range(x.size):
            h = _SQRT_EPS * max(1.0, abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            g[j] = (evalf(xp, t) - evalf(xm, t)) / (2.0 * h)
        return g

    return fd_jac


def _rowwise_factory(rowf, width=None):
    def many(x, T):
        r = T.shape[0]
        out = np.empty(r) if width is None else np.empty((r, width))
        for i in range(r):
            try:
                out[i] = rowf(x, T[i])
            except EvaluationError as exc:
                if exc.index is None:
                    raise EvaluationError(str(exc), index=i) from None
                raise
        return out

    return many


_BUILTINS = {
    "linear": dict(
        n=2, m=1, eval=_linear_eval, jac_row=_linear_jac,
        eval_many=_linear_eval_many, jac_many=_linear_jac_many, kernel_code=0,
    ),
    "cubic": dict(
        n=4, m=1, eval=_cubic_eval, jac_row=_cubic_jac,
        eval_many=_cubic_eval_many, jac_many=_cubic_jac_many, kernel_code=1,
    ),
    "expon": dict(
        n=3, m=1, eval=_expon_eval, jac_row=_expon_jac,
        eval_many=_expon_eval_many, jac_many=_expon_jac_many, kernel_code=2,
    ),
    "logistic": dict(
        n=4, m=1, eval=_logistic_eval, jac_row=_logistic_jac,
        eval_many=_logistic_eval_many, jac_many=_logistic_jac_many, kernel_code=3,
    ),
    "circle": dict(
        n=3, m=2, eval=_circle_eval, jac_row=_circle_jac,
        eval_many=_circle_eval_many, jac_many=_circle_jac_many, kernel_code=4,
    ),
}

BUILTIN_MODEL_NAMES = tuple(sorted(_BUILTINS))


def builtin_model(name):
    """Return one of the built-in models by name.

    Raises:
        ValueError: if ``name`` is not a known model.
    """
    try:
        fields = _BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown model: {name!r}") from None
    return Model(name=name, **fields)


def residual(model, obs, x, index=None):
    """Residual ``y - phi(x, t)`` of one observation.

    Raises:
        EvaluationError: if the model value is undefined or non-finite.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(obs.t, dtype=float)
    try:
        value = model.eval(x, t)
    except EvaluationError as exc:
        if exc.index is None and index is not None:
            raise EvaluationError(str(exc), index=index) from None
        raise
    if not np.isfinite(value):
        raise EvaluationError("non-finite model value", index=index)
    return obs.y - value


def residual_jac_row(model, obs, x):
    """Gradient of the residual w.r.t. the parameters: ``-d phi / d x``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(obs.t, dtype=float)
    return -np.asarray(model.jac_row(x, t), dtype=float)
