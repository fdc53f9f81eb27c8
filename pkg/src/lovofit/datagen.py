"""Synthetic instance generation and the on-disk instance format.

Curve instances place ``r`` points on a fixed grid over ``[1, 30]``, perturb
the true curve with Gaussian noise, and displace ``r - p`` of the points by an
additional jump of 7 to 14 noise deviations, all jumps sharing one random
sign so the outliers sit on the same side of the curve.  Circle instances scatter points
around a fixed circle and corrupt a subset either with wider radial noise
("border") or by resampling them uniformly from a surrounding square
("uniform_square").  Every instance records its ground truth and can be
written to / read from a small headered CSV losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lovo import Observation
from .models import BUILTIN_MODEL_NAMES, builtin_model

# reference parameter vectors used when the caller does not supply their own
TRUE_PARAMS = {
    "linear": (-200.0, 1000.0),
    "cubic": (0.5, -20.0, 300.0, 1000.0),
    "expon": (5000.0, 4000.0, 0.2),
    "logistic": (6000.0, -5000.0, -0.2, -3.7),
}

CIRCLE_CENTER = (-10.0, 30.0)
CIRCLE_RADIUS = 2.0

CURVE_PROTOCOLS = ("uniform", "cluster")
CIRCLE_PROTOCOLS = ("border", "uniform_square")

_HEADER_TAG = "# raff-instance v1"


class ParseError(Exception):
    """Raised when an instance file cannot be understood."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SyntheticInstance:
    """A dataset plus the ground truth that produced it.

    Instances read from plain CSV files have no truth: ``model_name``,
    ``x_star``, ``outlier_set``, ``seed`` and ``protocol`` are all ``None``.
    ``noise_base``/``noise_jump`` keep the raw noise and displacement draws
    of freshly generated curve instances for debugging; they are not
    persisted.
    """

    dataset: tuple
    model_name: str | None = None
    x_star: tuple | None = None
    outlier_set: frozenset | None = None
    seed: int | None = None
    protocol: str | None = None
    noise_base: np.ndarray | None = field(
        default=None, repr=False, compare=False
    )
    noise_jump: np.ndarray | None = field(
        default=None, repr=False, compare=False
    )

    @property
    def r(self):
        return len(self.dataset)

    @property
    def p(self):
        if self.outlier_set is None:
            return None
        return self.r - len(self.outlier_set)


def generate(model, r, p, seed, protocol="uniform", x_star=None,
             noise_sigma=200.0, outlier_factor=7.0):
    """Generate a curve instance with ``r`` points of which ``p`` are reliable.

    Args:
        model: a built-in model name or a one-dimensional ``Model``.
        r: number of points (grid over ``[1, 30]``; endpoints included).
        p: number of uncorrupted points; ``r - p`` outliers are planted.
        seed: RNG seed; equal seeds reproduce the instance exactly.
        protocol: ``"uniform"`` draws outlier positions anywhere,
            ``"cluster"`` restricts them to the band ``5 <= t <= 10``.
        x_star: true parameters; defaults to the reference vector of the
            built-in model.
        noise_sigma: standard deviation of the measurement noise, which every
            point receives.
        outlier_factor: base jump size in noise deviations; each outlier is
            displaced by ``outlier_factor`` to ``2 * outlier_factor`` sigmas
            on top of its noise, guaranteeing the corruption dominates it.
    """
    if isinstance(model, str):
        model_obj = builtin_model(model)
    else:
        model_obj = model
    if model_obj.m != 1:
        raise ValueError("generate() handles one-dimensional models; "
                         "use generate_circle() for circle data")
    if x_star is None:
        try:
            x_star = TRUE_PARAMS[model_obj.name]
        except KeyError:
            raise ValueError(
                f"no reference parameters for model {model_obj.name!r}; "
                "pass x_star explicitly"
            ) from None
    x_star = tuple(float(v) for v in x_star)
    if len(x_star) != model_obj.n:
        raise ValueError(f"x_star must have length {model_obj.n}")
    if r < 2:
        raise ValueError("r must be at least 2")
    if not 1 <= p <= r:
        raise ValueError(f"p must be in [1, {r}], got {p}")
    if protocol not in CURVE_PROTOCOLS:
        raise ValueError(f"unknown curve protocol: {protocol!r}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")

    rng = np.random.default_rng(seed)
    t = np.linspace(1.0, 30.0, r)
    sign = 2.0 * rng.integers(0, 2) - 1.0
    if protocol == "cluster":
        candidates = np.flatnonzero((t >= 5.0) & (t <= 10.0))
        if candidates.size < r - p:
            raise ValueError(
                f"cluster band holds {candidates.size} grid points, "
                f"cannot plant {r - p} outliers"
            )
    else:
        candidates = np.arange(r)
    out_idx = np.sort(rng.choice(candidates, size=r - p, replace=False))
    xi = rng.normal(0.0, noise_sigma, r) if noise_sigma > 0 else np.zeros(r)
    amp = rng.uniform(1.0, 2.0, r)

    jump = np.zeros(r)
    jump[out_idx] = outlier_factor * sign * amp[out_idx] * noise_sigma
    T = t.reshape(-1, 1)
    y = model_obj.eval_many(np.asarray(x_star), T) + xi + jump
    dataset = tuple(Observation((ti,), yi) for ti, yi in zip(t, y))
    return SyntheticInstance(
        dataset=dataset,
        model_name=model_obj.name,
        x_star=x_star,
        outlier_set=frozenset(int(i) for i in out_idx),
        seed=int(seed),
        protocol=protocol,
        noise_base=xi,
        noise_jump=jump,
    )


def generate_circle(r, p, seed, protocol="border", inlier_sigma=0.1,
                    outlier_sigma=2.0, center=CIRCLE_CENTER,
                    radius=CIRCLE_RADIUS):
    """Generate a circle instance; responses are identically zero.

    ``"border"`` perturbs every point radially per coordinate, outliers with
    ``outlier_sigma`` instead of ``inlier_sigma``; ``"uniform_square"``
    resamples the outliers uniformly from the axis-aligned square of side 8
    around the center.
    """
    if r < 2:
        raise ValueError("r must be at least 2")
    if not 1 <= p <= r:
        raise ValueError(f"p must be in [1, {r}], got {p}")
    if protocol not in CIRCLE_PROTOCOLS:
        raise ValueError(f"unknown circle protocol: {protocol!r}")
    cx, cy = (float(c) for c in center)
    radius = float(radius)

    rng = np.random.default_rng(seed)
    out_idx = np.sort(rng.choice(r, size=r - p, replace=False))
    theta = rng.uniform(0.0, 2.0 * np.pi, r)
    base = np.column_stack(
        (cx + radius * np.cos(theta), cy + radius * np.sin(theta))
    )
    noise = rng.normal(0.0, 1.0, (r, 2))
    if protocol == "border":
        sig = np.full(r, inlier_sigma)
        sig[out_idx] = outlier_sigma
        pts = base + sig[:, None] * noise
    else:
        pts = base + inlier_sigma * noise
        square = rng.uniform(-4.0, 4.0, (r, 2)) + np.array([cx, cy])
        pts[out_idx] = square[out_idx]

    dataset = tuple(Observation(tuple(row), 0.0) for row in pts)
    return SyntheticInstance(
        dataset=dataset,
        model_name="circle",
        x_star=(cx, cy, radius),
        outlier_set=frozenset(int(i) for i in out_idx),
        seed=int(seed),
        protocol=protocol,
    )


def write_instance(instance, path):
    """Write a generated instance with full ground truth to ``path``."""
    if (instance.model_name is None or instance.x_star is None
            or instance.outlier_set is None or instance.seed is None):
        raise ValueError("instance lacks ground truth; cannot write header")
    model_obj = builtin_model(instance.model_name) if (
        instance.model_name in BUILTIN_MODEL_NAMES
    ) else None
    m = len(instance.dataset[0].t)
    n = len(instance.x_star)
    if model_obj is not None and (model_obj.n, model_obj.m) != (n, m):
        raise ValueError("instance dimensions do not match its model")
    xstar = ",".join(repr(v) for v in instance.x_star)
    lines = [
        f"{_HEADER_TAG} model={instance.model_name} n={n} m={m} "
        f"r={instance.r} p={instance.p} seed={instance.seed} "
        f"xstar={xstar}"
        + (f" protocol={instance.protocol}" if instance.protocol else "")
    ]
    for i, obs in enumerate(instance.dataset):
        flag = 1 if i in instance.outlier_set else 0
        cols = [repr(v) for v in obs.t] + [repr(obs.y), str(flag)]
        lines.append(",".join(cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_instance(path):
    """Read an instance file; plain CSV yields a truth-less instance.

    Raises:
        ParseError: malformed header, wrong column counts, non-numeric
            fields, or header/data inconsistencies (with the line number).
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ParseError("empty file")
    if raw[0].startswith(_HEADER_TAG):
        return _read_versioned(raw)
    return _read_plain(raw)


def _read_versioned(raw):
    header = raw[0][len(_HEADER_TAG):].strip()
    fields = {}
    for token in header.split():
        if "=" not in token:
            raise ParseError(f"malformed header token {token!r}", line=1)
        key, value = token.split("=", 1)
        fields[key] = value
    try:
        model_name = fields["model"]
        n = int(fields["n"])
        m = int(fields["m"])
        r = int(fields["r"])
        p = int(fields["p"])
        seed = int(fields["seed"])
        x_star = tuple(float(v) for v in fields["xstar"].split(","))
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}", line=1) from None
    protocol = fields.get("protocol")
    if len(x_star) != n:
        raise ParseError(f"xstar has {len(x_star)} values, header says n={n}",
                         line=1)
    if m < 1 or r < 1 or not 1 <= p <= r:
        raise ParseError("header dimensions out of range", line=1)

    dataset = []
    outliers = set()
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split(",")
        if len(cols) != m + 2:
            raise ParseError(
                f"expected {m + 2} columns, found {len(cols)}", line=lineno
            )
        try:
            t = tuple(float(v) for v in cols[:m])
            y = float(cols[m])
        except ValueError:
            raise ParseError("non-numeric value", line=lineno) from None
        flag = cols[m + 1].strip()
        if flag not in ("0", "1"):
            raise ParseError(f"outlier flag must be 0 or 1, got {flag!r}",
                             line=lineno)
        if flag == "1":
            outliers.add(len(dataset))
        try:
            dataset.append(Observation(t, y))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if len(dataset) != r:
        raise ParseError(f"header says r={r} but file has {len(dataset)} rows")
    if r - len(outliers) != p:
        raise ParseError(
            f"header says p={p} but {r - len(outliers)} rows are unflagged"
        )
    return SyntheticInstance(
        dataset=tuple(dataset),
        model_name=model_name,
        x_star=x_star,
        outlier_set=frozenset(outliers),
        seed=seed,
        protocol=protocol,
    )


def _read_plain(raw):
    dataset = []
    m = None
    for lineno, line in enumerate(raw, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split(",")
        if len(cols) < 2:
            raise ParseError("need at least one t column and y", line=lineno)
        if m is None:
            m = len(cols) - 1
        elif len(cols) != m + 1:
            raise ParseError(
                f"expected {m + 1} columns, found {len(cols)}", line=lineno
            )
        try:
            t = tuple(float(v) for v in cols[:m])
            y = float(cols[m])
        except ValueError:
            raise ParseError("non-numeric value", line=lineno) from None
        try:
            dataset.append(Observation(t, y))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if not dataset:
        raise ParseError("no data rows found")
    return SyntheticInstance(dataset=tuple(dataset))
