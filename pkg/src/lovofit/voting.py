"""Automatic choice of the trusted-point count by multistart voting.

The number of reliable points ``p`` is rarely known.  The strategy here runs
the solver over every candidate ``p`` in ``[p_min, p_max]`` (multistart, with
per-task seeding so results never depend on thread scheduling), discards
candidates whose solutions are self-inconsistent, and then lets the surviving
solutions vote: values of ``p`` whose fitted parameters cluster together
support each other, and the most-supported ``p`` wins.  Points outside the
winner's trusted set are reported as outliers.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .models import EvaluationError
from .solver import SolverOutcome, SolverParams, solve

REASON_NONE = "none"
REASON_DOMINATED = "dominated"
REASON_PMAX = "pmax_rule"
REASON_FAILED = "failed"

SAMPLER_NORMAL = "standard_normal"
SAMPLER_BOX = "user_box"


@dataclass(frozen=True)
class VotingParams:
    """Configuration of the vote over trusted-point counts.

    ``p_min``/``p_max`` default to ``ceil(r/2)`` and ``r`` for a dataset of
    size ``r``.  Starting points are drawn per ``(base_seed, p, start)`` so
    every solver task is reproducible in isolation.  ``epsilon_override``
    replaces the automatic similarity tolerance when set.
    """

    p_min: int | None = None
    p_max: int | None = None
    n_starts: int = 10
    base_seed: int = 0
    start_sampler: str = SAMPLER_NORMAL
    box: tuple | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    epsilon_override: float | None = None

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.base_seed < 0:
            raise ValueError("base_seed must be nonnegative")
        if self.start_sampler not in (SAMPLER_NORMAL, SAMPLER_BOX):
            raise ValueError(f"unknown start sampler: {self.start_sampler!r}")
        if self.start_sampler == SAMPLER_BOX:
            if self.box is None:
                raise ValueError("user_box sampling requires box=(lo, hi)")
            lo, hi = (np.asarray(b, dtype=float) for b in self.box)
            if lo.shape != hi.shape or np.any(lo >= hi):
                raise ValueError("box bounds must satisfy lo < hi elementwise")
        if self.epsilon_override is not None and self.epsilon_override <= 0:
            raise ValueError("epsilon_override must be positive")


@dataclass(frozen=True)
class PerPRecord:
    """Best run for one candidate ``p`` plus its elimination verdict."""

    p: int
    outcome: SolverOutcome
    eliminated: bool
    reason: str


@dataclass(frozen=True)
class FitReport:
    """Final answer of a voted fit."""

    chosen_p: int
    x_star: np.ndarray
    outlier_indices: tuple
    epsilon_used: float | None
    votes: dict
    per_p: tuple
    degraded: bool
    wall_time_seconds: float


def _resolve_p_range(r, params):
    p_min = params.p_min if params.p_min is not None else math.ceil(0.5 * r)
    p_max = params.p_max if params.p_max is not None else r
    if not 1 <= p_min <= p_max <= r:
        raise ValueError(
            f"need 1 <= p_min <= p_max <= {r}, got [{p_min}, {p_max}]"
        )
    return p_min, p_max


def _start_point(params, rng, n):
    if params.start_sampler == SAMPLER_BOX:
        lo, hi = (np.asarray(b, dtype=float) for b in params.box)
        return rng.uniform(lo, hi)
    return rng.standard_normal(n)


def _multistart(problem, params):
    """Best outcome over all starts for one ``p``: converged runs beat
    non-converged ones, then smaller objective wins, then the earlier start."""
    best = None
    best_key = None
    n = problem.model.n
    for j in range(params.n_starts):
        rng = np.random.default_rng(
            np.random.SeedSequence([params.base_seed, problem.p, j])
        )
        x0 = _start_point(params, rng, n)
        out = solve(problem, x0, params.solver)
        spk = out.sp if math.isfinite(out.sp) else math.inf
        key = (0 if out.converged else 1, spk)
        if best is None or key < best_key:
            best, best_key = out, key
    return best


def best_per_p(dataset, model, params, threads=None):
    """Map each candidate ``p`` to its best multistart outcome.

    A ``p`` whose runs never converged still maps to its least-bad outcome;
    its non-converged status marks it as failed for the later stages.
    """
    from .lovo import LovoProblem

    p_min, p_max = _resolve_p_range(len(dataset), params)
    ps = range(p_min, p_max + 1)
    workers = threads if threads is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise ValueError("threads must be at least 1")
    problems = [LovoProblem(dataset, model, p) for p in ps]
    if workers == 1:
        results = [_multistart(pb, params) for pb in problems]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda pb: _multistart(pb, params), problems))
    return dict(zip(ps, results))


def preprocess(outcomes, dataset, model):
    """Elimination pass before voting.

    Returns a reason per ``p``: ``failed`` (never converged), ``dominated``
    (some larger trusted count achieved a *smaller* objective, so this one
    trusted too few points), ``pmax_rule`` (the all-points fit lost a
    closeness comparison against the best smaller candidate, the telltale of
    genuine outliers), or ``none`` for survivors.
    """
    ps = sorted(outcomes)
    reasons = {}
    conv = {p: o for p, o in outcomes.items() if o.converged}
    for p in ps:
        if p not in conv:
            reasons[p] = REASON_FAILED
    for q in conv:
        for p in conv:
            if q < p and conv[q].sp > conv[p].sp:
                reasons[q] = REASON_DOMINATED
                break
    p_max = ps[-1]
    if p_max in conv and p_max not in reasons:
        cands = [p for p in conv if p != p_max and p not in reasons]
        if cands:
            # smallest objective; on equal objectives prefer trusting more points
            p_star = min(cands, key=lambda p: (conv[p].sp, -p))
            if conv[p_star].sp < conv[p_max].sp:
                T = np.array([obs.t for obs in dataset], dtype=float)
                Y = np.array([obs.y for obs in dataset], dtype=float)
                try:
                    dev_star = np.abs(Y - model.eval_many(conv[p_star].x, T))
                    dev_max = np.abs(Y - model.eval_many(conv[p_max].x, T))
                except EvaluationError:
                    pass
                else:
                    if int(np.sum(dev_star < dev_max)) >= 0.5 * len(dataset):
                        reasons[p_max] = REASON_PMAX
    for p in ps:
        reasons.setdefault(p, REASON_NONE)
    return reasons


def build_similarity(outcomes, reasons):
    """Pairwise distances between surviving solutions.

    Rows/columns of failed or eliminated candidates are infinite, including
    their diagonal, so they can never receive or cast votes.
    """
    ps = sorted(outcomes)
    s = len(ps)
    M = np.full((s, s), np.inf)
    valid = [i for i, p in enumerate(ps) if reasons[p] == REASON_NONE]
    for a, i in enumerate(valid):
        M[i, i] = 0.0
        for j in valid[a + 1:]:
            dist = float(
                np.linalg.norm(outcomes[ps[i]].x - outcomes[ps[j]].x)
            )
            M[i, j] = dist
            M[j, i] = dist
    return M


def similarity_tolerance(M, p_max):
    """Vote radius derived from the finite strict-lower-triangle distances.

    Returns ``None`` when fewer than two candidates survived, i.e. there is
    no pair to compare and no meaningful radius.
    """
    low = np.tril_indices(M.shape[0], k=-1)
    vals = M[low]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return None
    return float(vals.min() + vals.mean() / (1.0 + math.sqrt(p_max)))


def vote_and_select(outcomes, reasons, M, epsilon, r):
    """Count votes and assemble the report (wall time filled by the caller).

    Each surviving candidate votes for every candidate within ``epsilon`` of
    it (itself included).  Most votes wins; ties go to the larger ``p``.  With
    no usable tolerance a lone survivor wins by self-vote, and if nothing
    survived at all the all-points solution is returned flagged ``degraded``.
    """
    ps = sorted(outcomes)
    valid = [p for p in ps if reasons[p] == REASON_NONE]
    votes = {p: 0 for p in ps}
    if epsilon is not None:
        counts = (M < epsilon).sum(axis=1)
        for i, p in enumerate(ps):
            votes[p] = int(counts[i])
    else:
        for p in valid:
            votes[p] = 1

    degraded = not valid
    if degraded:
        chosen = ps[-1]
    else:
        chosen = max(valid, key=lambda p: (votes[p], p))
    picked = outcomes[chosen]
    declared = sorted(set(range(r)) - set(int(i) for i in picked.active_indices))
    per_p = tuple(
        PerPRecord(
            p=p,
            outcome=outcomes[p],
            eliminated=reasons[p] != REASON_NONE,
            reason=reasons[p],
        )
        for p in ps
    )
    return FitReport(
        chosen_p=chosen,
        x_star=picked.x,
        outlier_indices=tuple(declared),
        epsilon_used=epsilon,
        votes=votes,
        per_p=per_p,
        degraded=degraded,
        wall_time_seconds=0.0,
    )


def raff_fit(dataset, model, params=None, threads=None):
    """Full voted fit: multistart solves, eliminations, vote, outlier report."""
    t0 = time.perf_counter()
    if params is None:
        params = VotingParams()
    dataset = tuple(dataset)
    _, p_max = _resolve_p_range(len(dataset), params)
    outcomes = best_per_p(dataset, model, params, threads=threads)
    reasons = preprocess(outcomes, dataset, model)
    M = build_similarity(outcomes, reasons)
    if params.epsilon_override is not None:
        epsilon = params.epsilon_override
    else:
        epsilon = similarity_tolerance(M, p_max)
    report = vote_and_select(outcomes, reasons, M, epsilon, len(dataset))
    return replace(report, wall_time_seconds=time.perf_counter() - t0)
