"""Command line interface.

Exit codes: 0 for any completed run (including degraded-confidence fits),
1 for usage errors, 2 for unreadable or inconsistent data files, 3 for
numeric failures while evaluating a model outside a fit.
"""

from __future__ import annotations

import json
import math
import os
import sys

import click
import numpy as np

from .datagen import (
    CIRCLE_PROTOCOLS,
    CURVE_PROTOCOLS,
    ParseError,
    generate,
    generate_circle,
    read_instance,
    write_instance,
)
from .metrics import adjustment_error, aggregate, score_detection
from .models import BUILTIN_MODEL_NAMES, EvaluationError, builtin_model
from .solver import SolverParams
from .voting import VotingParams, raff_fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_PROTOCOL_CHOICES = ("uniform", "cluster", "border", "uniform-square")


class DataError(Exception):
    """A readable file whose content cannot be used."""


def _resolve_seed(seed):
    if seed is not None:
        return seed
    env = os.environ.get("RAFF_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise click.UsageError(f"RAFF_SEED must be an integer, got {env!r}")


def _protocol_token(protocol):
    return protocol.replace("-", "_")


@click.group()
def cli():
    """Robust curve fitting with automatic outlier detection."""


@cli.command("generate")
@click.option("--model", "model_name", required=True,
              type=click.Choice(BUILTIN_MODEL_NAMES))
@click.option("--r", "r", required=True, type=int, help="number of points")
@click.option("--p", "p", required=True, type=int,
              help="number of uncorrupted points")
@click.option("--seed", type=int, default=None,
              help="defaults to $RAFF_SEED, then 0")
@click.option("--protocol", type=click.Choice(_PROTOCOL_CHOICES),
              default="uniform", show_default=True)
@click.option("--sigma", type=float, default=200.0, show_default=True,
              help="inlier noise level (curve models)")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_generate(model_name, r, p, seed, protocol, sigma, out):
    """Write a synthetic instance with known outliers to a file."""
    seed = _resolve_seed(seed)
    protocol = _protocol_token(protocol)
    try:
        if model_name == "circle":
            if protocol not in CIRCLE_PROTOCOLS:
                raise click.UsageError(
                    "circle data uses --protocol border or uniform-square"
                )
            instance = generate_circle(r, p, seed, protocol=protocol)
        else:
            if protocol not in CURVE_PROTOCOLS:
                raise click.UsageError(
                    f"model {model_name!r} uses --protocol uniform or cluster"
                )
            instance = generate(model_name, r, p, seed, protocol=protocol,
                                noise_sigma=sigma)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    write_instance(instance, out)
    click.echo(
        f"wrote {out}: model={model_name} r={r} p={p} "
        f"outliers={r - p} protocol={protocol} seed={seed}"
    )


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _report_doc(report, model, r, seed):
    chosen = next(rec for rec in report.per_p if rec.p == report.chosen_p)
    per_p = []
    for rec in report.per_p:
        o = rec.outcome
        per_p.append({
            "p": rec.p,
            "x": [float(v) for v in o.x],
            "sp": _jsonable(float(o.sp)),
            "status": o.status,
            "grad_norm": _jsonable(float(o.grad_norm)),
            "iters": o.iterations,
            "eliminated": rec.eliminated,
            "reason": rec.reason,
        })
    return {
        "model": model.name,
        "n": model.n,
        "r": r,
        "p_chosen": report.chosen_p,
        "x": [float(v) for v in report.x_star],
        "sp": _jsonable(float(chosen.outcome.sp)),
        "outlier_indices": list(report.outlier_indices),
        "epsilon_used": report.epsilon_used,
        "votes": [report.votes[rec.p] for rec in report.per_p],
        "per_p": per_p,
        "degraded": report.degraded,
        "seed": seed,
        "wall_time_seconds": report.wall_time_seconds,
    }


def _load_model(model_name, instance, source):
    if model_name is None:
        model_name = instance.model_name
        if model_name is None:
            raise click.UsageError(
                f"{source} has no model header; pass --model"
            )
        if model_name not in BUILTIN_MODEL_NAMES:
            raise DataError(f"{source} names unknown model {model_name!r}")
    return builtin_model(model_name)


@cli.command("fit")
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_name", default=None,
              type=click.Choice(BUILTIN_MODEL_NAMES),
              help="defaults to the instance header")
@click.option("--pmin", type=int, default=None,
              help="smallest trusted count (default: half the points)")
@click.option("--pmax", type=int, default=None,
              help="largest trusted count (default: all points)")
@click.option("--starts", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=None,
              help="defaults to $RAFF_SEED, then 0")
@click.option("--threads", type=int, default=None,
              help="parallel solver tasks (default: CPU count)")
@click.option("--epsilon", type=float, default=None,
              help="override the automatic vote radius")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="report path (default: stdout)")
@click.option("-v", "--verbose", count=True,
              help="once: per-candidate summary on stderr; twice: also the "
                   "winner's iteration trace (runs the reference engine)")
def cmd_fit(data_path, model_name, pmin, pmax, starts, seed, threads,
            epsilon, out, verbose):
    """Fit a model to a data file and report the detected outliers."""
    seed = _resolve_seed(seed)
    instance = read_instance(data_path)
    model = _load_model(model_name, instance, data_path)
    try:
        params = VotingParams(
            p_min=pmin,
            p_max=pmax,
            n_starts=starts,
            base_seed=seed,
            solver=SolverParams(collect_trace=verbose >= 2),
            epsilon_override=epsilon,
        )
        report = raff_fit(instance.dataset, model, params, threads=threads)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    if verbose:
        for rec in report.per_p:
            o = rec.outcome
            click.echo(
                f"p={rec.p} status={o.status} sp={o.sp:.6g} "
                f"iters={o.iterations} votes={report.votes[rec.p]} "
                f"reason={rec.reason}",
                err=True,
            )
        if verbose >= 2:
            chosen = next(
                rec for rec in report.per_p if rec.p == report.chosen_p
            )
            for t in chosen.outcome.trace:
                rho_part = "" if math.isnan(t.rho) else f" rho={t.rho:.4g}"
                click.echo(
                    f"trace p={report.chosen_p} iter={t.iteration} "
                    f"lambda={t.lam:.6g} gamma={t.gamma:.6g} sp={t.sp:.6g} "
                    f"grad={t.grad_norm:.6g} accepted={t.accepted}{rho_part}",
                    err=True,
                )
    doc = _report_doc(report, model, instance.r, seed)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out is None:
        click.echo(text)
    else:
        with open(out, "w") as fh:
            fh.write(text + "\n")
        flag = " (degraded)" if report.degraded else ""
        click.echo(
            f"wrote {out}: p={report.chosen_p} of {instance.r}, "
            f"{len(report.outlier_indices)} outliers{flag}"
        )


@cli.command("evaluate")
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--instance", "instance_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_evaluate(report_path, instance_path, out):
    """Score a fit report against an instance with known outliers."""
    doc = _load_report(report_path)
    instance = read_instance(instance_path)
    if instance.outlier_set is None:
        raise DataError(f"{instance_path} carries no ground-truth flags")
    try:
        declared = [int(i) for i in doc["outlier_indices"]]
    except (KeyError, TypeError, ValueError):
        raise DataError(f"{report_path} lacks a usable outlier_indices field")
    stats = aggregate([score_detection(declared, instance.outlier_set)])
    text = (
        "tp,fp,fr,er,avg_declared,count\n"
        f"{stats.tp:g},{stats.fp:g},{stats.fr:g},{stats.er:g},"
        f"{stats.avg_declared:g},{stats.count}\n"
    )
    _write_text(out, text)


def _load_report(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}")


def _write_text(out, text):
    if out is None:
        click.echo(text, nl=False)
    else:
        with open(out, "w") as fh:
            fh.write(text)
        click.echo(f"wrote {out}")


@cli.command("curve")
@click.option("--report", "report_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--range", "trange", default=None,
              help="t range as lo:hi (curve models; default 1:30)")
@click.option("--samples", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_curve(report_path, trange, samples, out):
    """Sample the fitted model of a report for plotting."""
    doc = _load_report(report_path)
    try:
        model = builtin_model(doc["model"])
        x = np.array([float(v) for v in doc["x"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{report_path} lacks model/x fields: {exc}")
    if samples < 2:
        raise click.UsageError("--samples must be at least 2")
    lines = []
    if model.name == "circle":
        theta = np.linspace(0.0, 2.0 * np.pi, samples)
        t1 = x[0] + x[2] * np.cos(theta)
        t2 = x[1] + x[2] * np.sin(theta)
        lines.append("t1,t2")
        lines.extend(f"{a!r},{b!r}" for a, b in zip(t1.tolist(), t2.tolist()))
    else:
        lo, hi = 1.0, 30.0
        if trange is not None:
            try:
                lo, hi = (float(v) for v in trange.split(":"))
            except ValueError:
                raise click.UsageError("--range must look like lo:hi")
            if not lo < hi:
                raise click.UsageError("--range needs lo < hi")
        t = np.linspace(lo, hi, samples)
        phi = model.eval_many(x, t.reshape(-1, 1))
        lines.append("t,phi")
        lines.extend(f"{a!r},{b!r}" for a, b in zip(t.tolist(), phi.tolist()))
    _write_text(out, "\n".join(lines) + "\n")


@cli.command("bench")
@click.option("--model", "model_name", required=True,
              type=click.Choice(BUILTIN_MODEL_NAMES))
@click.option("--r", "r", required=True, type=int)
@click.option("--p", "p", type=int, default=None,
              help="true inlier count (curve models)")
@click.option("--instances", type=int, default=20, show_default=True)
@click.option("--starts", type=int, default=10, show_default=True)
@click.option("--protocol", type=click.Choice(_PROTOCOL_CHOICES),
              default="uniform", show_default=True)
@click.option("--ratios", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
              show_default=True, help="outlier ratios (circle protocols)")
@click.option("--seed", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def cmd_bench(model_name, r, p, instances, starts, protocol, ratios, seed,
              threads, out):
    """Detection-rate or relative-error benchmark over synthetic instances."""
    seed = _resolve_seed(seed)
    protocol = _protocol_token(protocol)
    if instances < 1:
        raise click.UsageError("--instances must be at least 1")
    if model_name == "circle":
        if protocol not in CIRCLE_PROTOCOLS:
            raise click.UsageError(
                "circle benchmarks use --protocol border or uniform-square"
            )
        try:
            ratio_values = [float(v) for v in ratios.split(",") if v.strip()]
        except ValueError:
            raise click.UsageError("--ratios must be comma-separated numbers")
        if not ratio_values or any(not 0 < v < 1 for v in ratio_values):
            raise click.UsageError("ratios must lie strictly between 0 and 1")
        rows = run_circle_bench(protocol, r, ratio_values, instances, starts,
                                seed, threads)
        header = ("protocol,ratio,r,p,instances,starts,"
                  "raff_wins,avg_rel_raff,avg_rel_ls")
    else:
        if protocol not in CURVE_PROTOCOLS:
            raise click.UsageError(
                f"model {model_name!r} uses --protocol uniform or cluster"
            )
        if p is None:
            raise click.UsageError("curve benchmarks require --p")
        rows = [run_detection_bench(model_name, r, p, protocol, instances,
                                    starts, seed, threads)]
        header = ("model,r,p,protocol,instances,starts,"
                  "fr,er,tp,fp,avg_declared")
    text = "\n".join([header] + [",".join(str(v) for v in row) for row in rows])
    _write_text(out, text + "\n")


def run_detection_bench(model_name, r, p, protocol, instances, starts,
                        seed, threads):
    """Detection statistics of the voted fit over fresh curve instances."""
    model = builtin_model(model_name)
    params = VotingParams(n_starts=starts, base_seed=seed)
    scores = []
    for i in range(instances):
        inst = generate(model_name, r, p, seed + i, protocol=protocol)
        report = raff_fit(inst.dataset, model, params, threads=threads)
        scores.append(score_detection(report.outlier_indices,
                                      inst.outlier_set))
    s = aggregate(scores)
    return (model_name, r, p, protocol, instances, starts,
            round(s.fr, 4), round(s.er, 4), round(s.tp, 4), round(s.fp, 4),
            round(s.avg_declared, 4))


def run_circle_bench(protocol, r, ratio_values, instances, starts, seed,
                     threads):
    """Voted fit versus plain least squares on circle data, per outlier ratio.

    Errors are measured against the true inliers only; a "win" is a voted
    fit whose error does not exceed the least-squares one.
    """
    model = builtin_model("circle")
    rows = []
    for ratio in ratio_values:
        q = int(round(ratio * r))
        p = r - q
        if not 1 <= p <= r - 1:
            raise click.UsageError(
                f"ratio {ratio:g} leaves no usable split for r={r}"
            )
        raff_params = VotingParams(n_starts=starts, base_seed=seed)
        ls_params = VotingParams(p_min=r, p_max=r, n_starts=starts,
                                 base_seed=seed)
        wins = 0
        rel_raff = []
        rel_ls = []
        for i in range(instances):
            inst = generate_circle(r, p, seed + i, protocol=protocol)
            inliers = sorted(set(range(r)) - inst.outlier_set)
            rep = raff_fit(inst.dataset, model, raff_params, threads=threads)
            ls = raff_fit(inst.dataset, model, ls_params, threads=threads)
            err_r = adjustment_error(model, rep.x_star, inst.dataset, inliers)
            err_l = adjustment_error(model, ls.x_star, inst.dataset, inliers)
            if err_r <= err_l:
                wins += 1
            floor = min(err_r, err_l)
            if floor > 0:
                rel_raff.append(err_r / floor)
                rel_ls.append(err_l / floor)
        rows.append((
            protocol, round(ratio, 4), r, p, instances, starts, wins,
            round(float(np.mean(rel_raff)), 4) if rel_raff else 1.0,
            round(float(np.mean(rel_ls)), 4) if rel_ls else 1.0,
        ))
    return rows


def main(argv=None):
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return EXIT_USAGE
    except (ParseError, DataError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_DATA
    except (EvaluationError, np.linalg.LinAlgError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
