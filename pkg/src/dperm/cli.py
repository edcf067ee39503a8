"""Command-line front end for the benchmark harness.

Exit codes: 0 on success, 1 for usage errors (bad flags, malformed config),
2 when at least one sweep cell failed at runtime.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from pathlib import Path

import click

from . import bench
from .dataset import export_private
from .models import save_model
from .privacy import PrivacyBudget
from .trainers import train_data_perturbation, train_gated_perturbation

import numpy as np


class SweepFailure(click.ClickException):
    exit_code = 2


def _load_config(path: str) -> bench.ExperimentConfig:
    try:
        return bench.load_config(path)
    except FileNotFoundError as exc:
        raise click.UsageError(str(exc)) from exc
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


def _apply_overrides(cfg, out, seeds, epsilons, methods, jobs):
    changes = {}
    if out:
        changes["outdir"] = out
    if seeds:
        changes["seeds"] = bench._parse_seeds(seeds)
    if epsilons:
        changes["epsilons"] = tuple(float(e) for e in bench._parse_list(epsilons))
    if methods:
        changes["methods"] = tuple(methods)
    if jobs:
        changes["jobs"] = jobs
    try:
        return replace(cfg, **changes) if changes else cfg
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc


@click.group()
def cli() -> None:
    """Differentially private ERM benchmark harness."""


@cli.command()
@click.option("--config", "config_path", required=True, type=str, help="Experiment config file.")
def ingest(config_path: str) -> None:
    """Normalize the configured dataset and cache it (checksummed)."""
    cfg = _load_config(config_path)
    try:
        ds, scale, path = bench.ingest(cfg.dataset)
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"ingested {ds.name}: n={ds.n}, d={ds.d}, scale={scale:g} -> {path}")


@cli.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out", required=True, type=str, help="Directory for pretrain artifacts.")
def pretrain(config_path: str, out: str) -> None:
    """Fit the reference model, its Hessian, and the optimal objective."""
    cfg = _load_config(config_path)
    try:
        ctx = bench.prepare_problem(cfg)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_model(ctx.model, ctx.theta_ref, outdir / "reference_model.txt")
    np.savetxt(outdir / "hessian.txt", ctx.hessian.matrix, fmt="%.17g")
    meta = {
        "l_star": ctx.l_star,
        "damping": ctx.hessian.damping,
        "auto_escalated": ctx.hessian.auto_escalated,
        "converged": ctx.pretrain_converged,
        "n_train": ctx.train.n,
        "d": ctx.train.d,
    }
    import json

    (outdir / "pretrain.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    click.echo(
        f"pretrained {cfg.dataset.name}/{cfg.model_kind}: objective={ctx.l_star:.6g}, "
        f"grad converged={ctx.pretrain_converged} -> {outdir}"
    )


@cli.command()
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out", default="", type=str, help="Output directory (overrides config).")
@click.option("--seeds", default="", type=str, help="Seed list or lo:hi range.")
@click.option("--epsilons", default="", type=str, help="Comma-separated epsilon grid.")
@click.option("--method", "methods", multiple=True, help="Method to run (repeatable).")
@click.option("--jobs", default=0, type=int, help="Parallel workers for sweep cells.")
def run(config_path, out, seeds, epsilons, methods, jobs) -> None:
    """Run the sweep described by the config file."""
    cfg = _load_config(config_path)
    cfg = _apply_overrides(cfg, out, seeds, epsilons, methods, jobs)
    try:
        table = bench.run_experiment(cfg)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    table.to_csv(outdir / "results.csv")
    table.write_metadata(outdir / "metadata.json")
    click.echo(
        f"ran {len(table.rows)} cells ({table.failures} failed) -> {outdir / 'results.csv'}"
    )
    if table.failures:
        raise SweepFailure(f"{table.failures} sweep cell(s) failed; see the notes column")


@cli.command("export-priv")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--method", default="data", type=click.Choice(["data", "data-gated"]))
@click.option("--epsilon", default=1.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out", required=True, type=str, help="Output CSV path.")
def export_priv(config_path, method, epsilon, seed, out) -> None:
    """Train one private model and write its perturbed dataset."""
    cfg = _load_config(config_path)
    try:
        ctx = bench.prepare_problem(cfg)
        budget = PrivacyBudget(epsilon, ctx.delta)
        tc = replace(ctx.base_train, seed=seed)
        if method == "data":
            outcome = train_data_perturbation(ctx.model, ctx.train, budget, tc, cfg.consts)
        else:
            outcome = train_gated_perturbation(
                ctx.model, ctx.train, budget, tc, cfg.consts,
                theta_ref=ctx.theta_ref, hess=ctx.hessian,
                gate_mode=cfg.gate_mode, theta_floor=cfg.theta_floor,
            )
        export_private(outcome.d_priv, out)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(
        f"exported {outcome.d_priv.n} instances (method={method}, epsilon={epsilon:g}) -> {out}"
    )


@cli.command()
@click.option("--results", "results_path", required=True, type=str, help="results.csv from run.")
@click.option("--out", "out", required=True, type=str, help="Directory for plot tables.")
def report(results_path, out) -> None:
    """Aggregate a results CSV into plot-ready mean/std tables."""
    try:
        table = bench.ResultsTable.from_csv(results_path)
        written = bench.emit_plot_data(table, out)
    except FileNotFoundError as exc:
        raise click.UsageError(str(exc)) from exc
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {len(written)} plot tables -> {out}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
