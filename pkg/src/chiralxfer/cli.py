"""Command-line entry point: ``chiralxfer list|validate|run|accept``."""

from __future__ import annotations

import logging
import sys

import click

from . import acceptance, harness
from .errors import ChiralXferError

_config_option = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                              help="JSON configuration document.")
_set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                           help="Override a config field by dotted path; repeatable.")
_jobs_option = click.option("--jobs", type=click.IntRange(min=1), envvar="CHIRALXFER_JOBS", default=None,
                            help="Parallel sweep points (falls back to CHIRALXFER_JOBS, then 1).")


def _load(experiment, config_path, overrides) -> harness.ExperimentConfig:
    try:
        return harness.load_config(config_path, overrides, experiment)
    except ChiralXferError as err:
        raise click.UsageError(str(err)) from None


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (-v) or debug detail (-vv).")
def main(verbose):
    """Simulate noise-immune quantum state transfer in chiral waveguide networks."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("list")
def list_cmd():
    """Show every experiment, its engines and its acceptance tolerance."""
    for exp_id, engines, what, tol in harness.describe():
        click.echo(f"{exp_id:14s} [{engines}] {what}")
        click.echo(f"{'':14s}   tolerance: {tol}")


@main.command()
@click.argument("experiment", required=False)
@_config_option
@_set_option
def validate(experiment, config_path, overrides):
    """Check a configuration without running any physics."""
    cfg = _load(experiment, config_path, overrides)
    problems = harness.validate(cfg)
    for p in problems:
        click.echo(f"error: {p}")
    if problems:
        sys.exit(1)
    click.echo(f"{cfg.experiment}: ok ({len(cfg.points())} sweep points)")


@main.command()
@click.argument("experiment", required=False)
@_config_option
@_set_option
@click.option("--output", type=click.Path(dir_okay=False), help="Write results here instead of stdout.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@_jobs_option
def run(experiment, config_path, overrides, output, fmt, jobs):
    """Run an experiment sweep and emit one row per point."""
    cfg = _load(experiment, config_path, overrides)
    problems = harness.validate(cfg)
    if problems:
        for p in problems:
            click.echo(f"error: {p}", err=True)
        sys.exit(1)
    rows = harness.run(cfg, jobs)
    path = output or cfg.output_path
    text = harness.emit(rows, fmt, path)
    if path is None:
        click.echo(text, nl=False)
    failed = sum(1 for r in rows if "error" in r.diagnostics)
    if failed:
        click.echo(f"{failed} of {len(rows)} points failed", err=True)
        sys.exit(2)


@main.command()
@click.option("--criteria", default=None, metavar="LIST",
              help="Comma-separated criterion numbers (default: all 16).")
@_jobs_option
def accept(criteria, jobs):
    """Run the acceptance suite and print pass/fail per criterion."""
    selected = None
    if criteria:
        try:
            selected = sorted({int(c) for c in criteria.split(",")})
        except ValueError:
            raise click.UsageError("--criteria takes comma-separated integers") from None
        bad = [n for n in selected if not 1 <= n <= 16]
        if bad:
            raise click.UsageError(f"unknown criteria {bad}")
    results = acceptance.run_all(selected, jobs, echo=click.echo)
    passed = sum(r.passed for r in results)
    click.echo(f"{passed}/{len(results)} criteria passed")
    sys.exit(0 if passed == len(results) else 1)


if __name__ == "__main__":
    main()
