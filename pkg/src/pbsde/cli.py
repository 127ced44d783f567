"""Command-line entry points.

``pbsde run CONFIG`` executes the configured experiment family and writes
the report files; ``pbsde list-families`` prints the available families.
Exit codes: 0 all checks passed, 1 at least one check failed, 2 the config
was invalid.
"""

from __future__ import annotations

import sys

import click

from .errors import ConfigError
from .harness import FAMILIES, emit_report, load_config, run_experiment


@click.group()
def main():
    """Penalized-equation experiment runner."""


@main.command()
@click.argument("config_file", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", default=None, help="Override the output directory.")
@click.option(
    "--format", "out_format", type=click.Choice(["json", "csv"]), default=None,
    help="Override the report format.",
)
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads.")
def run(config_file, seed, out_dir, out_format, jobs):
    """Run the experiment described by CONFIG_FILE."""
    overrides = {"jobs": max(1, jobs)}
    if seed is not None:
        overrides["seed"] = seed
    if out_dir is not None:
        overrides["out_dir"] = out_dir
    if out_format is not None:
        overrides["out_format"] = out_format
    try:
        cfg = load_config(config_file, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    reports = run_experiment(cfg)
    paths = emit_report(reports, cfg.out_format, cfg.out_dir)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        click.echo(
            f"[{status}] {r.name}: value={r.value:.10g} reference={r.reference:.10g} "
            f"tol={r.tolerance:.3g} ({r.provenance})"
        )
    click.echo(f"wrote {', '.join(str(p) for p in paths)}")
    sys.exit(0 if all(r.passed for r in reports) else 1)


@main.command("list-families")
def list_families():
    """Print the available experiment families."""
    for name, blurb in FAMILIES.items():
        click.echo(f"{name}: {blurb}")


if __name__ == "__main__":
    main()
