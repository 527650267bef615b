# app/cli.py

from __future__ import annotations

import functools
import logging
from typing import Callable

import click
from tabulate import tabulate

from app.config import load_config
from app.exception import PatentValuationError
from app.services.synthetic_service import (
    DEFAULT_EXCLUDED_SHARE,
    DEFAULT_VP_RATIO,
    write_synthetic_corpus,
)
from app.valuation_manager import STAGES, ValuationManager

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def format_header(key: str) -> str:
    """Convert dictionary key to properly formatted header (Title Case with spaces)."""
    return key.replace("_", " ").title()


def print_table(data: list[dict]) -> None:
    """Print data as a formatted table with proper headers."""
    if not data:
        click.echo("(No data)")
        return

    keys = list(data[0].keys())
    headers = [format_header(k) for k in keys]
    rows = [[record[k] for k in keys] for record in data]
    click.echo(tabulate(rows, headers=headers, floatfmt=".4f"))


def handle_errors(command: Callable) -> Callable:
    """
    Turn failures into "Error: ..." on stderr and exit status 1.

    Pipeline errors print their message. Anything else is reported with its
    type; the traceback is logged at DEBUG level (--verbose).
    """

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except PatentValuationError as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(1)
        except (click.ClickException, click.exceptions.Abort, click.exceptions.Exit):
            raise
        except Exception as e:
            logger.debug("Unexpected failure in %s", command.__name__, exc_info=True)
            click.echo(f"Error: unexpected {type(e).__name__}: {e}", err=True)
            raise SystemExit(1)

    return wrapper


def stage_options(command: Callable) -> Callable:
    """Options shared by every pipeline stage command."""
    command = click.option(
        "--strict", is_flag=True, default=False, help="Treat malformed corpus rows as fatal."
    )(command)
    command = click.option("--seed", type=int, default=None, help="Override the config seed.")(command)
    command = click.option(
        "--out", type=click.Path(file_okay=False), default=None, help="Output directory."
    )(command)
    command = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        required=True,
        help="TOML run configuration.",
    )(command)
    return command


def open_manager(config_path: str, out: str | None, seed: int | None, strict: bool) -> ValuationManager:
    config = load_config(config_path, seed=seed, out=out, strict=True if strict else None)
    return ValuationManager(config)


def run_stages(manager: ValuationManager, stages: tuple[str, ...]) -> None:
    """Run stages in order under the output lock, printing a summary after each."""
    with manager:
        if any(stage != "report" for stage in stages):
            manager.write_run_config()
        for stage in stages:
            result = getattr(manager, stage)()
            click.echo(f"\n--- {stage} ---")
            print_table(result if isinstance(result, list) else [result])


@click.group()
@click.option("--verbose", "-v", is_flag=True, default=False, help="Log at DEBUG level.")
def cli(verbose: bool) -> None:
    """Patent technology-valuation pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        force=True,
    )


@cli.command()
@stage_options
@handle_errors
def extract(config_path, out, seed, strict):
    """Parse the corpus and compute the feature matrix."""
    run_stages(open_manager(config_path, out, seed, strict), ("extract",))


@cli.command("train-eval")
@stage_options
@handle_errors
def train_eval(config_path, out, seed, strict):
    """Cross-validate the model grid."""
    run_stages(open_manager(config_path, out, seed, strict), ("train_eval",))


@cli.command()
@stage_options
@handle_errors
def pareto(config_path, out, seed, strict):
    """Compute the ECE/MCC Pareto front and select a model."""
    run_stages(open_manager(config_path, out, seed, strict), ("pareto",))


@cli.command()
@stage_options
@handle_errors
def explain(config_path, out, seed, strict):
    """Compute Shapley attributions for the selected model."""
    run_stages(open_manager(config_path, out, seed, strict), ("explain",))


@cli.command()
@stage_options
@handle_errors
def report(config_path, out, seed, strict):
    """Check stage integrity and write the report and manifest."""
    run_stages(open_manager(config_path, out, seed, strict), ("report",))


@cli.command()
@stage_options
@handle_errors
def run(config_path, out, seed, strict):
    """Run extract, train-eval, pareto, explain and report."""
    run_stages(open_manager(config_path, out, seed, strict), STAGES)


@cli.command()
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="JSONL file to write.")
@click.option("--n-patents", type=int, default=2000, show_default=True)
@click.option("--vp-ratio", type=float, default=DEFAULT_VP_RATIO, show_default=True)
@click.option("--excluded-share", type=float, default=DEFAULT_EXCLUDED_SHARE, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@handle_errors
def generate(out_path, n_patents, vp_ratio, excluded_share, seed):
    """Write a synthetic corpus with a planted two-indicator signal."""
    path = write_synthetic_corpus(out_path, n_patents, vp_ratio, excluded_share, seed)
    click.echo(f"Wrote {n_patents} patents to {path}")
