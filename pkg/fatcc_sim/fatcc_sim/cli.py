"""Command-line interface for running and comparing federated adversarial-training experiments."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import NoReturn

import click

from .config import load_sweep
from .data import label_distribution, label_entropy
from .exceptions import FatccError
from .report import compare_report
from .runner import build_data, run_sweep

logger = logging.getLogger(__name__)


def _setup_logging(verbose: bool = False) -> None:
    """Configure logging for CLI usage."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )


def _fail(error: FatccError) -> NoReturn:
    click.echo(f"ERROR: {error}", err=True)
    raise SystemExit(1)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log per-client details")
def main(verbose: bool):
    """Simulate federated adversarial training with calibration and feature contrast."""
    _setup_logging(verbose)


@main.command()
@click.option(
    "--config",
    "-c",
    "config_path",
    required=True,
    type=click.Path(path_type=Path),
    help="Flat key = value experiment file",
)
@click.argument("overrides", nargs=-1)
def run(config_path: Path, overrides: tuple[str, ...]):
    """Run the configured methods and write one CSV report per method and sweep point.

    OVERRIDES are key=value pairs that replace values from the config file.
    partition.gamma, partition.clients, calib.alpha, calib.beta and run.seed
    accept comma lists; every combination runs and gets its own reports.

    Examples:

        # Desk-scale run from a config file
        fatcc-sim run --config configs/desk_scale.conf

        # Same run, three clients and a different output
        fatcc-sim run -c configs/desk_scale.conf partition.clients=3 run.output=out/three.csv

        # Ablation sweep
        fatcc-sim run -c configs/desk_scale.conf federation.method=fst,fedpgd,fatcc

        # Three seeds at two skew levels
        fatcc-sim run -c configs/desk_scale.conf run.seed=0,1,2 partition.gamma=0.1,0.5
    """
    try:
        configs = load_sweep(config_path, overrides)
        paths = run_sweep(configs)
    except FatccError as e:
        _fail(e)
    click.echo()
    for path in paths:
        click.echo(f"Report: {path}")


@main.command()
@click.argument("report_a", type=click.Path(path_type=Path))
@click.argument("report_b", type=click.Path(path_type=Path))
@click.option("--json", "as_json", is_flag=True, help="Print the deltas as JSON")
def compare(report_a: Path, report_b: Path, as_json: bool):
    """Print per-metric differences (REPORT_A minus REPORT_B) of the summary rows."""
    try:
        comparison = compare_report(report_a, report_b)
    except FatccError as e:
        _fail(e)
    if as_json:
        click.echo(json.dumps(comparison.to_dict(), indent=2))
    else:
        click.echo(comparison.render())


@main.command()
@click.option(
    "--config",
    "-c",
    "config_path",
    required=True,
    type=click.Path(path_type=Path),
    help="Flat key = value experiment file",
)
@click.argument("overrides", nargs=-1)
def partition(config_path: Path, overrides: tuple[str, ...]):
    """Show how the configured partition splits the training set across clients.

    Comma lists in sweep keys print one table per combination.
    """
    try:
        configs = load_sweep(config_path, overrides)
        variants = [(config, build_data(config)) for config in configs]
    except FatccError as e:
        _fail(e)

    for index, (config, data) in enumerate(variants):
        if index:
            click.echo()
        counts = label_distribution(data.train, data.shards)
        click.echo(
            f"Partition: {config.partition_mode.value}, {config.partition.num_clients} clients, "
            f"gamma {config.partition.gamma}, seed {config.partition.seed}"
        )
        click.echo()
        header = "client    size  entropy  class counts"
        click.echo(header)
        click.echo("-" * len(header))
        for shard, row in zip(data.shards, counts, strict=True):
            class_counts = " ".join(str(int(c)) for c in row)
            entropy = label_entropy(row)
            click.echo(f"{shard.client_id:>6}  {shard.size:>6,}  {entropy:>7.3f}  {class_counts}")
