"""Command-line entry points.

One subcommand per pipeline stage plus ``run-all`` and ``make-fixture``.
Configuration errors exit with status 1, missing prerequisite artifacts with
status 2; both print a one-line reason to stderr.
"""
from __future__ import annotations

import logging
import sys

import click

from .fixtures import make_fixture
from .pipeline import ConfigError, MissingArtifactError, Pipeline, load_config, validate_config

logger = logging.getLogger(__name__)


def _build_pipeline(config_path, out, seed, force) -> Pipeline:
    raw = load_config(config_path)
    if seed is not None:
        raw["seed"] = seed
    cfg = validate_config(raw)
    if out is not None:
        cfg["output_dir"] = out
    return Pipeline(cfg, force=force)


def _run_stage(stage: str, config_path, out, seed, force) -> None:
    try:
        pipeline = _build_pipeline(config_path, out, seed, force)
        if stage == "run-all":
            pipeline.run_all()
        else:
            pipeline.run(stage)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except MissingArtifactError as exc:
        click.echo(f"artifact error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"{stage}: done (outputs in {pipeline.out})")


def _stage_command(group: click.Group, name: str, help_text: str) -> None:
    @group.command(name=name, help=help_text)
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False), help="Pipeline config file.")
    @click.option("--out", default=None, type=click.Path(file_okay=False),
                  help="Output directory (overrides output_dir in the config).")
    @click.option("--seed", default=None, type=int, help="Seed override.")
    @click.option("--force", is_flag=True, help="Re-run even if the stage is up to date.")
    def _cmd(config_path, out, seed, force, _stage=name):
        _run_stage(_stage, config_path, out, seed, force)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose):
    """Smart-contract reputability toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


_STAGES = [
    ("ingest", "Load the fixture corpus, write contracts.json and the train/eval split."),
    ("disasm", "Disassemble every contract into category id sequences."),
    ("embed", "Train the category embedder and write embeddings for all contracts."),
    ("augment", "Generate synthetic minority embeddings (SMOTE / ADASYN / GAN)."),
    ("train-gbdt", "Train one boosted-tree classifier per augmentation method."),
    ("tx-features", "Aggregate hourly transaction features and cut sliding windows."),
    ("train-cae", "Train the convolutional autoencoder variants on reputable windows."),
    ("score", "Reconstruction errors and latent projections for evaluation windows."),
    ("evaluate", "Classifier and anomaly metrics against the held-out labels."),
    ("sweep", "Contract-level metrics across the percentile threshold grid."),
    ("run-all", "Run every stage in order."),
]
for _name, _help in _STAGES:
    _stage_command(main, _name, _help)


@main.command(name="make-fixture", help="Generate a synthetic labelled contract corpus.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory to write contract JSON files and labels.csv into.")
@click.option("--reputable", default=40, show_default=True, type=int,
              help="Number of reputable contracts.")
@click.option("--illicit", default=10, show_default=True, type=int,
              help="Number of illicit contracts.")
@click.option("--seed", default=7, show_default=True, type=int)
def make_fixture_cmd(out, reputable, illicit, seed):
    out_path = make_fixture(out, n_reputable=reputable, n_illicit=illicit, seed=seed)
    click.echo(f"make-fixture: wrote {reputable + illicit} contracts to {out_path}")


if __name__ == "__main__":
    main()
