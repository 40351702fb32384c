"""Command line: ``pignpi {simulate,train,evaluate,render,sweep,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence,
5 invariant/contract violation, 1 any other failure of ours.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import ACTIVATION_SWEEP, ALPHA_SWEEP, BETA_SWEEP, ExperimentConfig
from .errors import PignpiError
from . import pipeline


def _load(config, seed) -> ExperimentConfig:
    cfg = ExperimentConfig.load(config) if config else ExperimentConfig()
    if seed is not None:
        raw = cfg.raw
        raw["dataset"]["seed"] = seed
        raw["train"]["seed"] = seed
        cfg = ExperimentConfig(raw)
    return cfg


def _run(fn):
    try:
        fn()
    except PignpiError as exc:
        click.echo(f"error ({type(exc).__name__}): {exc}", err=True)
        sys.exit(exc.exit_code)


config_opt = click.option("--config", type=click.Path(dir_okay=False), default=None,
                          help="Experiment YAML file.")
out_opt = click.option("--out", type=click.Path(file_okay=False), default=None,
                       help=f"Output/data root (default ${pipeline.DATA_ENV} or ./pignpi-data).")
seed_opt = click.option("--seed", type=int, default=None, help="Override dataset and training seed.")
force_opt = click.option("--force", is_flag=True, help="Overwrite existing outputs.")
jobs_opt = click.option("--jobs", type=int, default=1, show_default=True,
                        help="Worker processes for repetitions/sweep cells.")


@click.group()
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Physics-consistent graph networks for pairwise particle interactions."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@config_opt
@out_opt
@seed_opt
@force_opt
def simulate(config, out, seed, force):
    """Simulate the trajectories a config refers to."""

    def go():
        cfg = _load(config, seed)
        root = pipeline.data_root(out)
        seen = set()
        for cell in cfg.cells():
            key = json.dumps(cell["dataset"], sort_keys=True)
            if key in seen:
                continue
            seen.add(key)
            for p in pipeline.simulate_dataset(cell["dataset"], root, force=force):
                click.echo(str(p))
            gen = cfg.raw.get("generalization")
            if gen and cell["dataset"]["law"] != "lj":
                for p in pipeline.simulate_dataset(
                        cell["dataset"], root, force=force, n_particles=gen["n_particles"],
                        n_steps=gen["n_steps"],
                        seed=gen.get("seed", cell["dataset"]["seed"] + 1000)):
                    click.echo(str(p))

    _run(go)


def _train(cfg, out, force, jobs):
    root = pipeline.data_root(out)
    results = pipeline.run_train(cfg, root, jobs=jobs, force=force)
    failed = [r for r in results if not r.get("ok")]
    for r in results:
        state = "ok" if r.get("ok") else f"FAILED: {r.get('error')}"
        click.echo(f"{r['cell']} rep{r['rep']}: {state}")
    run_dir = pipeline.run_dir_for(cfg, root)
    if len(failed) < len(results):
        click.echo(str(pipeline.write_summary(run_dir)))
    if failed and len(failed) == len(results):
        sys.exit(4)


@main.command()
@config_opt
@out_opt
@seed_opt
@force_opt
@jobs_opt
def train(config, out, seed, force, jobs):
    """Train every cell and repetition of a config, then evaluate on the test split."""
    _run(lambda: _train(_load(config, seed), out, force, jobs))


@main.command()
@config_opt
@out_opt
@seed_opt
@force_opt
@jobs_opt
@click.option("--axis", type=click.Choice(["alpha", "beta", "activation"]), multiple=True,
              help="Replace an axis with its standard sweep list.")
def sweep(config, out, seed, force, jobs, axis):
    """Like ``train``, optionally filling in the standard alpha/beta/activation sweeps."""

    def go():
        cfg = _load(config, seed)
        raw = cfg.raw
        if "alpha" in axis:
            raw["train"]["alpha"] = ALPHA_SWEEP
        if "beta" in axis:
            raw["noise"]["beta"] = BETA_SWEEP
        if "activation" in axis:
            raw["model"]["activation"] = ACTIVATION_SWEEP
        cfg = ExperimentConfig(raw)
        click.echo(f"{len(cfg.cells())} cells x {raw['repetitions']} repetitions")
        _train(cfg, out, force, jobs)

    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@out_opt
@click.option("--split", type=click.Choice(["train", "valid", "test"]), default="test")
def evaluate(run_dir, out, split):
    """Re-evaluate all checkpoints of a run directory."""

    def go():
        reports = pipeline.run_evaluate(Path(run_dir), pipeline.data_root(out), split)
        for r in reports:
            click.echo(json.dumps({"cell": r.meta.get("cell"), **r.values()}))
        click.echo(str(pipeline.write_summary(Path(run_dir), f"report_{split}.json")))

    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@out_opt
@click.option("--extent", type=float, default=3.0, show_default=True)
@click.option("--cells", type=int, default=61, show_default=True)
@click.option("--quantity", type=click.Choice(["force", "potential"]), default=None)
def render(run_dir, out, extent, cells, quantity):
    """Write field CSV grids around a probe particle for each checkpoint."""

    def go():
        for p in pipeline.run_render(Path(run_dir), pipeline.data_root(out), extent, cells,
                                     quantity):
            click.echo(str(p))

    _run(go)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Aggregate per-repetition reports into ``summary.csv`` (mean and std)."""

    def go():
        path = pipeline.write_summary(Path(run_dir))
        click.echo(path.read_text())

    _run(go)


if __name__ == "__main__":
    main()
