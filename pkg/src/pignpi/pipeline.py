"""End-to-end experiment steps used by the command line.

Layout under the output root::

    datasets/<key>.traj            trajectory container
    datasets/<key>.manifest.json
    runs/<name>/<cell>/rep<k>/     config.yaml, manifest.json, split.json,
                                   history.csv, best.json, final.json, report.json
    runs/<name>/summary.csv        mean ± std per cell (written by ``report``)
"""

from __future__ import annotations

import csv
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import ExperimentConfig, repetition_seed
from .data import (FeatureLayout, GraphDataset, corrupt_positions, dataset_for, dataset_manifest,
                   split_timesteps)
from .errors import ConfigurationError, DataError, DivergenceError, PignpiError
from .lj import LjSpec, simulate_lj
from .metrics import MetricsReport, aggregate, evaluate, render_field
from .models import GraphModel, ModelKind, build_model
from .sim import Trajectory, simulate_law
from .storage import load_trajectory, save_trajectory
from .training import TrainConfig, train

log = logging.getLogger(__name__)
DATA_ENV = "PIGNPI_DATA"


def data_root(out=None) -> Path:
    if out is not None:
        return Path(out)
    return Path(os.environ.get(DATA_ENV, "pignpi-data"))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------- datasets

def dataset_key(ds: dict, n_particles=None, n_steps=None, seed=None, run=None) -> str:
    if ds["law"] == "lj":
        return f"lj_run{run}_s{seed if seed is not None else ds['seed']}"
    return (f"{ds['law']}_d{ds['dim']}_n{n_particles or ds['n_particles']}"
            f"_T{n_steps or ds['n_steps']}_s{ds['seed'] if seed is None else seed}")


def _lj_spec(ds: dict) -> LjSpec:
    return LjSpec(**(ds.get("lj") or {}))


def simulate_dataset(ds: dict, root: Path, force: bool = False, n_particles=None, n_steps=None,
                     seed=None) -> list[Path]:
    """Simulate (or reuse) the trajectory files a dataset section describes."""
    seed = ds["seed"] if seed is None else seed
    paths = []
    if ds["law"] == "lj":
        spec = _lj_spec(ds)
        jobs = [(dataset_key(ds, seed=seed + k, run=k), lambda k=k: simulate_lj(spec, seed + k))
                for k in range(spec.n_runs)]
    else:
        n = n_particles or ds["n_particles"]
        T = n_steps or ds["n_steps"]
        jobs = [(dataset_key(ds, n, T, seed),
                 lambda: simulate_law(ds["law"], n, ds["dim"], T, ds["dt"], seed,
                                      substeps=ds.get("substeps", 10)))]
    for key, fn in jobs:
        path = root / "datasets" / f"{key}.traj"
        if path.exists() and not force:
            paths.append(path)
            continue
        traj = fn()
        save_trajectory(traj, path)
        _write_json(path.with_suffix(".manifest.json"),
                    {"file": path.name, "law": traj.law, "n_steps": traj.n_steps,
                     "n_particles": traj.n_particles, "dim": traj.dim, "seed": traj.seed,
                     "dt": traj.dt})
        paths.append(path)
    return paths


def concat_trajectories(trajs: list[Trajectory]) -> Trajectory:
    """Stack independent runs along time (used for the multi-run LJ data)."""
    if len(trajs) == 1:
        return trajs[0]
    first = trajs[0]
    meta = dict(first.meta)
    meta["run_lengths"] = [t.n_steps for t in trajs]
    if "potential_energy" in meta:
        meta["potential_energy"] = sum((list(t.meta["potential_energy"]) for t in trajs), [])
    return Trajectory(law=first.law, dt=first.dt, seed=first.seed,
                      positions=np.concatenate([t.positions for t in trajs]),
                      velocities=np.concatenate([t.velocities for t in trajs]),
                      accelerations=np.concatenate([t.accelerations for t in trajs]),
                      masses=first.masses, charges=first.charges, receivers=first.receivers,
                      senders=first.senders,
                      forces=None if first.forces is None else np.concatenate([t.forces for t in trajs]),
                      potentials=(None if first.potentials is None
                                  else np.concatenate([t.potentials for t in trajs])),
                      meta=meta)


def load_dataset(cell: dict, root: Path, n_particles=None, n_steps=None, seed=None):
    """(clean trajectory, possibly noisy dataset, run boundaries)."""
    ds = cell["dataset"]
    paths = simulate_dataset(ds, root, n_particles=n_particles, n_steps=n_steps, seed=seed)
    trajs = [load_trajectory(p) for p in paths]
    beta = float(cell["noise"]["beta"]) if n_particles is None else 0.0
    noisy = [corrupt_positions(t, beta, cell["noise"].get("seed", 0) + k)
             for k, t in enumerate(trajs)]
    clean = concat_trajectories(trajs)
    data = concat_trajectories(noisy)
    if beta > 0:
        # inputs and targets are noisy; edge labels stay those of the clean run
        data.forces, data.potentials = clean.forces, clean.potentials
    return clean, dataset_for(data), [t.n_steps for t in trajs]


def _excluded_steps(beta: float, run_lengths: list[int]) -> list[int]:
    """Endpoints of each run carry one-sided difference targets under noise."""
    if beta <= 0:
        return []
    out, start = [], 0
    for n in run_lengths:
        out += [start, start + n - 1]
        start += n
    return out


# ---------------------------------------------------------------- training

def _history_csv(hist, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "valid_loss"])
        for e, tl in enumerate(hist.train_loss):
            vl = hist.valid_loss[e] if e < len(hist.valid_loss) else ""
            w.writerow([e, repr(tl), repr(vl) if vl != "" else ""])


def save_checkpoint(model: GraphModel, path: Path, extra: dict | None = None) -> None:
    state = model.state_dict()
    state["layout_version"] = model.spec.layout.descriptor()["version"]
    if extra:
        state["extra"] = extra
    _write_json(path, state)


def load_checkpoint(path) -> GraphModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found")
    return GraphModel.from_state_dict(json.loads(path.read_text()))


def check_layout(model: GraphModel, dataset: GraphDataset) -> None:
    mine, theirs = model.spec.layout.descriptor(), dataset.layout.descriptor()
    if mine != theirs:
        raise ConfigurationError(f"feature layout mismatch: checkpoint {mine['edge_inputs']} "
                                 f"(v{mine['version']}) vs dataset {theirs['edge_inputs']} "
                                 f"(v{theirs['version']})")


def run_repetition(cell: dict, rep: int, root: Path, run_dir: Path) -> dict:
    """Train and evaluate one repetition of one sweep cell; returns a status record."""
    out = run_dir / f"rep{rep}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        _, dataset, lengths = load_dataset(cell, root)
        beta = float(cell["noise"]["beta"])
        dsc = cell["dataset"]
        split = split_timesteps(dataset.n_steps, dsc["split_ratios"], dsc["split_seed"],
                                exclude=_excluded_steps(beta, lengths))
        m = cell["model"]
        seed = repetition_seed(cell["train"]["seed"], rep)
        model = build_model(m["kind"], dataset.layout, m["hidden"], m["layers"], m["activation"],
                            seed=seed, n_particles=dataset.n_particles,
                            message=m.get("message", "force"))
        tc = TrainConfig(lr=float(cell["train"]["lr"]), batch_size=int(cell["train"]["batch_size"]),
                         max_epochs=int(cell["train"]["max_epochs"]), seed=seed,
                         alpha=float(cell["train"]["alpha"]), clip=cell["train"].get("clip"))
        (out / "config.yaml").write_text(yaml.safe_dump(cell, sort_keys=True))
        _write_json(out / "split.json", split.to_dict())
        _write_json(out / "manifest.json", dataset_manifest(
            dataset_key(dsc), dataset.topology, split, beta, dataset.layout,
            model=model.spec.to_dict(), train=tc.to_dict(), repetition=rep))
        hist = train(model, dataset, split.train, split.valid, tc)
        _history_csv(hist, out / "history.csv")
        save_checkpoint(model, out / "best.json", {"best_epoch": hist.best_epoch})
        best = model.parameter_arrays()
        model.copy_parameters_from(hist.final_parameters)
        save_checkpoint(model, out / "final.json", {"epoch": hist.epochs_run - 1})
        model.copy_parameters_from(best)
        report = evaluate(model, dataset, split.test)
        report.meta.update({"repetition": rep, "cell": cell["cell"], "split": "test"})
        report.to_json(out / "report.json")
        status = {"rep": rep, "ok": True, "best_epoch": hist.best_epoch}
        gen = cell.get("generalization")
        if gen:
            status["generalization"] = _generalize(model, cell, root, gen, out)
        return status
    except DivergenceError as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        return {"rep": rep, "ok": False, "error": str(exc)}


def _generalize(model: GraphModel, cell: dict, root: Path, gen: dict, out: Path) -> dict:
    if model.kind is ModelKind.GNPLUS:
        msg = "GN+ node scalars are tied to particle identity; generalization refused"
        (out / "generalization.txt").write_text(msg + "\n")
        return {"refused": msg}
    _, ds, _ = load_dataset(cell, root, gen["n_particles"], gen["n_steps"],
                            gen.get("seed", cell["dataset"]["seed"] + 1000))
    check_layout(model, ds)
    report = evaluate(model, ds)
    report.meta.update({"split": "generalization", "n_particles": gen["n_particles"]})
    report.to_json(out / "generalization.json")
    return {"mae_ef": report.mae_ef}


def run_dir_for(cfg: ExperimentConfig, root: Path) -> Path:
    return root / "runs" / cfg.raw["name"]


def run_train(cfg: ExperimentConfig, root: Path, jobs: int = 1, force: bool = False) -> list[dict]:
    base = run_dir_for(cfg, root)
    if base.exists() and any(base.iterdir()) and not force:
        raise ConfigurationError(f"run directory {base} exists; pass --force to overwrite")
    base.mkdir(parents=True, exist_ok=True)
    (base / "experiment.yaml").write_text(cfg.to_yaml())
    tasks = []
    for cell in cfg.cells():
        simulate_dataset(cell["dataset"], root)
        cell_dir = base / _slug(cell["cell"])
        for rep in range(int(cfg.raw["repetitions"])):
            tasks.append((cell, rep, root, cell_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    _write_json(base / "status.json", results)
    return results


def _run_task(task) -> dict:
    cell, rep, root, cell_dir = task
    try:
        res = run_repetition(cell, rep, root, cell_dir)
    except PignpiError:
        raise
    except Exception as exc:  # keep the other repetitions going
        res = {"rep": rep, "ok": False, "error": "".join(traceback.format_exception_only(exc))}
    res["cell"] = cell["cell"]
    return res


def _slug(label: str) -> str:
    return label.replace("=", "-").replace(",", "_").replace("/", "_") or "base"


# ---------------------------------------------------------------- evaluation & reports

def run_evaluate(run_dir: Path, root: Path, split: str = "test") -> list[MetricsReport]:
    """Re-evaluate every checkpoint below ``run_dir`` on its recorded split."""
    reports = []
    ckpts = sorted(Path(run_dir).rglob("best.json"))
    if not ckpts:
        raise DataError(f"no checkpoints below {run_dir}")
    for ck in ckpts:
        cell = yaml.safe_load((ck.parent / "config.yaml").read_text())
        model = load_checkpoint(ck)
        _, ds, _ = load_dataset(cell, root)
        check_layout(model, ds)
        steps = json.loads((ck.parent / "split.json").read_text())[split]
        rep = evaluate(model, ds, steps)
        rep.meta.update({"cell": cell["cell"], "checkpoint": str(ck.relative_to(run_dir)),
                         "split": split})
        rep.to_json(ck.parent / f"report_{split}.json")
        reports.append(rep)
    return reports


def collect_reports(run_dir: Path, name: str = "report.json") -> dict[str, list[MetricsReport]]:
    by_cell: dict[str, list[MetricsReport]] = {}
    for p in sorted(Path(run_dir).rglob(name)):
        rep = MetricsReport.from_dict(json.loads(p.read_text()))
        by_cell.setdefault(rep.meta.get("cell", p.parent.parent.name), []).append(rep)
    return by_cell


def write_summary(run_dir: Path, name: str = "report.json") -> Path:
    """Mean ± std table, one row per (cell, model kind), one column per metric."""
    by_cell = collect_reports(run_dir, name)
    if not by_cell:
        raise DataError(f"no {name} files below {run_dir}")
    metrics = ["mae_acc", "mae_ef", "mae_nf", "mae_symm_f", "mae_dep", "mae_dnp", "mae_symm_p"]
    path = Path(run_dir) / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "model", "n"] + [c for m in metrics for c in (m, f"{m}_std")])
        for cell, reps in sorted(by_cell.items()):
            agg = aggregate(reps)
            row = [cell, reps[0].meta.get("model_kind"), len(reps)]
            for m in metrics:
                if m in agg:
                    row += [f"{agg[m]['mean']:.6g}", f"{agg[m]['std']:.6g}"]
                else:
                    row += ["", ""]
            w.writerow(row)
    return path


def run_render(run_dir: Path, root: Path, extent: float = 3.0, cells: int = 61,
               quantity: str | None = None, step: int = 0) -> list[Path]:
    """Field CSVs around particle 0 (moving particle: particle 1) for each checkpoint."""
    out = []
    for ck in sorted(Path(run_dir).rglob("best.json")):
        cell = yaml.safe_load((ck.parent / "config.yaml").read_text())
        model = load_checkpoint(ck)
        clean, ds, _ = load_dataset(cell, root)
        check_layout(model, ds)
        eta = ds.snapshot(step).node_features
        probe, moving = eta[0].copy(), eta[1].copy()
        grid = np.linspace(-extent, extent, cells)
        q = quantity or ("potential" if model.derives_forces else "force")
        law = clean.law
        fr = render_field(model, probe, moving, probe[0] + grid, probe[1] + grid, law, q,
                          box_length=clean.box_length)
        path = ck.parent / f"field_{q}.csv"
        fr.to_csv(path)
        out.append(path)
    return out
