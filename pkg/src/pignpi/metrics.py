"""Evaluation metrics, relative errors, field renders and the discontinuity analysis.

Per-edge and per-node errors are l1 distances (sum of absolute component
differences), averaged first over the edges (nodes) of each step and then over
steps.  For a fixed graph this is the plain mean over all rows.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import GraphDataset
from .errors import ContractViolation, DataError
from .lj import UNITS, lj_pair
from .models import GraphModel
from .sim import ForceLaw, pair_forces, pair_potentials


def _l1_rows(pred, true, vector: bool) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ContractViolation(f"shape mismatch {pred.shape} vs {true.shape}")
    diff = np.abs(pred - true)
    if vector and diff.ndim >= 2:
        return diff.sum(axis=-1)
    return diff


def _grouped_mean(values: np.ndarray, groups) -> float:
    if values.size == 0:
        raise DataError("no samples to average")
    if groups is None:
        return float(np.mean(values))
    groups = np.asarray(groups)
    if groups.shape != values.shape[:1]:
        raise ContractViolation("groups must label the leading axis")
    _, inv = np.unique(groups, return_inverse=True)
    sums = np.bincount(inv, weights=values.reshape(len(values), -1).mean(axis=1))
    counts = np.bincount(inv)
    return float(np.mean(sums / counts))


def mae_inter(pred_edges, true_edges, vector: bool = True, groups=None) -> float:
    """Mean per-edge l1 error.

    Arrays are ``(T, E, d)`` / ``(rows, d)`` for vectors or ``(T, E)`` / ``(rows,)``
    with ``vector=False`` for scalars.  ``groups`` labels each row with its time
    step when the edge count varies between steps.
    """
    return _grouped_mean(_l1_rows(pred_edges, true_edges, vector), groups)


def mae_part(pred_nodes, true_nodes, vector: bool = True, groups=None) -> float:
    """Mean per-node l1 error; same layout conventions as :func:`mae_inter`."""
    return _grouped_mean(_l1_rows(pred_nodes, true_nodes, vector), groups)


def aggregate_edges(edge_values, receivers, n_nodes: int) -> np.ndarray:
    """``phi_i = sum_j phi_ij`` for per-edge values of shape ``(E,)`` or ``(E, d)``."""
    edge_values = np.asarray(edge_values, dtype=np.float64)
    out = np.zeros((n_nodes,) + edge_values.shape[1:])
    np.add.at(out, np.asarray(receivers), edge_values)
    return out


def relative(metric: float, ground_truth, vector: bool = True) -> float:
    """``metric`` divided by the mean absolute ground-truth magnitude."""
    g = np.abs(np.asarray(ground_truth, dtype=np.float64))
    scale = float(np.mean(g.sum(axis=-1) if vector and g.ndim >= 2 else g))
    if scale == 0:
        return math.inf if metric > 0 else 0.0
    return metric / scale


# ---------------------------------------------------------------- reports

_FORCE_KEYS = ("mae_acc", "mae_ef", "mae_nf", "mae_symm_f")
_POTENTIAL_KEYS = ("mae_dep", "mae_dnp", "mae_symm_p")
_ENERGY_LIKE = ("mae_ef", "mae_nf", "mae_symm_f", "mae_dep", "mae_dnp", "mae_symm_p")


@dataclass
class MetricsReport:
    mae_acc: float | None = None
    mae_ef: float | None = None
    mae_nf: float | None = None
    mae_symm_f: float | None = None
    mae_dep: float | None = None
    mae_dnp: float | None = None
    mae_symm_p: float | None = None
    relative: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values().items():
            if not (np.isfinite(v) and v >= 0):
                raise ContractViolation(f"metric {k} = {v} is not a finite non-negative number")

    def values(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if f.name not in ("relative", "meta") and getattr(self, f.name) is not None}

    def to_dict(self) -> dict:
        return {**self.values(), "relative": dict(self.relative), "meta": dict(self.meta)}

    @classmethod
    def from_dict(cls, d: dict) -> MetricsReport:
        return cls(**d)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["metric", "value", "relative"])
        for k, v in self.values().items():
            w.writerow([k, repr(v), repr(self.relative.get(k, ""))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def scaled(self, energy_factor: float) -> MetricsReport:
        """Convert force/energy entries by ``energy_factor`` (accelerations unchanged)."""
        d = self.to_dict()
        for k in _ENERGY_LIKE:
            if d.get(k) is not None:
                d[k] = d[k] * energy_factor
        d["meta"] = {**d["meta"], "energy_factor": energy_factor}
        return MetricsReport.from_dict(d)

    def in_mev(self) -> MetricsReport:
        """LJ reporting units: meV and meV/Å."""
        return self.scaled(UNITS.mev)


def _steps_of(dataset: GraphDataset, steps) -> np.ndarray:
    steps = np.arange(dataset.n_steps) if steps is None else np.asarray(steps, dtype=np.int64)
    if steps.size == 0:
        raise DataError("no evaluation steps")
    return steps


def _batches(steps: np.ndarray, size: int):
    for k in range(0, len(steps), size):
        yield steps[k:k + size]


class _Acc:
    """Per-step means of several error streams."""

    def __init__(self):
        self.sums: dict[str, list[float]] = {}

    def add(self, key: str, per_row: np.ndarray, groups: np.ndarray, n_groups: int):
        means = np.bincount(groups, weights=per_row, minlength=n_groups) / np.bincount(
            groups, minlength=n_groups)
        self.sums.setdefault(key, []).extend(means.tolist())

    def mean(self, key: str) -> float:
        return float(np.mean(self.sums[key]))


def force_suite(model: GraphModel, dataset: GraphDataset, steps=None,
                batch_size: int = 64) -> MetricsReport:
    """MAE_acc, MAE_ef, MAE_nf and MAE_symm^F over ``steps`` (default: all)."""
    steps = _steps_of(dataset, steps)
    acc = _Acc()
    truth = _Acc()
    for chunk in _batches(steps, batch_size):
        b = dataset.batch(chunk)
        nb = len(chunk)
        node_group = np.repeat(np.arange(nb), dataset.n_particles)
        pred_acc = model.predict(b)
        f_hat = model.pairwise(b)["forces"]
        f_true = np.concatenate([dataset.edge_labels(int(t))[0] for t in chunk])
        rev = b.reverse_index()
        nf_hat = aggregate_edges(f_hat, b.receivers, b.n_nodes)
        nf_true = aggregate_edges(f_true, b.receivers, b.n_nodes)
        acc.add("mae_acc", _l1_rows(pred_acc, b.targets, True), node_group, nb)
        acc.add("mae_ef", _l1_rows(f_hat, f_true, True), b.edge_step, nb)
        acc.add("mae_nf", _l1_rows(nf_hat, nf_true, True), node_group, nb)
        acc.add("mae_symm_f", np.abs(f_hat + f_hat[rev]).sum(axis=1), b.edge_step, nb)
        truth.add("acc", np.abs(b.targets).sum(axis=1), node_group, nb)
        truth.add("ef", np.abs(f_true).sum(axis=1), b.edge_step, nb)
        truth.add("nf", np.abs(nf_true).sum(axis=1), node_group, nb)
    rep = {k: acc.mean(k) for k in _FORCE_KEYS}
    scale = {"mae_acc": truth.mean("acc"), "mae_ef": truth.mean("ef"),
             "mae_nf": truth.mean("nf"), "mae_symm_f": truth.mean("ef")}
    rel = {k: (rep[k] / scale[k] if scale[k] > 0 else 0.0) for k in rep}
    return MetricsReport(**rep, relative=rel, meta=_meta(model, dataset, steps, "force"))


def potential_suite(model: GraphModel, dataset: GraphDataset, steps=None,
                    reference_step: int = 0, batch_size: int = 32) -> MetricsReport:
    """Force metrics through the potential gradient plus MAE_Δep, MAE_Δnp, MAE_symm^P.

    Increments are taken against simulation step ``reference_step``.  When the
    edge set changes between steps (cutoff graphs) the reference potential of a
    pair is evaluated on the reference configuration directly.
    """
    if not model.derives_forces:
        raise ContractViolation("potential_suite needs a model whose messages are potentials")
    if not 0 <= reference_step < dataset.n_steps:
        raise DataError(f"reference step {reference_step} outside dataset of "
                        f"{dataset.n_steps} steps")
    steps = _steps_of(dataset, steps)
    n = dataset.n_particles
    ref = reference_step
    r0, s0, _ = dataset.edges(ref)
    p0_hat_full = model.messages_from_inputs(dataset.edge_inputs_for(ref, r0, s0))[:, 0]
    p0_true_full = dataset.edge_labels(ref)[1]
    node_p0_hat = aggregate_edges(p0_hat_full, r0, n)
    node_p0_true = aggregate_edges(p0_true_full, r0, n)

    base = force_suite(model, dataset, steps, batch_size)
    acc = _Acc()
    truth = _Acc()
    for chunk in _batches(steps, batch_size):
        b = dataset.batch(chunk)
        nb = len(chunk)
        node_group = np.repeat(np.arange(nb), n)
        p_hat = model.messages_from_inputs(b.edge_inputs)[:, 0]
        p_true, p0_hat, p0_true = [], [], []
        for k, t in enumerate(chunk):
            rt, st, _ = dataset.edges(int(t))
            p_true.append(dataset.edge_labels(int(t))[1])
            if dataset.topology == "full":
                p0_hat.append(p0_hat_full)
                p0_true.append(p0_true_full)
            else:
                p0_hat.append(model.messages_from_inputs(dataset.edge_inputs_for(ref, rt, st))[:, 0])
                p0_true.append(dataset.edge_labels(ref, rt, st)[1])
        p_true = np.concatenate(p_true)
        dp_hat = p_hat - np.concatenate(p0_hat)
        dp_true = p_true - np.concatenate(p0_true)
        np_hat = aggregate_edges(p_hat, b.receivers, b.n_nodes) - np.tile(node_p0_hat, nb)
        np_true = aggregate_edges(p_true, b.receivers, b.n_nodes) - np.tile(node_p0_true, nb)
        rev = b.reverse_index()
        acc.add("mae_dep", np.abs(dp_hat - dp_true), b.edge_step, nb)
        acc.add("mae_dnp", np.abs(np_hat - np_true), node_group, nb)
        acc.add("mae_symm_p", np.abs(p_hat - p_hat[rev]), b.edge_step, nb)
        truth.add("dep", np.abs(dp_true), b.edge_step, nb)
        truth.add("dnp", np.abs(np_true), node_group, nb)
        truth.add("p", np.abs(p_true), b.edge_step, nb)
    rep = {k: acc.mean(k) for k in _POTENTIAL_KEYS}
    scale = {"mae_dep": truth.mean("dep"), "mae_dnp": truth.mean("dnp"),
             "mae_symm_p": truth.mean("p")}
    rel = {**base.relative, **{k: (rep[k] / scale[k] if scale[k] > 0 else 0.0) for k in rep}}
    meta = _meta(model, dataset, steps, "potential")
    meta["reference_step"] = ref
    return MetricsReport(**base.values(), **rep, relative=rel, meta=meta)


def evaluate(model: GraphModel, dataset: GraphDataset, steps=None, **kw) -> MetricsReport:
    if model.derives_forces:
        return potential_suite(model, dataset, steps, **kw)
    return force_suite(model, dataset, steps, **kw)


def _meta(model: GraphModel, dataset: GraphDataset, steps, suite: str) -> dict:
    law = dataset.trajectory.law
    return {"suite": suite, "model_kind": model.kind.value, "law": law.get("kind"),
            "dim": dataset.dim, "n_particles": dataset.n_particles, "n_eval_steps": int(len(steps)),
            "trajectory_seed": dataset.trajectory.seed, "topology": dataset.topology}


def aggregate(reports: list[MetricsReport]) -> dict:
    """Mean and population standard deviation of each metric over repeated runs."""
    if not reports:
        raise DataError("no reports to aggregate")
    keys = [k for k in reports[0].values()]
    out = {}
    for k in keys:
        vals = np.array([r.values()[k] for r in reports])
        rel = np.array([r.relative.get(k, np.nan) for r in reports])
        # shifting by the first value makes identical repetitions give exactly (v, 0)
        dev = vals - vals[0]
        out[k] = {"mean": float(vals[0] + dev.mean()), "std": float(dev.std()),
                  "relative_mean": float(np.mean(rel)), "n": len(reports)}
    return out


# ---------------------------------------------------------------- field renders

@dataclass
class FieldRender:
    xs: np.ndarray
    ys: np.ndarray
    quantity: str                    # "force" | "potential"
    predicted: np.ndarray            # (ny, nx, d) or (ny, nx); NaN where skipped
    truth: np.ndarray
    magnitude_error: np.ndarray      # |norm(pred) - norm(true)|
    angle_error: np.ndarray | None   # radians in [0, pi]; forces only
    skipped: np.ndarray              # bool (ny, nx)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        d = self.predicted.shape[-1] if self.quantity == "force" else 0
        axes = "xyz"[:d]
        head = ["x", "y"]
        if d:
            head += [f"F{a}" for a in axes] + [f"F{a}_true" for a in axes] + ["magnitude_error",
                                                                           "angle_error"]
        else:
            head += ["P", "P_true", "abs_error"]
        head.append("skipped")
        w.writerow(head)
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                row = [repr(float(x)), repr(float(y))]
                if d:
                    row += [repr(float(v)) for v in self.predicted[iy, ix]]
                    row += [repr(float(v)) for v in self.truth[iy, ix]]
                    row += [repr(float(self.magnitude_error[iy, ix])),
                            repr(float(self.angle_error[iy, ix]))]
                else:
                    row += [repr(float(self.predicted[iy, ix])), repr(float(self.truth[iy, ix])),
                            repr(float(self.magnitude_error[iy, ix]))]
                row.append(int(self.skipped[iy, ix]))
                w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def angle_between(a, b) -> np.ndarray:
    """Angle in ``[0, pi]`` between row vectors; 0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = np.einsum("...d,...d->...", a, b)
    if a.shape[-1] == 2:
        cross = np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    else:
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, dot)


def render_field(model: GraphModel, probe: np.ndarray, moving: np.ndarray, xs, ys, law,
                 quantity: str = "force", delta: float = 0.01,
                 box_length: float | None = None) -> FieldRender:
    """Pair force (on the moving particle) or pair potential over a planar grid.

    ``probe`` and ``moving`` are node feature vectors; the moving particle's
    position is replaced by each grid point ``(x, y)`` (other coordinates kept
    from the probe).  Cells within ``delta`` of the probe are skipped and
    marked NaN.
    """
    layout = model.spec.layout
    d = layout.dim
    probe = np.asarray(probe, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    cells = gx.size
    eta = np.tile(moving, (cells, 1))
    eta[:, :d] = probe[:d]
    eta[:, 0] = gx.ravel()
    eta[:, 1] = gy.ravel()
    disp = probe[None, :d] - eta[:, :d]
    skipped = np.linalg.norm(disp, axis=1) < delta
    keep = ~skipped
    parts = [eta[keep], np.tile(probe, (int(keep.sum()), 1))]
    if layout.edge_displacement:
        parts.append(disp[keep])
    x = np.concatenate(parts, axis=1)
    out = model.pairwise_from_inputs(x)

    if isinstance(law, dict) and law.get("kind") == "lj":
        r = np.linalg.norm(disp[keep], axis=1)
        v, fmag = lj_pair(r, law["epsilon"], law["sigma"], law["cutoff"])
        f_true = -(fmag / r)[:, None] * disp[keep]
        p_true = v
    else:
        law = law if isinstance(law, ForceLaw) else ForceLaw(**law)
        q = layout.include_charge
        qi = eta[keep, layout.column("q")] if q else 0.0
        qj = probe[layout.column("q")] if q else 0.0
        mi, mj = eta[keep, layout.column("m")], probe[layout.column("m")]
        f_true = pair_forces(law, disp[keep], qi, qj, mi, mj)
        p_true = pair_potentials(law, disp[keep], qi, qj, mi, mj)

    shape = gx.shape
    if quantity == "force":
        pred = np.full((cells, d), np.nan)
        tru = np.full((cells, d), np.nan)
        pred[keep], tru[keep] = out["forces"], f_true
        mag = np.full(cells, np.nan)
        ang = np.full(cells, np.nan)
        mag[keep] = np.abs(np.linalg.norm(out["forces"], axis=1) - np.linalg.norm(f_true, axis=1))
        ang[keep] = angle_between(out["forces"], f_true)
        return FieldRender(xs, ys, "force", pred.reshape(shape + (d,)), tru.reshape(shape + (d,)),
                           mag.reshape(shape), ang.reshape(shape), skipped.reshape(shape))
    if quantity != "potential":
        raise ContractViolation(f"unknown render quantity {quantity!r}")
    if out["potentials"] is None:
        raise ContractViolation("model messages are forces; no potential to render")
    pred = np.full(cells, np.nan)
    tru = np.full(cells, np.nan)
    pred[keep], tru[keep] = out["potentials"], p_true
    return FieldRender(xs, ys, "potential", pred.reshape(shape), tru.reshape(shape),
                       np.abs(pred - tru).reshape(shape), None, skipped.reshape(shape))


# ---------------------------------------------------------------- discontinuity analysis

def discontinuity_offset_stats(p_hat, p_true, r, theta: float = 2.0) -> dict:
    """Mean and std of ``p_hat - p_true`` separately for ``r < theta`` and ``r >= theta``."""
    p_hat = np.asarray(p_hat, dtype=np.float64).ravel()
    p_true = np.asarray(p_true, dtype=np.float64).ravel()
    r = np.asarray(r, dtype=np.float64).ravel()
    if not (p_hat.shape == p_true.shape == r.shape):
        raise ContractViolation("p_hat, p_true and r must have the same number of samples")
    diff = p_hat - p_true
    out = {}
    for name, mask in (("near", r < theta), ("far", r >= theta)):
        if mask.any():
            out[name] = {"mean": float(diff[mask].mean()), "std": float(diff[mask].std()),
                         "count": int(mask.sum()), "empty": False}
        else:
            out[name] = {"mean": math.nan, "std": math.nan, "count": 0, "empty": True}
    return out


def pair_distances(dataset: GraphDataset, steps) -> np.ndarray:
    """Distances of every edge of the given steps, in batch order."""
    out = []
    for t in np.asarray(steps):
        rcv, snd, disp = dataset.edges(int(t))
        if disp is None:
            pos = dataset.trajectory.positions[int(t)]
            disp = pos[snd] - pos[rcv]
        out.append(np.linalg.norm(disp, axis=1))
    return np.concatenate(out)
