"""Graph datasets built from trajectories.

Node feature order is ``[r, v, q, m]`` (``[r, v, m]`` for the periodic LJ
system, which has no charge).  The edge-network input for edge ``(i <- j)``
is ``concat(eta_i, eta_j)`` with the receiver block first, followed by the
minimum-image displacement ``r_j - r_i`` when the system is periodic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .lj import cutoff_edges, lj_pair, wrap_displacement
from .sim import ForceLaw, Trajectory, edge_labels, full_edges, reverse_edge_index

LAYOUT_VERSION = "1"


@dataclass(frozen=True)
class FeatureLayout:
    dim: int
    include_charge: bool = True
    edge_displacement: bool = False

    @property
    def node_dim(self) -> int:
        return 2 * self.dim + (2 if self.include_charge else 1)

    @property
    def edge_input_dim(self) -> int:
        return 2 * self.node_dim + (self.dim if self.edge_displacement else 0)

    @property
    def receiver_position(self) -> slice:
        return slice(0, self.dim)

    @property
    def sender_position(self) -> slice:
        return slice(self.node_dim, self.node_dim + self.dim)

    @property
    def displacement(self) -> slice | None:
        if not self.edge_displacement:
            return None
        return slice(2 * self.node_dim, 2 * self.node_dim + self.dim)

    def _offset(self, name: str) -> int:
        d = self.dim
        offsets = {"r": 0, "v": d, "q": 2 * d, "m": 2 * d + (1 if self.include_charge else 0)}
        if name == "q" and not self.include_charge:
            raise KeyError("layout has no charge column")
        return offsets[name]

    def column(self, name: str, block: str = "receiver") -> int | slice:
        """Column(s) of feature ``name`` ('r', 'v', 'q', 'm') in the edge input."""
        base = 0 if block == "receiver" else self.node_dim
        off = base + self._offset(name)
        return slice(off, off + self.dim) if name in ("r", "v") else off

    def node_names(self) -> list[str]:
        axes = "xyz"[: self.dim]
        names = [f"r_{a}" for a in axes] + [f"v_{a}" for a in axes]
        names += ["q", "m"] if self.include_charge else ["m"]
        return names

    def descriptor(self) -> dict:
        names = [f"{n}_i" for n in self.node_names()] + [f"{n}_j" for n in self.node_names()]
        if self.edge_displacement:
            names += [f"dr_{a}" for a in "xyz"[: self.dim]]
        return {"version": LAYOUT_VERSION, "dim": self.dim, "include_charge": self.include_charge,
                "edge_displacement": self.edge_displacement, "edge_inputs": names}

    @classmethod
    def from_descriptor(cls, d: dict) -> FeatureLayout:
        if str(d.get("version")) != LAYOUT_VERSION:
            raise ConfigurationError(f"feature layout version {d.get('version')} is not "
                                     f"{LAYOUT_VERSION}")
        return cls(d["dim"], d["include_charge"], d["edge_displacement"])


def node_features(traj: Trajectory, layout: FeatureLayout) -> np.ndarray:
    """``(T, N, node_dim)`` array of eta vectors."""
    T, n, _ = traj.positions.shape
    cols = [traj.positions, traj.velocities]
    if layout.include_charge:
        cols.append(np.broadcast_to(traj.charges[None, :, None], (T, n, 1)))
    cols.append(np.broadcast_to(traj.masses[None, :, None], (T, n, 1)))
    return np.concatenate(cols, axis=-1)


@dataclass
class GraphSnapshot:
    n_nodes: int
    receivers: np.ndarray
    senders: np.ndarray
    node_features: np.ndarray            # (N, node_dim)
    edge_features: np.ndarray | None     # (E, d) displacement or None
    accelerations: np.ndarray            # (N, d)
    layout: FeatureLayout

    def edge_inputs(self) -> np.ndarray:
        parts = [self.node_features[self.receivers], self.node_features[self.senders]]
        if self.edge_features is not None:
            parts.append(self.edge_features)
        return np.concatenate(parts, axis=-1)


@dataclass
class GraphBatch:
    """Several snapshots stacked into one disjoint graph."""

    steps: np.ndarray
    node_features: np.ndarray     # (Nb, node_dim)
    receivers: np.ndarray         # (Eb,) global node index
    senders: np.ndarray
    edge_inputs: np.ndarray       # (Eb, edge_input_dim)
    masses: np.ndarray            # (Nb,)
    node_ids: np.ndarray          # (Nb,) particle index within its system
    edge_step: np.ndarray         # (Eb,) position of the edge's snapshot in ``steps``
    targets: np.ndarray | None    # (Nb, d)
    layout: FeatureLayout
    nodes_per_graph: int

    @property
    def n_nodes(self) -> int:
        return len(self.masses)

    @property
    def n_edges(self) -> int:
        return len(self.receivers)

    @property
    def n_graphs(self) -> int:
        return len(self.steps)

    def reverse_index(self) -> np.ndarray:
        return reverse_edge_index(self.receivers, self.senders)


@dataclass
class GraphDataset:
    """A trajectory viewed as a sequence of graphs.

    ``topology`` is ``"full"`` (all ordered pairs) or ``"cutoff"`` (pairs within
    ``cutoff`` under periodic minimum image, recomputed every step).
    """

    trajectory: Trajectory
    layout: FeatureLayout
    topology: str = "full"
    cutoff: float | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.topology not in ("full", "cutoff"):
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        if self.topology == "cutoff" and (self.cutoff is None or self.box_length is None):
            raise ConfigurationError("cutoff topology needs a cutoff radius and box metadata")
        if self.layout.dim != self.trajectory.dim:
            raise ConfigurationError("layout dimension does not match trajectory")
        self._eta = node_features(self.trajectory, self.layout)
        if self.topology == "full":
            self._recv, self._send = full_edges(self.trajectory.n_particles)
            self._rev = reverse_edge_index(self._recv, self._send) if len(self._recv) else None

    @property
    def box_length(self) -> float | None:
        return self.trajectory.box_length

    @property
    def n_steps(self) -> int:
        return self.trajectory.n_steps

    @property
    def n_particles(self) -> int:
        return self.trajectory.n_particles

    @property
    def dim(self) -> int:
        return self.trajectory.dim

    def edges(self, t: int) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        if self.topology == "full":
            return self._recv, self._send, None
        recv, send, disp = cutoff_edges(self.trajectory.positions[t], self.box_length, self.cutoff)
        return recv, send, disp

    def edge_inputs_for(self, t: int, receivers, senders) -> np.ndarray:
        """Edge-network inputs for arbitrary pairs at step ``t``."""
        eta = self._eta[t]
        parts = [eta[receivers], eta[senders]]
        if self.layout.edge_displacement:
            pos = self.trajectory.positions[t]
            parts.append(wrap_displacement(pos[senders] - pos[receivers], self.box_length))
        return np.concatenate(parts, axis=-1)

    def snapshot(self, t: int) -> GraphSnapshot:
        if not 0 <= t < self.n_steps:
            raise DataError(f"step {t} outside trajectory of {self.n_steps} steps")
        recv, send, disp = self.edges(t)
        return GraphSnapshot(self.n_particles, recv, send, self._eta[t],
                             disp if self.layout.edge_displacement else None,
                             self.trajectory.accelerations[t], self.layout)

    def batch(self, steps) -> GraphBatch:
        steps = np.atleast_1d(np.asarray(steps, dtype=np.int64))
        if steps.size == 0:
            raise DataError("empty batch")
        if steps.min() < 0 or steps.max() >= self.n_steps:
            raise DataError("batch step outside trajectory")
        n, b = self.n_particles, len(steps)
        offsets = np.arange(b) * n
        eta = self._eta[steps]
        if self.topology == "full":
            e = len(self._recv)
            x = np.concatenate([eta[:, self._recv], eta[:, self._send]], axis=-1).reshape(b * e, -1)
            recv = (self._recv[None, :] + offsets[:, None]).ravel()
            send = (self._send[None, :] + offsets[:, None]).ravel()
            edge_step = np.repeat(np.arange(b), e)
        else:
            xs, rs, ss, es = [], [], [], []
            for k, t in enumerate(steps):
                r, s, disp = self.edges(int(t))
                parts = [eta[k][r], eta[k][s]]
                if self.layout.edge_displacement:
                    parts.append(disp)
                xs.append(np.concatenate(parts, axis=-1))
                rs.append(r + offsets[k])
                ss.append(s + offsets[k])
                es.append(np.full(len(r), k))
            x, recv, send, edge_step = (np.concatenate(xs), np.concatenate(rs),
                                        np.concatenate(ss), np.concatenate(es))
        return GraphBatch(steps=steps, node_features=eta.reshape(b * n, -1), receivers=recv,
                          senders=send, edge_inputs=x,
                          masses=np.tile(self.trajectory.masses, b),
                          node_ids=np.tile(np.arange(n), b), edge_step=edge_step,
                          targets=self.trajectory.accelerations[steps].reshape(b * n, -1),
                          layout=self.layout, nodes_per_graph=n)

    def edge_labels(self, t: int, receivers=None, senders=None):
        """Ground-truth ``(forces, potentials)`` on the step-``t`` edges (or given pairs)."""
        traj = self.trajectory
        if self.topology == "full" and receivers is None and traj.forces is not None:
            return traj.forces[t], traj.potentials[t]
        if receivers is None:
            receivers, senders, _ = self.edges(t)
        pos = traj.positions[t]
        law = traj.law
        if law.get("kind") == "lj":
            disp = wrap_displacement(pos[senders] - pos[receivers], self.box_length)
            r = np.sqrt(np.einsum("ed,ed->e", disp, disp))
            v, fmag = lj_pair(r, law["epsilon"], law["sigma"], law["cutoff"])
            return -(fmag / r)[:, None] * disp, v
        return edge_labels(ForceLaw(**law), pos, traj.masses, traj.charges, receivers, senders)

    def reverse_index(self, t: int) -> np.ndarray:
        if self.topology == "full":
            return self._rev
        recv, send, _ = self.edges(t)
        return reverse_edge_index(recv, send)


def analytic_dataset(traj: Trajectory, manifest: dict | None = None) -> GraphDataset:
    return GraphDataset(traj, FeatureLayout(traj.dim), "full", manifest=manifest or {})


def lj_dataset(traj: Trajectory, manifest: dict | None = None) -> GraphDataset:
    cutoff = traj.law["cutoff"]
    return GraphDataset(traj, FeatureLayout(traj.dim, include_charge=False, edge_displacement=True),
                        "cutoff", cutoff=cutoff, manifest=manifest or {})


def dataset_for(traj: Trajectory, manifest: dict | None = None) -> GraphDataset:
    if traj.law.get("kind") == "lj":
        return lj_dataset(traj, manifest)
    return analytic_dataset(traj, manifest)


def build_snapshot(traj: Trajectory, t: int, topology: str = "full", cutoff: float | None = None,
                   box_length: float | None = None) -> GraphSnapshot:
    if topology == "cutoff":
        if cutoff is None or (box_length is None and traj.box_length is None):
            raise ConfigurationError("cutoff topology requested without cutoff radius/box metadata")
        if box_length is not None and traj.box_length is None:
            traj.meta["box_length"] = box_length
        layout = FeatureLayout(traj.dim, include_charge=False, edge_displacement=True)
        return GraphDataset(traj, layout, "cutoff", cutoff=cutoff).snapshot(t)
    return GraphDataset(traj, FeatureLayout(traj.dim), "full").snapshot(t)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def to_dict(self) -> dict:
        return {"ratios": list(self.ratios), "seed": self.seed, "train": self.train.tolist(),
                "valid": self.valid.tolist(), "test": self.test.tolist()}


def split_timesteps(n_steps: int, ratios=(0.7, 0.15, 0.15), seed: int = 0,
                    exclude=()) -> SplitSpec:
    """Uniformly random disjoint train/valid/test split of step indices."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, "
                                 f"got {ratios}")
    if n_steps < 10:
        raise ConfigurationError("need at least 10 time steps to split")
    pool = np.setdiff1d(np.arange(n_steps), np.asarray(exclude, dtype=np.int64))
    perm = np.random.default_rng(seed).permutation(pool)
    n_train = int(round(ratios[0] * len(pool)))
    n_valid = int(round(ratios[1] * len(pool)))
    return SplitSpec(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_valid]),
                     np.sort(perm[n_train + n_valid:]), ratios, seed)


# ---------------------------------------------------------------- noise

def finite_difference_kinematics(positions: np.ndarray, dt: float):
    """Velocities and accelerations from positions sampled every ``dt`` along axis 0.

    Interior steps: central differences ``(x[t+1] - x[t-1]) / 2dt`` and
    ``(x[t+1] - 2x[t] + x[t-1]) / dt^2``.  Endpoints: one-sided first
    differences for velocity and the adjacent three-point second difference
    for acceleration.
    """
    x = np.asarray(positions, dtype=np.float64)
    if x.shape[0] < 3:
        raise DataError("finite differences need at least 3 time steps")
    v = np.empty_like(x)
    a = np.empty_like(x)
    v[1:-1] = (x[2:] - x[:-2]) / (2.0 * dt)
    v[0] = (x[1] - x[0]) / dt
    v[-1] = (x[-1] - x[-2]) / dt
    a[1:-1] = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / dt**2
    a[0] = a[1]
    a[-1] = a[-2]
    return v, a


def corrupt_positions(traj: Trajectory, beta: float, seed: int = 0) -> Trajectory:
    """Add ``beta * N(0, 1)`` to every position coordinate and re-derive kinematics.

    Edge labels stay clean: they describe the true interactions.
    """
    if beta < 0:
        raise ConfigurationError("beta must be non-negative")
    if beta == 0:
        return traj
    rng = np.random.default_rng(seed)
    noisy = traj.positions + beta * rng.standard_normal(traj.positions.shape)
    v, a = finite_difference_kinematics(noisy, traj.dt)
    out = traj.with_kinematics(noisy, v, a)
    out.meta = {**traj.meta, "noise_beta": beta, "noise_seed": seed,
                "clean_accelerations_available": True}
    return out


def noise_level(clean_acc, noisy_acc) -> float:
    """Mean of ``|a~ - a| / |a|`` over all components with ``|a| > 0``."""
    clean = np.asarray(clean_acc, dtype=np.float64)
    noisy = np.asarray(noisy_acc, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise DataError(f"shape mismatch {clean.shape} vs {noisy.shape}")
    nz = np.abs(clean) > 0
    if not np.any(nz):
        raise DataError("noise level undefined: all clean components are zero")
    return float(np.mean(np.abs(noisy[nz] - clean[nz]) / np.abs(clean[nz])))


def dataset_manifest(source: str, topology: str, split: SplitSpec, beta: float,
                     layout: FeatureLayout, **extra) -> dict:
    return {"source": source, "topology": topology, "split_seed": split.seed,
            "split_ratios": list(split.ratios), "beta": beta,
            "feature_layout": layout.descriptor(), **extra}
