"""Periodic Lennard-Jones argon, in Å / ps / dalton units.

The internal energy unit is ``dalton * Å^2 / ps^2`` (= 10 J/mol).  Reported
energies and forces are converted to meV and meV/Å.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, SimulationDiverged, SingularityError
from .sim import Trajectory

AVOGADRO = 6.02214076e23          # 1/mol
ELEMENTARY_CHARGE = 1.602176634e-19  # J per eV
GAS_CONSTANT = 8.314462618         # J / (mol K)
JOULE_PER_KCAL = 4184.0
# one internal energy unit expressed in J/mol: 1e-3 kg/mol * (1e-10 m)^2 / (1e-12 s)^2
INTERNAL_J_PER_MOL = 1e-3 * 1e-20 / 1e-24


@dataclass(frozen=True)
class UnitSystem:
    """Conversions between internal units and reporting units."""

    kcal_per_mol: float = JOULE_PER_KCAL / INTERNAL_J_PER_MOL
    boltzmann: float = GAS_CONSTANT / INTERNAL_J_PER_MOL                 # internal / K
    mev: float = INTERNAL_J_PER_MOL / AVOGADRO / ELEMENTARY_CHARGE * 1e3  # meV per internal

    def energy_to_mev(self, e):
        return np.asarray(e) * self.mev

    def energy_from_mev(self, e):
        return np.asarray(e) / self.mev

    def force_to_mev_per_a(self, f):
        return np.asarray(f) * self.mev

    def force_from_mev_per_a(self, f):
        return np.asarray(f) / self.mev


UNITS = UnitSystem()


@dataclass(frozen=True)
class LjSpec:
    n_atoms: int = 258
    box_length: float = 27.27   # Å
    epsilon_kcal: float = 0.238  # kcal/mol
    sigma: float = 3.4           # Å
    cutoff_sigmas: float = 3.0
    mass: float = 39.9           # dalton
    temperature: float = 100.0   # K
    n_steps: int = 1000
    n_runs: int = 10
    dt: float = 0.002            # ps
    lattice_jitter: float = 0.05  # Å
    equilibration_steps: int = 1000

    def __post_init__(self):
        if self.cutoff >= self.box_length / 2:
            raise ConfigurationError(f"cutoff {self.cutoff} must be below half the box "
                                     f"({self.box_length / 2}) for minimum-image validity")
        if self.n_atoms < 2 or self.temperature <= 0 or self.dt <= 0:
            raise ConfigurationError("invalid LJ spec")

    @property
    def epsilon(self) -> float:
        """Well depth in internal energy units."""
        return self.epsilon_kcal * UNITS.kcal_per_mol

    @property
    def cutoff(self) -> float:
        return self.cutoff_sigmas * self.sigma

    def to_dict(self) -> dict:
        return asdict(self)


def minimum_image(r_i, r_j, box_length: float) -> np.ndarray:
    """``r_j - r_i`` with every component wrapped into ``(-box/2, box/2]``."""
    d = np.asarray(r_j, dtype=np.float64) - np.asarray(r_i, dtype=np.float64)
    return wrap_displacement(d, box_length)


def wrap_displacement(d, box_length: float) -> np.ndarray:
    return d - box_length * np.ceil(d / box_length - 0.5)


def lj_pair(r, epsilon: float, sigma: float, cutoff: float):
    """Truncated LJ: returns ``(V(r), -dV/dr)``, both zero for ``r >= cutoff``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise SingularityError("LJ pair distance must be positive")
    inside = r < cutoff
    s6 = (sigma / r) ** 6
    s12 = s6 * s6
    v = np.where(inside, 4.0 * epsilon * (s12 - s6), 0.0)
    f = np.where(inside, 24.0 * epsilon * (2.0 * s12 - s6) / r, 0.0)
    if v.ndim == 0:
        return float(v), float(f)
    return v, f


def maxwell_boltzmann_velocities(temperature: float, masses, d: int = 3, seed: int = 0) -> np.ndarray:
    """Components ~ N(0, kT/m); the net momentum is removed afterwards."""
    if temperature <= 0:
        raise ConfigurationError("temperature must be positive")
    masses = np.asarray(masses, dtype=np.float64)
    rng = np.random.default_rng(seed)
    std = np.sqrt(UNITS.boltzmann * temperature / masses)
    v = rng.standard_normal((len(masses), d)) * std[:, None]
    p = masses @ v
    return v - p[None, :] / masses.sum()


def lattice_positions(spec: LjSpec, rng: np.random.Generator) -> np.ndarray:
    per_side = int(np.ceil(spec.n_atoms ** (1.0 / 3.0) - 1e-12))
    a = spec.box_length / per_side
    grid = np.stack(np.meshgrid(*[np.arange(per_side)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    chosen = np.sort(rng.choice(len(grid), size=spec.n_atoms, replace=False))
    pos = (grid[chosen] + 0.5) * a + rng.normal(0.0, spec.lattice_jitter, size=(spec.n_atoms, 3))
    return np.mod(pos, spec.box_length)


def cutoff_pairs(positions: np.ndarray, box_length: float, cutoff: float):
    """Unordered pairs ``i < j`` within ``cutoff`` under minimum image.

    Returns ``(i, j, disp)`` with ``disp = minimum_image(r_i, r_j)``.
    """
    n = len(positions)
    iu, ju = np.triu_indices(n, k=1)
    disp = wrap_displacement(positions[ju] - positions[iu], box_length)
    r2 = np.einsum("ed,ed->e", disp, disp)
    keep = r2 < cutoff * cutoff
    return iu[keep], ju[keep], disp[keep]


def cutoff_edges(positions: np.ndarray, box_length: float, cutoff: float):
    """Directed cutoff graph: both directions of every pair, receiver-major order."""
    i, j, disp = cutoff_pairs(positions, box_length, cutoff)
    recv = np.concatenate([i, j])
    send = np.concatenate([j, i])
    disp = np.concatenate([disp, -disp])
    order = np.lexsort((send, recv))
    return recv[order], send[order], disp[order]


def _pair_terms(positions, spec: LjSpec):
    i, j, disp = cutoff_pairs(positions, spec.box_length, spec.cutoff)
    r = np.sqrt(np.einsum("ed,ed->e", disp, disp))
    v, fmag = lj_pair(r, spec.epsilon, spec.sigma, spec.cutoff)
    # force on i from j is -fmag along n_ij
    f_ij = -(fmag / r)[:, None] * disp
    return i, j, f_ij, v


def lj_forces(positions: np.ndarray, spec: LjSpec):
    """Net force per atom and total potential energy."""
    i, j, f_ij, v = _pair_terms(positions, spec)
    net = np.zeros_like(positions)
    np.add.at(net, i, f_ij)
    np.add.at(net, j, -f_ij)
    return net, float(v.sum())


def lj_edge_labels(positions: np.ndarray, spec: LjSpec):
    """Directed cutoff edges with ground-truth pair forces (on receiver) and potentials."""
    recv, send, disp = cutoff_edges(positions, spec.box_length, spec.cutoff)
    r = np.sqrt(np.einsum("ed,ed->e", disp, disp))
    v, fmag = lj_pair(r, spec.epsilon, spec.sigma, spec.cutoff)
    forces = -(fmag / r)[:, None] * disp
    return recv, send, disp, forces, v


def _verlet_step(x, v, a, masses, spec: LjSpec, step: int):
    v_half = v + 0.5 * spec.dt * a
    x = np.mod(x + spec.dt * v_half, spec.box_length)
    if not np.all(np.isfinite(x)):
        raise SimulationDiverged(step)
    f, u = lj_forces(x, spec)
    a = f / masses[:, None]
    v = v_half + 0.5 * spec.dt * a
    if not np.all(np.isfinite(v)):
        raise SimulationDiverged(step)
    return x, v, a, u


def kinetic_temperature(v, masses) -> float:
    dof = 3 * len(masses) - 3
    return float(np.einsum("n,nd,nd->", masses, v, v) / (dof * UNITS.boltzmann))


def simulate_lj(spec: LjSpec = LjSpec(), seed: int = 0) -> Trajectory:
    """NVE velocity-Verlet run; positions are stored wrapped into the box.

    The lattice start is first relaxed for ``equilibration_steps`` with
    velocities rescaled to the target temperature after every step; those
    steps are discarded and the recorded part is plain NVE.
    """
    rng = np.random.default_rng(seed)
    masses = np.full(spec.n_atoms, spec.mass)
    x = lattice_positions(spec, rng)
    v = maxwell_boltzmann_velocities(spec.temperature, masses, 3, seed=int(rng.integers(2**31)))
    f, u = lj_forces(x, spec)
    a = f / masses[:, None]
    for k in range(spec.equilibration_steps):
        x, v, a, u = _verlet_step(x, v, a, masses, spec, -(spec.equilibration_steps - k))
        v = v * np.sqrt(spec.temperature / kinetic_temperature(v, masses))

    T, n = spec.n_steps, spec.n_atoms
    pos, vel, acc = np.empty((T, n, 3)), np.empty((T, n, 3)), np.empty((T, n, 3))
    epot = np.empty(T)
    for t in range(T):
        pos[t], vel[t], acc[t], epot[t] = x, v, a, u
        if t == T - 1:
            break
        x, v, a, u = _verlet_step(x, v, a, masses, spec, t + 1)
    law = {"kind": "lj", "epsilon": spec.epsilon, "sigma": spec.sigma, "cutoff": spec.cutoff}
    meta = {"box_length": spec.box_length, "units": {"length": "angstrom", "time": "ps",
                                                    "mass": "dalton",
                                                    "energy": "dalton*angstrom^2/ps^2"},
            "lj_spec": spec.to_dict(), "potential_energy": epot.tolist(),
            "integrator": "velocity_verlet", "substeps": 1}
    return Trajectory(law=law, dt=spec.dt, seed=seed, positions=pos, velocities=vel,
                      accelerations=acc, masses=masses, charges=np.zeros(n), meta=meta)


def spec_from_trajectory(traj: Trajectory) -> LjSpec:
    return LjSpec(**traj.meta["lj_spec"])


def lj_total_energy(traj: Trajectory) -> np.ndarray:
    kin = 0.5 * np.einsum("n,tnd,tnd->t", traj.masses, traj.velocities, traj.velocities)
    return kin + np.asarray(traj.meta["potential_energy"])


def simulate_lj_runs(spec: LjSpec = LjSpec(), seed: int = 0) -> list[Trajectory]:
    return [simulate_lj(spec, seed=seed + k) for k in range(spec.n_runs)]
