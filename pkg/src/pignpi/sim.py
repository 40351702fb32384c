"""Ground-truth particle simulations for the analytic pairwise laws.

Conventions: ``F_ij`` is the force on particle ``i`` exerted by ``j`` and
``P_ij`` the potential incurred by ``j`` on ``i``.  Displacements are always
``r_j - r_i`` and ``n_ij`` points from ``i`` to ``j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InvariantViolation, SimulationDiverged, SingularityError


class LawKind(str, enum.Enum):
    SPRING = "spring"
    CHARGE = "charge"
    ORBITAL = "orbital"
    DISCONTINUOUS = "discontinuous"


@dataclass(frozen=True)
class ForceLaw:
    kind: LawKind
    k: float = 2.0
    L: float = 1.0
    c: float = 1.0
    delta: float = 0.01
    theta: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        for name in ("k", "L", "c", "theta"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.delta < 0:
            raise ConfigurationError("delta must be non-negative")

    @classmethod
    def named(cls, name: str, **kw) -> ForceLaw:
        key = {"discnt": "discontinuous"}.get(name.lower(), name.lower())
        return cls(LawKind(key), **kw)

    @property
    def smooth(self) -> bool:
        return self.kind is not LawKind.DISCONTINUOUS

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "k": self.k, "L": self.L, "c": self.c,
                "delta": self.delta, "theta": self.theta}


def full_edges(n: int) -> tuple[np.ndarray, np.ndarray]:
    """All ordered pairs ``(receiver i, sender j)``, ``i != j``, receiver-major."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = i != j
    return i[mask], j[mask]


def pair_forces(law: ForceLaw, disp, q_i, q_j, m_i, m_j) -> np.ndarray:
    """Vectorised ``F_ij`` for displacements ``disp = r_j - r_i`` of shape (E, d)."""
    disp = np.asarray(disp, dtype=np.float64)
    r = np.sqrt(np.sum(disp * disp, axis=-1))
    kind = law.kind
    if kind is LawKind.DISCONTINUOUS:
        far = r >= law.theta
        mag = np.where(far, r - 1.0, 0.0)
        safe = np.where(r > 0, r, 1.0)
        return (mag / safe)[..., None] * disp
    if kind is LawKind.SPRING:
        if np.any(r == 0):
            raise SingularityError("coincident particles: spring direction undefined")
        return (law.k * (r - law.L) / r)[..., None] * disp
    if np.any(r == 0):
        raise SingularityError("coincident particles")
    if kind is LawKind.CHARGE:
        mag = -law.c * q_i * q_j / (r + law.delta) ** 2
    else:
        mag = m_i * m_j / (r + law.delta)
    return (mag / r)[..., None] * disp


def pair_potentials(law: ForceLaw, disp, q_i, q_j, m_i, m_j) -> np.ndarray:
    disp = np.asarray(disp, dtype=np.float64)
    r = np.sqrt(np.sum(disp * disp, axis=-1))
    kind = law.kind
    if kind is LawKind.SPRING:
        return 0.5 * law.k * (r - law.L) ** 2
    if kind is LawKind.DISCONTINUOUS:
        return np.where(r >= law.theta, 0.5 * (r - 1.0) ** 2, 0.0)
    if law.delta == 0 and np.any(r == 0):
        raise SingularityError("coincident particles")
    if kind is LawKind.CHARGE:
        return law.c * q_i * q_j / (r + law.delta)
    return m_i * m_j * np.log(r + law.delta)


@dataclass(frozen=True)
class ParticleState:
    position: np.ndarray
    velocity: np.ndarray
    mass: float
    charge: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigurationError("mass must be positive")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64))


def pairwise_force(law: ForceLaw, state_i: ParticleState, state_j: ParticleState) -> np.ndarray:
    disp = (state_j.position - state_i.position)[None]
    return pair_forces(law, disp, state_i.charge, state_j.charge, state_i.mass, state_j.mass)[0]


def pairwise_potential(law: ForceLaw, state_i: ParticleState, state_j: ParticleState) -> float:
    disp = (state_j.position - state_i.position)[None]
    return float(pair_potentials(law, disp, state_i.charge, state_j.charge,
                                 state_i.mass, state_j.mass)[0])


@dataclass
class ParticleSystem:
    """Array form of a list of :class:`ParticleState`."""

    positions: np.ndarray   # (N, d)
    velocities: np.ndarray  # (N, d)
    masses: np.ndarray      # (N,)
    charges: np.ndarray     # (N,)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.charges = np.asarray(self.charges, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] not in (2, 3):
            raise ConfigurationError(f"positions must be (N, 2|3), got {self.positions.shape}")
        if np.any(self.masses <= 0):
            raise ConfigurationError("masses must be positive")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def from_states(cls, states: list[ParticleState]) -> ParticleSystem:
        return cls(np.stack([s.position for s in states]), np.stack([s.velocity for s in states]),
                   np.array([s.mass for s in states]), np.array([s.charge for s in states]))

    def states(self) -> list[ParticleState]:
        return [ParticleState(self.positions[i], self.velocities[i], float(self.masses[i]),
                              float(self.charges[i])) for i in range(self.n)]


def sample_initial_system(n_particles: int, d: int, law: ForceLaw | None = None,
                          seed: int = 0) -> ParticleSystem:
    """ln(m) ~ U(-1, 1), q ~ U(-1, 1), positions and velocities ~ N(0, 1)."""
    if n_particles < 1 or d not in (2, 3):
        raise ConfigurationError(f"need n >= 1 and d in (2, 3), got n={n_particles}, d={d}")
    rng = np.random.default_rng(seed)
    masses = np.exp(rng.uniform(-1.0, 1.0, size=n_particles))
    charges = rng.uniform(-1.0, 1.0, size=n_particles)
    positions = rng.standard_normal((n_particles, d))
    velocities = rng.standard_normal((n_particles, d))
    return ParticleSystem(positions, velocities, masses, charges)


@dataclass
class Trajectory:
    """Time-major record of a simulation.

    ``forces``/``potentials`` are per-edge labels aligned with
    ``receivers``/``senders``; they may be ``None`` for systems whose edge set
    changes per step (see :mod:`pignpi.lj`).
    """

    law: dict
    dt: float
    seed: int
    positions: np.ndarray       # (T, N, d)
    velocities: np.ndarray      # (T, N, d)
    accelerations: np.ndarray   # (T, N, d)
    masses: np.ndarray          # (N,)
    charges: np.ndarray         # (N,)
    receivers: np.ndarray | None = None
    senders: np.ndarray | None = None
    forces: np.ndarray | None = None      # (T, E, d)
    potentials: np.ndarray | None = None  # (T, E)
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def box_length(self) -> float | None:
        return self.meta.get("box_length")

    def force_law(self) -> ForceLaw | None:
        if self.law.get("kind") in {k.value for k in LawKind}:
            return ForceLaw(**self.law)
        return None

    def momentum(self) -> np.ndarray:
        return np.einsum("n,tnd->td", self.masses, self.velocities)

    def with_kinematics(self, positions, velocities, accelerations) -> Trajectory:
        return replace(self, positions=positions, velocities=velocities,
                       accelerations=accelerations)

    def check_labels(self, atol: float = 1e-12) -> None:
        """Newton's third law on labels and ``m a = sum_j F_ij`` at every step."""
        if self.forces is None:
            return
        e = len(self.receivers)
        rev = reverse_edge_index(self.receivers, self.senders)
        if np.max(np.abs(self.forces + self.forces[:, rev]), initial=0.0) > 0:
            raise InvariantViolation("recorded forces are not antisymmetric")
        net = np.zeros_like(self.accelerations)
        for t in range(self.n_steps):
            np.add.at(net[t], self.receivers, self.forces[t])
        resid = np.abs(net - self.masses[None, :, None] * self.accelerations)
        scale = 1.0 + np.abs(net)
        if e and np.max(resid / scale) > atol:
            raise InvariantViolation("accelerations do not match summed pair forces")


def reverse_edge_index(receivers: np.ndarray, senders: np.ndarray) -> np.ndarray:
    """Index ``rev`` such that edge ``rev[e]`` is edge ``e`` with endpoints swapped."""
    n = int(max(receivers.max(initial=-1), senders.max(initial=-1))) + 1
    key = receivers.astype(np.int64) * n + senders
    order = np.argsort(key)
    target = senders.astype(np.int64) * n + receivers
    pos = np.searchsorted(key[order], target)
    if np.any(pos >= len(key)) or np.any(key[order][np.minimum(pos, len(key) - 1)] != target):
        raise InvariantViolation("edge set is not symmetric")
    return order[pos]


def edge_labels(law: ForceLaw, positions, masses, charges, receivers, senders):
    """Forces (E, d) and potentials (E,) for one configuration."""
    disp = positions[senders] - positions[receivers]
    qi, qj = charges[receivers], charges[senders]
    mi, mj = masses[receivers], masses[senders]
    return (pair_forces(law, disp, qi, qj, mi, mj), pair_potentials(law, disp, qi, qj, mi, mj))


def net_accelerations(forces, receivers, masses) -> np.ndarray:
    net = np.zeros((len(masses), forces.shape[-1]))
    np.add.at(net, receivers, forces)
    return net / masses[:, None]


def simulate(system: ParticleSystem, law: ForceLaw, n_steps: int, dt: float = 0.01,
             seed: int = 0, substeps: int = 10) -> Trajectory:
    """Velocity-Verlet integration recording ``n_steps`` states spaced ``dt`` apart.

    Each recorded interval is integrated with ``substeps`` Verlet steps of
    ``dt / substeps``; the spring potential has a cusp at ``r = 0`` and close
    passes otherwise dominate the energy error.
    """
    if n_steps < 1 or substeps < 1:
        raise ConfigurationError("n_steps and substeps must be >= 1")
    n, d = system.n, system.dim
    recv, send = full_edges(n)
    m, q = system.masses, system.charges
    qi, qj, mi, mj = q[recv], q[send], m[recv], m[send]

    def accel(x):
        f = pair_forces(law, x[send] - x[recv], qi, qj, mi, mj)
        # receiver-major full edge list: each node owns a contiguous block of n - 1 edges
        return f, f.reshape(n, n - 1, d).sum(axis=1) / m[:, None] if n > 1 else np.zeros((n, d))

    pos = np.empty((n_steps, n, d))
    vel = np.empty((n_steps, n, d))
    acc = np.empty((n_steps, n, d))
    forces = np.empty((n_steps, len(recv), d))
    pots = np.empty((n_steps, len(recv)))

    h = dt / substeps
    x = system.positions.copy()
    v = system.velocities.copy()
    f, a = accel(x)
    step = 0
    for t in range(n_steps):
        pos[t], vel[t], acc[t], forces[t] = x, v, a, f
        pots[t] = pair_potentials(law, x[send] - x[recv], qi, qj, mi, mj)
        if t == n_steps - 1:
            break
        for _ in range(substeps):
            step += 1
            v_half = v + 0.5 * h * a
            x = x + h * v_half
            if not np.all(np.isfinite(x)):
                raise SimulationDiverged(t + 1, f"non-finite positions at step {t + 1} "
                                                f"(substep {step})")
            try:
                f, a = accel(x)
            except SingularityError as exc:
                raise SimulationDiverged(t + 1, f"singular configuration at step {t + 1}") from exc
            v = v_half + 0.5 * h * a
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a))):
                raise SimulationDiverged(t + 1)
    return Trajectory(law=law.to_dict(), dt=dt, seed=seed, positions=pos, velocities=vel,
                      accelerations=acc, masses=m.copy(), charges=q.copy(), receivers=recv,
                      senders=send, forces=forces, potentials=pots,
                      meta={"integrator": "velocity_verlet", "substeps": substeps})


def total_energy(traj: Trajectory) -> np.ndarray:
    """Kinetic plus pair potential energy, each unordered pair counted once."""
    kin = 0.5 * np.einsum("n,tnd,tnd->t", traj.masses, traj.velocities, traj.velocities)
    return kin + 0.5 * traj.potentials.sum(axis=1)


def simulate_law(law: ForceLaw | str, n_particles: int, d: int, n_steps: int,
                 dt: float = 0.01, seed: int = 0, substeps: int = 10) -> Trajectory:
    law = ForceLaw.named(law) if isinstance(law, str) else law
    return simulate(sample_initial_system(n_particles, d, law, seed), law, n_steps, dt, seed,
                    substeps=substeps)
