"""Edge-network graph models that predict accelerations.

``PignpiForce``      messages are pairwise forces; acceleration = sum / mass.
``PignpiPotential``  messages are pairwise potentials; acceleration is minus
                     the receiver-position gradient of the incoming sum / mass.
``BaselineGN``       edge MLP + node MLP on ``concat(eta_i, sum_j M_ij)``.
``GnPlus``           message sum divided by ``10 ** w_i`` with learnable ``w``
                     (per node, or one shared scalar for the uniform variant).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .activations import ActivationKind
from .data import FeatureLayout, GraphBatch
from .errors import ConfigurationError, InvariantViolation
from .lj import lj_pair
from .mlp import MlpParams, check_input_differentiable, hidden_sizes, init_mlp, mlp_forward
from .sim import ForceLaw, LawKind, pair_forces

EdgeFn = Callable[[ad.Value], ad.Value]
_LN10 = math.log(10.0)


class ModelKind(str, enum.Enum):
    PIGNPI_FORCE = "pignpi_force"
    PIGNPI_POTENTIAL = "pignpi_potential"
    BASELINE = "baseline"
    GNPLUS = "gnplus"
    GNPLUS_UNIFORM = "gnplus_uniform"


@dataclass
class ModelSpec:
    kind: ModelKind
    layout: FeatureLayout
    hidden: int = 300
    layers: int = 4
    activation: ActivationKind = ActivationKind.SILU
    message: str = "force"          # what baseline messages stand for: "force" | "potential"
    n_particles: int | None = None  # GN+ only
    seed: int = 0

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.activation = ActivationKind.parse(self.activation)
        if self.kind is ModelKind.PIGNPI_FORCE:
            self.message = "force"
        elif self.kind is ModelKind.PIGNPI_POTENTIAL:
            self.message = "potential"
        elif self.kind in (ModelKind.GNPLUS, ModelKind.GNPLUS_UNIFORM):
            if self.message != "force":
                raise ConfigurationError("GN+ is defined for force messages only")
        if self.message not in ("force", "potential"):
            raise ConfigurationError(f"unknown message kind {self.message!r}")
        if self.kind is ModelKind.GNPLUS and not self.n_particles:
            raise ConfigurationError("GN+ needs the number of particles")

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def message_dim(self) -> int:
        return self.dim if self.message == "force" else 1

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "layout": self.layout.descriptor(), "hidden": self.hidden,
                "layers": self.layers, "activation": self.activation.value,
                "message": self.message, "n_particles": self.n_particles, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        d = dict(d)
        d["layout"] = FeatureLayout.from_descriptor(d["layout"])
        return cls(**d)


class GraphModel:
    """One of the five architectures; ``edge_fn`` may replace the edge MLP (oracles)."""

    def __init__(self, spec: ModelSpec, edge_net: MlpParams | None = None,
                 node_net: MlpParams | None = None, node_scalars: ad.Value | None = None,
                 edge_fn: EdgeFn | None = None, input_shift=None, input_scale=None):
        self.spec = spec
        self.edge_fn = edge_fn
        # fixed affine standardization of edge inputs, applied on the tape
        self.input_shift = None if input_shift is None else np.asarray(input_shift, dtype=np.float64)
        self.input_scale = None if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        if edge_fn is None and edge_net is None:
            edge_net = init_mlp(hidden_sizes(spec.layout.edge_input_dim, spec.message_dim,
                                             spec.hidden, spec.layers), spec.activation, spec.seed)
        if edge_net is not None:
            if edge_net.in_dim != spec.layout.edge_input_dim or edge_net.out_dim != spec.message_dim:
                raise ConfigurationError(
                    f"edge network {edge_net.in_dim}->{edge_net.out_dim} does not fit layout "
                    f"{spec.layout.edge_input_dim}->{spec.message_dim}")
        self.edge_net = edge_net
        if spec.kind is ModelKind.BASELINE and node_net is None:
            node_net = init_mlp(hidden_sizes(spec.layout.node_dim + spec.message_dim, spec.dim,
                                             spec.hidden, spec.layers), spec.activation,
                                spec.seed + 1)
        self.node_net = node_net
        if spec.kind is ModelKind.GNPLUS and node_scalars is None:
            node_scalars = ad.Value(np.zeros(spec.n_particles), requires_grad=True)
        elif spec.kind is ModelKind.GNPLUS_UNIFORM and node_scalars is None:
            node_scalars = ad.Value(np.zeros(1), requires_grad=True)
        self.node_scalars = node_scalars
        if self.derives_forces and edge_fn is None:
            check_input_differentiable(spec.activation)

    @property
    def kind(self) -> ModelKind:
        return self.spec.kind

    @property
    def derives_forces(self) -> bool:
        """Messages are potentials and forces come from their input gradient."""
        return self.spec.message == "potential"

    def parameters(self) -> list[ad.Value]:
        out = []
        if self.edge_net is not None and self.edge_fn is None:
            out += self.edge_net.parameters()
        if self.node_net is not None:
            out += self.node_net.parameters()
        if self.node_scalars is not None:
            out.append(self.node_scalars)
        return out

    # ------------------------------------------------------------ edge part

    def edge_messages(self, batch: GraphBatch, inputs: ad.Value | None = None) -> ad.Value:
        return self._edge(ad.Value(batch.edge_inputs) if inputs is None else inputs)

    def _edge(self, x: ad.Value) -> ad.Value:
        if x.shape[-1] != self.spec.layout.edge_input_dim:
            raise ConfigurationError(f"edge inputs have {x.shape[-1]} features, model expects "
                                     f"{self.spec.layout.edge_input_dim}")
        if self.edge_fn is not None:
            return self.edge_fn(x)
        if self.input_shift is not None:
            x = (x - self.input_shift) / self.input_scale
        return mlp_forward(self.edge_net, x)

    def fit_standardization(self, edge_inputs: np.ndarray) -> None:
        """Per-feature mean/std of the edge inputs (std floored at 1 for constant columns)."""
        x = np.asarray(edge_inputs, dtype=np.float64)
        std = x.std(axis=0)
        self.input_shift = x.mean(axis=0)
        self.input_scale = np.where(std > 1e-8, std, 1.0)

    def _potential_and_forces(self, edge_inputs: np.ndarray, create_graph: bool):
        """Messages and ``-dM_ij/dr_i`` for every edge."""
        x = ad.Value(np.asarray(edge_inputs, dtype=np.float64), requires_grad=True)
        m = self._edge(x)
        (g,) = ad.grad(ad.vsum(m), [x], create_graph=create_graph)
        layout = self.spec.layout
        dm_dri = g[:, layout.receiver_position]
        if layout.displacement is not None:
            # the displacement feature r_j - r_i also moves with r_i
            dm_dri = dm_dri - g[:, layout.displacement]
        return m, -dm_dri

    # ------------------------------------------------------------ node part

    def forward(self, batch: GraphBatch, create_graph: bool = False,
                return_messages: bool = False):
        """Predicted accelerations ``(Nb, d)``.

        ``create_graph`` keeps the potential-gradient on the tape so the result
        can be differentiated with respect to the parameters.
        """
        if np.any(batch.masses <= 0):
            raise InvariantViolation("node masses must be positive")
        kind = self.kind
        if kind is ModelKind.PIGNPI_POTENTIAL:
            m, f = self._potential_and_forces(batch.edge_inputs, create_graph)
            acc = ad.segment_sum(f, batch.receivers, batch.n_nodes) / batch.masses[:, None]
        else:
            m = self.edge_messages(batch)
            agg = ad.segment_sum(m, batch.receivers, batch.n_nodes)
            if kind is ModelKind.PIGNPI_FORCE:
                acc = agg / batch.masses[:, None]
            elif kind is ModelKind.BASELINE:
                acc = mlp_forward(self.node_net, ad.concat([ad.Value(batch.node_features), agg], 1))
            else:
                if kind is ModelKind.GNPLUS:
                    if batch.nodes_per_graph != self.spec.n_particles:
                        raise ConfigurationError(
                            "GN+ node scalars are tied to particle identities and cannot predict "
                            f"accelerations for a {batch.nodes_per_graph}-particle system "
                            f"(trained on {self.spec.n_particles})")
                    w = ad.gather_rows(self.node_scalars, batch.node_ids)
                else:
                    w = ad.gather_rows(self.node_scalars, np.zeros(batch.n_nodes, dtype=np.int64))
                acc = agg / ad.exp(w * _LN10).reshape(batch.n_nodes, 1)
        return (acc, m) if return_messages else acc

    def pairwise(self, batch: GraphBatch) -> dict:
        """Per-edge claimed pairwise forces (and potentials when messages are potentials)."""
        return self.pairwise_from_inputs(batch.edge_inputs)

    def pairwise_from_inputs(self, edge_inputs) -> dict:
        if self.derives_forces:
            m, f = self._potential_and_forces(edge_inputs, create_graph=False)
            return {"forces": f.data, "potentials": m.data[:, 0]}
        with ad.no_grad():
            m = self._edge(ad.Value(np.asarray(edge_inputs, dtype=np.float64)))
        return {"forces": m.data, "potentials": None}

    def messages_from_inputs(self, edge_inputs) -> np.ndarray:
        with ad.no_grad():
            return self._edge(ad.Value(np.asarray(edge_inputs, dtype=np.float64))).data

    def predict(self, batch: GraphBatch) -> np.ndarray:
        if self.kind is ModelKind.PIGNPI_POTENTIAL:
            return self.forward(batch).data
        with ad.no_grad():
            return self.forward(batch).data

    # ------------------------------------------------------------ persistence

    def state_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "edge_net": self.edge_net.to_dict() if self.edge_net is not None else None,
            "node_net": self.node_net.to_dict() if self.node_net is not None else None,
            "node_scalars": (self.node_scalars.data.tolist()
                             if self.node_scalars is not None else None),
            "input_shift": None if self.input_shift is None else self.input_shift.tolist(),
            "input_scale": None if self.input_scale is None else self.input_scale.tolist(),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> GraphModel:
        spec = ModelSpec.from_dict(d["spec"])
        edge = MlpParams.from_dict(d["edge_net"]) if d.get("edge_net") else None
        node = MlpParams.from_dict(d["node_net"]) if d.get("node_net") else None
        scal = (ad.Value(np.asarray(d["node_scalars"], dtype=np.float64), requires_grad=True)
                if d.get("node_scalars") is not None else None)
        return cls(spec, edge, node, scal, input_shift=d.get("input_shift"),
                   input_scale=d.get("input_scale"))

    def copy_parameters_from(self, arrays: list[np.ndarray]) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data = np.array(a, dtype=np.float64)

    def parameter_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]


def build_model(kind, layout: FeatureLayout, hidden: int = 300, layers: int = 4,
                activation="silu", seed: int = 0, n_particles: int | None = None,
                message: str = "force") -> GraphModel:
    spec = ModelSpec(ModelKind(kind), layout, hidden, layers, ActivationKind.parse(activation),
                     message, n_particles, seed)
    return GraphModel(spec)


def node_operator_force(messages, receivers, masses) -> np.ndarray:
    """``a_i = sum_j M_ij / m_i`` on plain arrays."""
    masses = np.asarray(masses, dtype=np.float64)
    if np.any(masses <= 0):
        raise InvariantViolation("node masses must be positive")
    messages = np.asarray(messages, dtype=np.float64)
    net = np.zeros((len(masses), messages.shape[-1]))
    np.add.at(net, np.asarray(receivers), messages)
    return net / masses[:, None]


# ---------------------------------------------------------------- oracle edge functions

def analytic_force_edge(law: ForceLaw, layout: FeatureLayout) -> EdgeFn:
    """Ground-truth pair force read straight off the edge features."""

    def fn(x: ad.Value) -> ad.Value:
        a = x.data
        disp = a[:, layout.sender_position] - a[:, layout.receiver_position]
        qi = a[:, layout.column("q")] if layout.include_charge else 0.0
        qj = a[:, layout.column("q", "sender")] if layout.include_charge else 0.0
        mi, mj = a[:, layout.column("m")], a[:, layout.column("m", "sender")]
        return ad.Value(pair_forces(law, disp, qi, qj, mi, mj))

    return fn


def analytic_potential_edge(law: ForceLaw, layout: FeatureLayout) -> EdgeFn:
    """Ground-truth pair potential written with tape ops so it can be differentiated."""

    def fn(x: ad.Value) -> ad.Value:
        disp = x[:, layout.sender_position] - x[:, layout.receiver_position]
        r = ad.sqrt(ad.vsum(disp * disp, axis=1))
        kind = law.kind
        if kind is LawKind.SPRING:
            p = 0.5 * law.k * ad.square(r - law.L)
        elif kind is LawKind.CHARGE:
            qi, qj = x[:, layout.column("q")], x[:, layout.column("q", "sender")]
            p = law.c * qi * qj / (r + law.delta)
        elif kind is LawKind.ORBITAL:
            mi, mj = x[:, layout.column("m")], x[:, layout.column("m", "sender")]
            p = mi * mj * ad.log(r + law.delta)
        else:
            far = (r.data >= law.theta).astype(np.float64)
            p = far * (0.5 * ad.square(r - 1.0))
        return p.reshape(x.shape[0], 1)

    return fn


def lj_potential_edge(epsilon: float, sigma: float, cutoff: float, layout: FeatureLayout) -> EdgeFn:
    """Truncated LJ potential as a function of the displacement feature."""

    def fn(x: ad.Value) -> ad.Value:
        disp = x[:, layout.displacement]
        r2 = ad.vsum(disp * disp, axis=1)
        s6 = ad.power(sigma * sigma / r2, 3.0)
        inside = (r2.data < cutoff * cutoff).astype(np.float64)
        return (inside * (4.0 * epsilon * (s6 * s6 - s6))).reshape(x.shape[0], 1)

    return fn


def lj_force_edge(epsilon: float, sigma: float, cutoff: float, layout: FeatureLayout) -> EdgeFn:
    def fn(x: ad.Value) -> ad.Value:
        disp = x.data[:, layout.displacement]
        r = np.sqrt(np.einsum("ed,ed->e", disp, disp))
        _, fmag = lj_pair(r, epsilon, sigma, cutoff)
        return ad.Value(-(fmag / r)[:, None] * disp)

    return fn


def oracle_model(kind, layout: FeatureLayout, law) -> GraphModel:
    """PIG'N'PI with the exact pairwise law substituted for the edge network.

    ``law`` is a :class:`ForceLaw` or the LJ law dict of a trajectory.
    """
    kind = ModelKind(kind)
    potential = kind is ModelKind.PIGNPI_POTENTIAL
    spec = ModelSpec(kind, layout, hidden=0, layers=0)
    if isinstance(law, dict) and law.get("kind") == "lj":
        args = (law["epsilon"], law["sigma"], law["cutoff"], layout)
        fn = lj_potential_edge(*args) if potential else lj_force_edge(*args)
    else:
        law = law if isinstance(law, ForceLaw) else ForceLaw(**law)
        fn = analytic_potential_edge(law, layout) if potential else analytic_force_edge(law, layout)
    return GraphModel(spec, edge_fn=fn)
