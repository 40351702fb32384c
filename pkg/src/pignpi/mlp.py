"""Multilayer perceptrons on top of the autodiff tape, plus their checkpoints."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .activations import ActivationKind
from .errors import ConfigurationError, ContractViolation

CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights stored as ``(in, out)`` matrices so a row batch maps by ``x @ W + b``."""

    weights: list[ad.Value]
    biases: list[ad.Value]
    activation: ActivationKind
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.activation = ActivationKind.parse(self.activation)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("MLP needs one bias per weight matrix")
        for ell, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigurationError(f"layer {ell}: weight {w.shape} / bias {b.shape} inconsistent")
            if ell and self.weights[ell - 1].shape[1] != w.shape[0]:
                raise ConfigurationError(f"layer {ell}: input {w.shape[0]} does not chain "
                                         f"with previous output {self.weights[ell - 1].shape[1]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[ad.Value]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "sizes": self.sizes,
            "activation": self.activation.value,
            "seed": self.seed,
            "weights": [w.data.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.data.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpParams:
        if d.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported MLP checkpoint version {d.get('version')}")
        sizes = d["sizes"]
        weights, biases = [], []
        for ell, (flat, b) in enumerate(zip(d["weights"], d["biases"])):
            w = np.asarray(flat, dtype=np.float64).reshape(sizes[ell], sizes[ell + 1])
            weights.append(ad.Value(w, requires_grad=True))
            biases.append(ad.Value(np.asarray(b, dtype=np.float64), requires_grad=True))
        return cls(weights, biases, ActivationKind.parse(d["activation"]), seed=d.get("seed"))

    def copy(self) -> MlpParams:
        return MlpParams.from_dict(self.to_dict())


INIT_SCHEMES = ("fan_in", "glorot")


def init_mlp(sizes: list[int], activation="silu", seed: int = 0, scheme: str = "fan_in") -> MlpParams:
    """Random initial parameters.

    ``fan_in``: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual
    default of deep-learning frameworks.  ``glorot``: Glorot-uniform weights, zero biases.
    """
    if len(sizes) < 2 or any(int(n) < 1 for n in sizes):
        raise ConfigurationError(f"invalid layer sizes {sizes}")
    if scheme not in INIT_SCHEMES:
        raise ConfigurationError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if scheme == "glorot":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
        weights.append(ad.Value(w, requires_grad=True))
        biases.append(ad.Value(b, requires_grad=True))
    return MlpParams(weights, biases, activation, seed=seed)


def hidden_sizes(in_dim: int, out_dim: int, hidden: int, layers: int) -> list[int]:
    return [in_dim] + [hidden] * layers + [out_dim]


def mlp_forward(params: MlpParams, x) -> ad.Value:
    """Apply the network to a vector or to a batch of row vectors."""
    x = ad.as_value(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape(1, x.shape[0])
    if x.shape[-1] != params.in_dim:
        raise ConfigurationError(f"input has {x.shape[-1]} features, network expects {params.in_dim}")
    h = x
    last = len(params.weights) - 1
    for ell, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if ell < last:
            h = ad.activation(h, params.activation)
    if squeeze:
        h = h.reshape(params.out_dim)
    return h


def grad_params(output: ad.Value, params: MlpParams | list[ad.Value]) -> list[np.ndarray]:
    plist = params.parameters() if isinstance(params, MlpParams) else list(params)
    if output.size != 1:
        raise ContractViolation(f"grad_params needs a scalar output, got shape {output.shape}")
    return [g.data for g in ad.grad(output, plist)]


def check_input_differentiable(activation: ActivationKind) -> None:
    """Input gradients of ReLU nets are piecewise constant: refuse them; warn for LeakyReLU."""
    activation = ActivationKind.parse(activation)
    if activation is ActivationKind.RELU:
        raise ConfigurationError("ReLU cannot be used when forces are derived from a learned "
                                 "potential: its input gradient is piecewise constant")
    if activation is ActivationKind.LEAKY_RELU:
        warnings.warn("LeakyReLU gives a discontinuous input gradient; derived forces will "
                      "not be smooth", RuntimeWarning, stacklevel=3)


def grad_input(params: MlpParams, x, selector=None, create_graph: bool = True) -> ad.Value:
    """Derivative of a scalar-output network with respect to (selected) inputs.

    The result stays on the tape when ``create_graph`` is set, so it can be
    differentiated again with respect to the parameters.  For a batch of rows,
    row ``k`` of the result is the gradient of output ``k``.
    """
    if params.out_dim != 1:
        raise ContractViolation("grad_input requires a scalar-output network")
    check_input_differentiable(params.activation)
    xin = ad.Value(np.asarray(ad.as_value(x).data), requires_grad=True)
    out = mlp_forward(params, xin)
    (g,) = ad.grad(ad.vsum(out), [xin], create_graph=create_graph)
    if selector is None:
        return g
    if g.ndim == 1:
        return g[selector]
    return g[:, selector]


def save_mlp(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict()))


def load_mlp(path) -> MlpParams:
    return MlpParams.from_dict(json.loads(Path(path).read_text()))
