"""Activation functions with closed-form first and second derivatives."""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import erf, expit

LEAKY_SLOPE = 0.01
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ActivationKind(str, enum.Enum):
    SILU = "silu"
    RELU = "relu"
    GELU = "gelu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    LEAKY_RELU = "leaky_relu"

    @classmethod
    def parse(cls, name: str | "ActivationKind") -> "ActivationKind":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "_")
        aliases = {"leakyrelu": "leaky_relu", "swish": "silu"}
        return cls(aliases.get(key, key))

    @property
    def smooth(self) -> bool:
        """True when the first derivative is continuous everywhere."""
        return self not in (ActivationKind.RELU, ActivationKind.LEAKY_RELU)


def activation_value(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.SILU:
        return x * expit(x)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    if kind is ActivationKind.GELU:
        return 0.5 * x * (1.0 + erf(x / _SQRT2))
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.SIGMOID:
        return expit(x)
    if kind is ActivationKind.SOFTPLUS:
        return np.logaddexp(0.0, x)
    if kind is ActivationKind.LEAKY_RELU:
        return np.where(x >= 0.0, x, LEAKY_SLOPE * x)
    raise ValueError(kind)


def activation_d1(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.SILU:
        s = expit(x)
        return s * (1.0 + x * (1.0 - s))
    if kind is ActivationKind.RELU:
        return (x > 0.0).astype(np.float64)
    if kind is ActivationKind.GELU:
        return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind in (ActivationKind.SIGMOID, ActivationKind.SOFTPLUS):
        s = expit(x)
        return s * (1.0 - s) if kind is ActivationKind.SIGMOID else s
    if kind is ActivationKind.LEAKY_RELU:
        return np.where(x >= 0.0, 1.0, LEAKY_SLOPE)
    raise ValueError(kind)


def activation_d2(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    if kind is ActivationKind.SILU:
        s = expit(x)
        ds = s * (1.0 - s)
        return 2.0 * ds + x * ds * (1.0 - 2.0 * s)
    if kind in (ActivationKind.RELU, ActivationKind.LEAKY_RELU):
        return np.zeros_like(x)
    if kind is ActivationKind.GELU:
        return _INV_SQRT_2PI * np.exp(-0.5 * x * x) * (2.0 - x * x)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)
    if kind is ActivationKind.SIGMOID:
        s = expit(x)
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    if kind is ActivationKind.SOFTPLUS:
        s = expit(x)
        return s * (1.0 - s)
    raise ValueError(kind)


def activation_eval(kind, x):
    """Return ``(value, first derivative)`` of the activation at ``x``."""
    kind = ActivationKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    v, d = activation_value(kind, x), activation_d1(kind, x)
    if v.ndim == 0:
        return float(v), float(d)
    return v, d
