"""Declarative experiment configs.

A config is a YAML mapping.  Any of the sweepable fields may be given as a
list; :meth:`ExperimentConfig.cells` expands the cartesian product.

.. code-block:: yaml

    name: spring2d
    dataset: {law: spring, dim: 2, n_particles: 8, n_steps: 2000, seed: 0}
    model: {kind: [pignpi_force, baseline], hidden: 128, layers: 4, activation: silu}
    train: {lr: 0.001, batch_size: 8, max_epochs: 50, seed: 0, alpha: 0.0}
    noise: {beta: [0.0, 1.0e-6, 1.0e-5]}
    generalization: {n_particles: 12, n_steps: 1500, seed: 1012}
    repetitions: 5
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .activations import ActivationKind
from .errors import ConfigurationError
from .models import ModelKind
from .sim import LawKind

SWEEP_AXES = (
    ("dataset", "law"),
    ("dataset", "dim"),
    ("model", "kind"),
    ("model", "activation"),
    ("train", "alpha"),
    ("noise", "beta"),
)

DEFAULTS = {
    "name": "experiment",
    "dataset": {"law": "spring", "dim": 2, "n_particles": 8, "n_steps": 2000, "seed": 0,
                "dt": 0.01, "substeps": 10, "split_ratios": [0.7, 0.15, 0.15], "split_seed": 0},
    "model": {"kind": "pignpi_force", "hidden": 128, "layers": 4, "activation": "silu",
              "message": "force"},
    "train": {"lr": 1e-3, "batch_size": 8, "max_epochs": 50, "seed": 0, "alpha": 0.0,
              "clip": None},
    "noise": {"beta": 0.0, "seed": 0},
    "generalization": None,
    "repetitions": 5,
}

ALPHA_SWEEP = [0.1, 1.0, 10.0, 100.0]
BETA_SWEEP = [1e-7, 5e-7, 1e-6, 5e-6, 1e-5]
ACTIVATION_SWEEP = [k.value for k in ActivationKind]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.raw = _merge(DEFAULTS, self.raw)
        self.validate()

    @classmethod
    def from_yaml(cls, text: str) -> ExperimentConfig:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping")
        return cls(data)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} not found")
        return cls.from_yaml(path.read_text())

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:12]

    # ------------------------------------------------------------ validation

    def validate(self) -> None:
        known = set(DEFAULTS)
        unknown = set(self.raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections {sorted(unknown)}")
        for section in ("dataset", "model", "train", "noise"):
            extra = set(self.raw[section]) - set(DEFAULTS[section])
            if section == "dataset":
                extra -= {"lj"}
            if extra:
                raise ConfigurationError(f"unknown keys in {section}: {sorted(extra)}")
        for sec, key in SWEEP_AXES:
            for v in self.axis_values(sec, key):
                self._check_value(sec, key, v)
        if int(self.raw["repetitions"]) < 1:
            raise ConfigurationError("repetitions must be at least 1")
        t = self.raw["train"]
        if float(t["lr"]) < 0 or int(t["batch_size"]) < 1 or int(t["max_epochs"]) < 0:
            raise ConfigurationError("train.lr, train.batch_size, train.max_epochs out of range")
        gen = self.raw["generalization"]
        if gen is not None and not {"n_particles", "n_steps"} <= set(gen):
            raise ConfigurationError("generalization needs n_particles and n_steps")

    def axis_values(self, section: str, key: str) -> list:
        v = self.raw[section].get(key)
        return list(v) if isinstance(v, (list, tuple)) else [v]

    @staticmethod
    def _check_value(section, key, v):
        try:
            if (section, key) == ("dataset", "law"):
                if v != "lj":
                    LawKind(v)
            elif (section, key) == ("dataset", "dim"):
                if int(v) not in (2, 3):
                    raise ValueError
            elif (section, key) == ("model", "kind"):
                ModelKind(v)
            elif (section, key) == ("model", "activation"):
                ActivationKind.parse(v)
            elif float(v) < 0:
                raise ValueError
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigurationError(f"invalid value {v!r} for {section}.{key}") from exc

    # ------------------------------------------------------------ expansion

    def sweep_axes(self) -> dict:
        return {f"{s}.{k}": self.axis_values(s, k) for s, k in SWEEP_AXES
                if len(self.axis_values(s, k)) > 1}

    def cells(self) -> list[dict]:
        """One fully scalar config dict per point of the sweep grid."""
        axes = [(s, k, self.axis_values(s, k)) for s, k in SWEEP_AXES]
        out = []
        for combo in itertools.product(*[vals for _, _, vals in axes]):
            cell = copy.deepcopy(self.raw)
            label = []
            for (s, k, vals), v in zip(axes, combo):
                cell[s][k] = v
                if len(vals) > 1:
                    label.append(f"{k}={v}")
            cell["cell"] = ",".join(label) or "base"
            out.append(cell)
        return out


def repetition_seed(base: int, rep: int) -> int:
    """Seed of repetition ``rep``; repetition 0 keeps the configured seed."""
    return int(base) + 1000 * int(rep)
