"""Losses, Adam and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import GraphBatch, GraphDataset
from .errors import ConfigurationError, TrainingDiverged
from .models import GraphModel

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    seed: int = 0
    alpha: float = 0.0          # symmetry-regularization weight
    clip: float | None = None   # global gradient-norm clip
    eval_every: int = 1
    eval_steps: int | None = None  # cap on validation steps per evaluation

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("need lr >= 0, batch_size >= 1 and max_epochs >= 0")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def loss_acceleration(pred: ad.Value, target) -> ad.Value:
    """L1 over dimensions, averaged over nodes (and hence over steps)."""
    diff = pred - ad.as_value(np.asarray(target, dtype=np.float64))
    return ad.mean(ad.vsum(ad.vabs(diff), axis=1))


def symmetry_penalty(messages: ad.Value, reverse) -> ad.Value:
    """``(1/|E|) sum_{ij} |M_ij + M_ji|_1`` over all directed edges."""
    paired = ad.gather_rows(messages, np.asarray(reverse))
    return ad.mean(ad.vsum(ad.vabs(messages + paired), axis=1))


def loss_symmetry_regularized(pred: ad.Value, target, messages: ad.Value, reverse,
                              alpha: float) -> ad.Value:
    loss = loss_acceleration(pred, target)
    if alpha == 0:
        return loss
    return loss + alpha * symmetry_penalty(messages, reverse)


class Adam:
    def __init__(self, params: list[ad.Value], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
    """Functional single-tensor Adam update; returns ``(param, m, v)``."""
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    mh = m / (1 - b1 ** t)
    vh = v / (1 - b2 ** t)
    return param - lr * mh / (np.sqrt(vh) + eps), m, v


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_valid: float = float("inf")
    epochs_run: int = 0
    seconds: float = 0.0
    final_parameters: list | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("final_parameters")
        return d


def batch_loss(model: GraphModel, batch: GraphBatch, alpha: float = 0.0,
               create_graph: bool = True) -> ad.Value:
    pred, messages = model.forward(batch, create_graph=create_graph, return_messages=True)
    if alpha:
        return loss_symmetry_regularized(pred, batch.targets, messages, batch.reverse_index(), alpha)
    return loss_acceleration(pred, batch.targets)


def evaluate_loss(model: GraphModel, dataset: GraphDataset, steps, batch_size: int = 256) -> float:
    """Mean acceleration L1 loss over ``steps`` (no parameter gradients)."""
    steps = np.asarray(steps)
    total, count = 0.0, 0
    for k in range(0, len(steps), batch_size):
        b = dataset.batch(steps[k:k + batch_size])
        pred = model.predict(b)
        total += float(np.abs(pred - b.targets).sum())
        count += b.n_nodes
    return total / count


def _check_finite(loss: float, grads, params, epoch: int, it: int) -> None:
    bad = [k for k, g in enumerate(grads) if not np.all(np.isfinite(g))]
    if np.isfinite(loss) and not bad:
        return
    norms = ", ".join(f"{float(np.linalg.norm(p.data)):.3g}" for p in params)
    what = f"non-finite loss {loss}" if not np.isfinite(loss) else f"non-finite gradient in {bad}"
    raise TrainingDiverged(f"{what} at epoch {epoch}, batch {it}; parameter norms [{norms}]; "
                           "try a smaller learning rate or gradient clipping")


def train(model: GraphModel, dataset: GraphDataset, train_steps, valid_steps,
          config: TrainConfig = TrainConfig(), callback=None) -> TrainHistory:
    """Minibatch Adam on the acceleration loss; keeps the best validation parameters."""
    params = model.parameters()
    if not params:
        raise ConfigurationError("model has no trainable parameters")
    train_steps = np.asarray(train_steps, dtype=np.int64)
    valid_steps = np.asarray(valid_steps, dtype=np.int64)
    if train_steps.size == 0:
        raise ConfigurationError("empty training split")
    rng = np.random.default_rng(config.seed)
    if config.eval_steps is not None and len(valid_steps) > config.eval_steps:
        valid_steps = np.sort(rng.choice(valid_steps, config.eval_steps, replace=False))
    opt = Adam(params, lr=config.lr)
    hist = TrainHistory()
    best = model.parameter_arrays()
    t0 = time.perf_counter()
    for epoch in range(config.max_epochs):
        order = rng.permutation(train_steps)
        running, nb = 0.0, 0
        for it, k in enumerate(range(0, len(order), config.batch_size)):
            batch = dataset.batch(order[k:k + config.batch_size])
            loss = batch_loss(model, batch, config.alpha)
            grads = [g.data for g in ad.grad(loss, params)]
            _check_finite(loss.item(), grads, params, epoch, it)
            if config.clip:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
                if norm > config.clip:
                    grads = [g * (config.clip / norm) for g in grads]
            opt.step(grads)
            running += loss.item()
            nb += 1
        hist.train_loss.append(running / nb)
        hist.epochs_run = epoch + 1
        if len(valid_steps) and ((epoch + 1) % config.eval_every == 0
                                 or epoch + 1 == config.max_epochs):
            vl = evaluate_loss(model, dataset, valid_steps)
            hist.valid_loss.append(vl)
            if vl < hist.best_valid:
                hist.best_valid, hist.best_epoch = vl, epoch
                best = model.parameter_arrays()
            log.info("epoch %d train %.5f valid %.5f", epoch, hist.train_loss[-1], vl)
        if callback is not None:
            callback(epoch, hist)
    hist.final_parameters = model.parameter_arrays()
    if len(valid_steps):
        model.copy_parameters_from(best)
    hist.seconds = time.perf_counter() - t0
    return hist
