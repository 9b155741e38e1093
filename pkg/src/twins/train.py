"""AdamW training loop for the toy classification task."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint, ops
from .data import ToyDataset
from .models import Twins, predict
from .tensor import NonFiniteError, backward

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    checkpoint: str | None = None
    eval_every: int = 50
    target_accuracy: float | None = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0 or self.weight_decay < 0 or self.eval_every < 1:
            raise ValueError(f"invalid training config: {self}")


class AdamW:
    """Adam with decoupled weight decay; decay skips 1-d tensors (biases, norms)."""

    def __init__(self, named_params, lr: float, weight_decay: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.ndim > 1:
                update = update + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {"optim.step": np.array([self.t], dtype=np.float64)}
        for k in self.params:
            out[f"optim.m.{k}"] = self.m[k]
            out[f"optim.v.{k}"] = self.v[k]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.t = int(tensors["optim.step"][0])
        for k, p in self.params.items():
            self.m[k] = tensors[f"optim.m.{k}"].astype(p.dtype, copy=True)
            self.v[k] = tensors[f"optim.v.{k}"].astype(p.dtype, copy=True)


def batch_indices(step: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    """Deterministic batch for ``step``: a fresh seeded permutation every epoch."""
    per_epoch = max(1, n // batch_size)
    epoch, offset = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    return perm[offset * batch_size : (offset + 1) * batch_size]


def accuracy(model: Twins, data: ToyDataset) -> float:
    return float((predict(model, data.images).argmax(axis=1) == data.labels).mean())


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    steps_run: int = 0
    final_accuracy: float = 0.0


def save_training_state(model: Twins, opt: AdamW, path) -> None:
    checkpoint.save_checkpoint(model, path, extra=opt.state())


def load_training_state(model: Twins, opt: AdamW, path) -> None:
    tensors = checkpoint.load_checkpoint(path, model.config)
    model.load_state_dict(tensors)
    opt.load_state(tensors)


def train(
    model: Twins,
    data: ToyDataset,
    cfg: TrainConfig,
    resume: str | Path | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run up to ``cfg.steps`` optimizer steps (stopping early at ``target_accuracy``)."""
    log = log or logger.info
    opt = AdamW(model.named_parameters(), cfg.lr, cfg.weight_decay)
    if resume is not None:
        load_training_state(model, opt, resume)
    images = data.images.astype(model.dtype)
    result = TrainResult()
    start = opt.t
    for step in range(start, cfg.steps):
        idx = batch_indices(step, len(data), cfg.batch_size, cfg.seed)
        model.zero_grad()
        try:
            loss = ops.cross_entropy_loss(model(images[idx]), data.labels[idx])
            backward(loss)
            opt.step()
        except NonFiniteError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(step, "loss is not finite")
        result.losses.append(value)
        result.steps_run = step + 1
        log(f"step {step + 1:5d}  loss {value:.6f}")
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps:
            acc = accuracy(model, data)
            result.evals.append((step + 1, acc))
            log(f"step {step + 1:5d}  train accuracy {acc:.4f}")
            if cfg.target_accuracy is not None and acc >= cfg.target_accuracy:
                break
    result.final_accuracy = result.evals[-1][1] if result.evals else accuracy(model, data)
    if cfg.checkpoint:
        save_training_state(model, opt, cfg.checkpoint)
    return result
