"""Decoupled accumulation and update (DAU) training.

Every mini-batch of ``m`` samples is forwarded and back-propagated and its
gradients accumulated; the weights are updated only every ``n`` mini-batches,
with the mean of the accumulated gradients.  Each weight update clears the
accumulator and commits every streaming normalization layer.
"""

import csv
import logging
import math
import time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .norm import StreamNorm

log = logging.getLogger(__name__)

CSV_COLUMNS = ["epoch", "batch_index", "update_index", "train_loss", "smoothed_loss",
               "eval_loss", "eval_error", "wall_time_s"]


@dataclass
class TrainConfig:
    m: int = 32
    n: int = 1
    optimizer: str = "sgd_momentum"
    lr: float = 0.1
    momentum: float = 0.9
    schedule: list = field(default_factory=lambda: [(25, 0.1), (5, 0.01)])
    seed: int = 0
    eval_every: int = 0
    smooth: int = 50
    record_time: bool = False

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ParameterError("samples per batch and batches per update must be >= 1")
        if self.optimizer not in ("sgd_momentum", "manhattan"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        self.schedule = [(int(e), float(r)) for e, r in self.schedule]
        if not self.schedule or any(e < 0 for e, _ in self.schedule):
            raise ParameterError("schedule must be a non-empty list of (epochs, lr)")

    @property
    def epochs(self):
        return sum(e for e, _ in self.schedule)

    def lr_at(self, epoch):
        """Learning rate for a zero-based epoch index."""
        end = 0
        for e, r in self.schedule:
            end += e
            if epoch < end:
                return r
        return self.schedule[-1][1]


def sgd_momentum_step(params, grads, lr, momentum, velocity):
    """Heavy-ball SGD: ``v = momentum * v + g``; ``w -= lr * v``.  Updates in place."""
    for i, (w, g) in enumerate(zip(params, grads)):
        v = velocity.get(i)
        v = g.copy() if v is None else momentum * v + g
        velocity[i] = v
        w -= lr * v
    return params


def manhattan_step(params, grads, lr):
    """Sign-of-gradient update ``w -= lr * sign(g)``.  Updates in place."""
    for w, g in zip(params, grads):
        w -= lr * np.sign(g)
    return params


class Optimizer:
    def __init__(self, kind="sgd_momentum", momentum=0.9):
        self.kind = kind
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads, lr):
        if self.kind == "manhattan":
            return manhattan_step(params, grads, lr)
        return sgd_momentum_step(params, grads, lr, self.momentum, self.velocity)


class GradAccumulator:
    """Tracks gradients summed into a model's ``grads`` since the last update."""

    def __init__(self, model):
        self.model = model
        self.count = 0

    def add(self):
        self.count += 1

    def mean(self):
        """Per-parameter averages over the accumulated batches."""
        scale = 1.0 / max(self.count, 1)
        return [m.grads[k] * scale for m, k in self.model.parameters()]

    def clear(self):
        self.model.zero_grad()
        self.count = 0


def streaming_layers(model):
    return [m for m in model.modules() if isinstance(m, StreamNorm)]


def commit_all(model):
    """Commit every streaming layer that saw data since the last update.

    Time-specific stores for steps beyond a short final window are skipped
    rather than warned about.
    """
    for layer in streaming_layers(model):
        if layer.counter or layer.g_counter:
            layer.commit()


def evaluate(model, batches):
    """Mean loss and error rate with every layer in eval mode.

    Training mode is restored afterwards; normalization state is untouched.
    """
    was_training = model.training
    model.eval()
    try:
        return model.evaluate(batches)
    finally:
        if was_training:
            model.train()


def smooth(values, span=50):
    """Trailing moving average over the last ``span`` values."""
    out, window, total = [], deque(), 0.0
    for v in values:
        window.append(v)
        total += v
        if len(window) > span:
            total -= window.popleft()
        out.append(total / len(window))
    return out


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    updates: int = 0

    @property
    def losses(self):
        return [r["train_loss"] for r in self.rows]

    @property
    def smoothed(self):
        return [r["smoothed_loss"] for r in self.rows]

    def evals(self):
        return [r for r in self.rows if r["eval_loss"] != ""]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r[k]) for k in CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def dau_train(model, batches_for_epoch, cfg, eval_fn=None, on_batch=None):
    """Train ``model`` with decoupled accumulation and update.

    ``batches_for_epoch(epoch)`` returns an iterable of mini-batches that
    arrive strictly online.  ``eval_fn(model)`` returns ``(loss, error)`` and
    is called every ``cfg.eval_every`` batches (and after the last batch).
    ``on_batch(model, batch_index, loss, batch)`` runs after each backward pass.
    """
    opt = Optimizer(cfg.optimizer, cfg.momentum)
    acc = GradAccumulator(model)
    out = TrainLog()
    model.train()
    model.zero_grad()
    window, total = deque(), 0.0
    start = time.perf_counter()
    batch_index = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        model.begin_epoch(epoch)
        for batch in batches_for_epoch(epoch):
            loss = model.forward_loss(batch)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at batch {batch_index}", batch_index)
            model.backward()
            acc.add()
            if on_batch is not None:
                on_batch(model, batch_index, loss, batch)
            if acc.count == cfg.n:
                params = [m.params[k] for m, k in model.parameters()]
                opt.step(params, acc.mean(), lr)
                acc.clear()
                commit_all(model)
                out.updates += 1
            window.append(loss)
            total += loss
            if len(window) > cfg.smooth:
                total -= window.popleft()
            row = {"epoch": epoch, "batch_index": batch_index, "update_index": out.updates,
                   "train_loss": loss, "smoothed_loss": total / len(window),
                   "eval_loss": "", "eval_error": "",
                   "wall_time_s": round(time.perf_counter() - start, 3) if cfg.record_time else ""}
            if eval_fn is not None and cfg.eval_every and (batch_index + 1) % cfg.eval_every == 0:
                row["eval_loss"], row["eval_error"] = (float(v) for v in eval_fn(model))
            out.rows.append(row)
            batch_index += 1
    if batch_index and batch_index < cfg.n:
        warnings.warn(f"only {batch_index} batches for {cfg.n} batches per update; "
                      "no weight update was performed", stacklevel=2)
    if eval_fn is not None and out.rows and out.rows[-1]["eval_loss"] == "":
        r = out.rows[-1]
        r["eval_loss"], r["eval_error"] = (float(v) for v in eval_fn(model))
    log.info("trained %d batches, %d updates", batch_index, out.updates)
    return out
