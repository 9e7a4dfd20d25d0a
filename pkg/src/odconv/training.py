"""Desk-scale training harness.

SGD with momentum and weight decay, a deterministic synthetic dataset of
oriented texture patches, a per-epoch softmax-temperature schedule for the
dynamic layers, and CSV-able per-epoch records.  Everything is seeded and
single-threaded: the same seed produces byte-identical records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .autodiff import Tape, backward, record, register_op
from .errors import NumericError, ParameterError, ShapeError
from .layer import TemperatureSchedule
from .model import ODConvUnit, SequentialModel
from .tensor import DTYPE


# --- loss ----------------------------------------------------------------

def _fwd_cross_entropy(logits, *, labels):
    b, c = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= c:
        raise ParameterError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(b), labels]
    loss = float(np.mean(log_z - picked))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    return np.array([loss], dtype=DTYPE), (probs, labels, b)


def _bwd_cross_entropy(grad, ctx, *, labels):
    probs, lab, b = ctx
    g = probs.copy()
    g[np.arange(b), lab] -= 1.0
    return (float(grad[0]) * g / b,)


register_op("cross_entropy", _fwd_cross_entropy, _bwd_cross_entropy)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the correct class."""
    value, _ = _fwd_cross_entropy(np.asarray(logits, dtype=DTYPE),
                                  labels=np.asarray(labels))
    return float(value[0])


# --- optimizer -------------------------------------------------------------

@dataclass
class OptimizerState:
    """Classic momentum SGD with decoupled-from-loss weight decay."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ParameterError("weight_decay must be >= 0")


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             state: OptimizerState) -> None:
    """In-place update: v <- m*v + g + wd*p; p <- p - lr*v."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                f"{name}: grad shape {g.shape} != param shape {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        v *= state.momentum
        v += g
        if state.weight_decay != 0.0:
            v += state.weight_decay * p
        p -= state.learning_rate * v


# --- dataset ---------------------------------------------------------------

@dataclass
class SyntheticDataset:
    """Oriented sinusoidal gratings, one orientation per class, plus noise.

    Class j uses angle j * pi / num_classes; each sample draws a random
    phase and additive Gaussian noise.  Splits are class-balanced and fully
    determined by the seed.
    """

    seed: int
    num_classes: int = 4
    size: int = 16
    channels: int = 1
    train_per_class: int = 96
    eval_per_class: int = 32
    noise_std: float = 0.4
    frequency: float = 3.0
    images: np.ndarray = field(init=False, repr=False)
    labels: np.ndarray = field(init=False, repr=False)
    eval_images: np.ndarray = field(init=False, repr=False)
    eval_labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError("need at least two classes")
        rng = np.random.default_rng(self.seed)
        self.images, self.labels = self._split(rng, self.train_per_class)
        self.eval_images, self.eval_labels = self._split(rng,
                                                         self.eval_per_class)

    def _split(self, rng, per_class):
        count = per_class * self.num_classes
        labels = np.repeat(np.arange(self.num_classes), per_class)
        images = np.empty((count, self.channels, self.size, self.size),
                          dtype=DTYPE)
        coords = np.arange(self.size, dtype=DTYPE) / self.size
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        for idx in range(count):
            angle = math.pi * labels[idx] / self.num_classes
            phase = rng.uniform(0.0, 2.0 * math.pi)
            wave = np.sin(2.0 * math.pi * self.frequency
                          * (xx * math.cos(angle) + yy * math.sin(angle))
                          + phase)
            noise = rng.normal(0.0, self.noise_std,
                               size=(self.channels, self.size, self.size))
            images[idx] = wave[None, :, :] + noise
        order = rng.permutation(count)
        return images[order], labels[order]


# --- records -----------------------------------------------------------------

CSV_HEADER = "epoch,temperature,train_loss,train_acc,eval_acc"


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    temperature: float
    train_loss: float
    train_acc: float
    eval_acc: float


@dataclass
class TrainRecord:
    rows: List[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.temperature!r},{r.train_loss!r},"
                         f"{r.train_acc!r},{r.eval_acc!r}")
        return "\n".join(lines) + "\n"


# --- loop --------------------------------------------------------------------

def _batch_ranges(count, batch_size):
    for start in range(0, count, batch_size):
        yield start, min(start + batch_size, count)


def evaluate(model: SequentialModel, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 64) -> float:
    """Fraction of correct argmax predictions at inference temperature."""
    correct = 0
    for lo, hi in _batch_ranges(images.shape[0], batch_size):
        logits = model.forward(images[lo:hi], training=False)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[lo:hi]))
    return correct / images.shape[0]


def train(model: SequentialModel, dataset: SyntheticDataset, epochs: int,
          schedule: TemperatureSchedule, seed: int,
          learning_rate: float = 0.07, momentum: float = 0.9,
          weight_decay: float = 1e-4, batch_size: int = 16) -> TrainRecord:
    """Mini-batch SGD over the dataset's train split.

    ``schedule`` is logged per epoch and should be the same object the
    model's dynamic layers reference as their temperature source; the
    layers themselves resolve their temperature from epoch and mode.
    Non-finite loss aborts with a diagnostic.
    """
    state = OptimizerState(learning_rate=learning_rate, momentum=momentum,
                           weight_decay=weight_decay)
    order_rng = np.random.default_rng(seed)
    record_out = TrainRecord()
    n_train = dataset.images.shape[0]
    for epoch in range(epochs):
        temp = schedule.at_epoch(epoch)
        perm = order_rng.permutation(n_train)
        loss_sum = 0.0
        correct = 0
        for lo, hi in _batch_ranges(n_train, batch_size):
            idx = perm[lo:hi]
            xb, yb = dataset.images[idx], dataset.labels[idx]
            tape = Tape()
            logits, leaves, _ = model.forward_nodes(tape, xb, epoch=epoch,
                                                    training=True)
            loss = record(tape, "cross_entropy", logits, labels=yb)
            loss_val = float(loss.value[0])
            if not math.isfinite(loss_val):
                raise NumericError(
                    f"non-finite loss {loss_val} at epoch {epoch}, "
                    f"batch starting {lo}")
            backward(tape, loss)
            params = dict(model.named_parameters())
            grads = {name: leaves[name].grad for name in params}
            sgd_step(params, grads, state)
            loss_sum += loss_val * len(idx)
            correct += int(np.sum(np.argmax(logits.value, axis=1) == yb))
        record_out.rows.append(EpochStats(
            epoch=epoch, temperature=temp,
            train_loss=loss_sum / n_train,
            train_acc=correct / n_train,
            eval_acc=evaluate(model, dataset.eval_images,
                              dataset.eval_labels)))
    return record_out


# --- attention statistics -------------------------------------------------

def collect_attention_stats(model: SequentialModel,
                            images: np.ndarray,
                            batch_size: int = 64,
                            bins: int = 10) -> List[dict]:
    """Per-dynamic-layer summaries of the four attention sets.

    For each branch: mean, std, and a histogram over [0, 1].  Activations
    are taken at inference temperature while feeding the images through the
    whole stack, so deeper layers see realistic inputs.
    """
    stats = []
    acc: Dict[int, Dict[str, List[np.ndarray]]] = {}
    for i, layer in enumerate(model.layers):
        if isinstance(layer, ODConvUnit):
            acc[i] = {"alpha_s": [], "alpha_c": [], "alpha_f": [],
                      "alpha_w": []}
    for lo, hi in _batch_ranges(images.shape[0], batch_size):
        x = np.asarray(images[lo:hi], dtype=DTYPE)
        for i, layer in enumerate(model.layers):
            if isinstance(layer, ODConvUnit):
                att = layer.attention_values(x)
                for key in acc[i]:
                    acc[i][key].append(np.asarray(getattr(att, key)).ravel())
            tape = Tape()
            pnodes = {p: tape.leaf(a) for p, a in layer.param_arrays()}
            x = layer.forward(tape, tape.leaf(x), pnodes, None, False).value
    edges = np.linspace(0.0, 1.0, bins + 1)
    for i, branches in acc.items():
        entry = {"layer": i, "branches": {}}
        for key, chunks in branches.items():
            values = np.concatenate(chunks)
            hist, _ = np.histogram(values, bins=edges)
            entry["branches"][key] = {
                "mean": float(values.mean()),
                "std": float(values.std()),
                "histogram": hist.tolist(),
            }
        stats.append(entry)
    return stats
