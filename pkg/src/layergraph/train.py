"""Models, losses and the training loop.

A :class:`Model` wraps one prediction layer into three graphs that share
every state record: inference (inputs -> prediction), training (adds a
target input and a loss node) and evaluation (prediction plus an mse
metric node). Updating a weight through training is visible to inference
immediately, because there is only one copy of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import tensor as T
from .autodiff import backward
from .errors import EmptyDataset, NonFiniteLoss
from .graph import Graph, bind_feed
from .layers import Input, Layer, MeanSquaredError, SoftmaxCrossEntropy

LOSSES = {"mse": MeanSquaredError, "xent": SoftmaxCrossEntropy, "softmax_xent": SoftmaxCrossEntropy}


class SGD:
    """Plain or momentum SGD: ``v <- momentum * v + g``; ``slot <- slot - lr * v``."""

    def __init__(self, lr=0.01, momentum=0.0):
        if not lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity: dict = {}

    @property
    def kind(self):
        return "sgd-momentum" if self.momentum else "sgd"

    def apply(self, grads: Mapping):
        """Update each ``(state, slot)`` once with its accumulated gradient."""
        for (state, slot), grad in grads.items():
            var = state.slots[slot]
            if not var.trainable:
                continue
            if self.momentum:
                v = self.velocity.get((state, slot))
                v = grad if v is None else T.add(T.scalar_mul(v, self.momentum), grad)
                self.velocity[(state, slot)] = v
                grad = v
            if self.lr:
                var.assign(T.sub(var.value, T.scalar_mul(grad, self.lr)))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metrics: dict = field(default_factory=dict)


class History(list):
    """Per-epoch records; ``losses`` gives the mean training losses."""

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self]

    def export(self) -> str:
        """Tab-separated text: a version line, a header, then one line per epoch."""
        names = sorted({k for r in self for k in r.metrics})
        lines = ["version: 1", "\t".join(["epoch", "mean_loss"] + names)]
        for r in self:
            lines.append("\t".join([str(r.epoch), repr(r.loss)] + [repr(r.metrics[k]) for k in names]))
        return "\n".join(lines) + "\n"


class Model:
    """Inference, training and evaluation graphs over shared layer state."""

    def __init__(self, inputs, output: Layer, loss="mse", optimizer=None, compile=False, target=None):
        self.inputs = list(inputs) if isinstance(inputs, (list, tuple)) else [inputs]
        self.output = output
        self.target = target or Input(output.n_units, name="target", dtype=output.dtype)
        if callable(loss) and not isinstance(loss, type):
            self.loss = loss(output, self.target)
        else:
            cls = LOSSES[loss] if isinstance(loss, str) else loss
            self.loss = cls(output, self.target, name="loss")
        self.optimizer = optimizer or SGD()
        self.compile = compile
        self.inference_graph = Graph.build([output], self.inputs)
        self.training_graph = Graph.build([self.loss, output], self.inputs + [self.target])
        metric = self.loss if isinstance(self.loss, MeanSquaredError) else MeanSquaredError(
            output, self.target, name="mse"
        )
        self.evaluation_graph = Graph.build([output, metric], self.inputs + [self.target])
        self._infer = self.inference_graph.as_function(compile=compile)
        self._eval = self.evaluation_graph.as_function(compile=compile)
        self.step = 0
        self.epoch = 0

    def _feed(self, batch, with_target=True) -> dict:
        names = [n.name for n in self.inputs] + ([self.target.name] if with_target else [])
        if isinstance(batch, Mapping):
            return {k: v for k, v in batch.items() if k in names or isinstance(k, Layer)}
        batch = list(batch)
        if not with_target and len(batch) == len(names) + 1:
            batch = batch[:-1]
        return dict(zip(names, batch))

    def predict(self, *inputs):
        feed = self._feed(inputs[0] if len(inputs) == 1 and isinstance(inputs[0], Mapping) else inputs, False)
        return self._infer(feed)[0]

    def train_step(self, batch) -> float:
        """One forward/backward/update; returns the loss measured before the update."""
        adj = backward(
            self.training_graph, self.loss, self._feed(batch), training=True, step=self.step, compile=self.compile
        )
        loss = float(adj.loss.data.reshape(()))
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss} at step {self.step}")
        self.optimizer.apply(adj.slots)
        self.step += 1
        return loss

    def fit(self, dataset: Iterable, epochs=1, metrics=()) -> History:
        """Train for ``epochs`` passes over ``dataset`` (re-iterable, caller-batched)."""
        if epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {epochs}")
        data = list(dataset)
        if not data:
            raise EmptyDataset("cannot fit on an empty dataset")
        history = History()
        for _ in range(epochs):
            losses = [self.train_step(b) for b in data]
            self.epoch += 1
            scores = self.evaluate(data, metrics) if metrics else {}
            history.append(EpochRecord(self.epoch, float(np.mean(losses)), scores))
        return history

    def evaluate(self, dataset: Iterable, metrics=("mse", "accuracy")) -> dict:
        """Size-weighted metric means in inference mode; never touches state."""
        data = list(dataset)
        if not data:
            raise EmptyDataset("cannot evaluate on an empty dataset")
        totals = dict.fromkeys(metrics, 0.0)
        count = 0
        for b in data:
            feed = self._feed(b)
            pred, err = self._eval(feed)
            target = bind_feed([self.target], (), {self.target.name: feed.get(self.target.name)})[0]
            if target is None:
                target = self.target.compute()
            n = pred.shape[0] if pred.ndim else 1
            count += n
            for m in metrics:
                if m == "mse":
                    totals[m] += float(err.data.reshape(())) * n
                elif m == "accuracy":
                    totals[m] += accuracy(pred, target) * n
                else:
                    raise ValueError(f"unknown metric {m!r}")
        return {m: totals[m] / count for m in metrics}


def accuracy(pred: T.Tensor, target: T.Tensor, threshold=0.5) -> float:
    """Fraction of rows predicted right: thresholded for one unit, argmax otherwise."""
    p, t = pred.data, target.data
    if p.shape[-1] == 1:
        hits = (p > threshold) == (t > threshold)
    else:
        hits = np.argmax(p, axis=-1) == np.argmax(t, axis=-1)
    return float(np.mean(hits))


def mse(pred, target, **kw):
    return MeanSquaredError(pred, target, **kw)


def softmax_cross_entropy(logits, target, **kw):
    return SoftmaxCrossEntropy(logits, target, **kw)


def train_step(m: Model, batch) -> float:
    return m.train_step(batch)


def fit(m: Model, dataset, epochs=1, metrics=()) -> History:
    return m.fit(dataset, epochs, metrics)


def evaluate(m: Model, dataset, metrics=("mse", "accuracy")) -> dict:
    return m.evaluate(dataset, metrics)
