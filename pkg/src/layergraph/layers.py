"""Layers: stateful functions that are also the end-nodes of a graph.

A layer node holds its ordered input nodes, a configuration, and a reference
to a :class:`LayerState`. The state record lives apart from the node, so
``reuse_with`` can build a second node over different inputs that reads and
writes the very same variables.

Every layer implements two things: ``_compute`` (apply this layer only) and
``_vjp`` (the vector-Jacobian product used by :mod:`layergraph.autodiff`).
"""
from __future__ import annotations

import contextlib
import copy
import itertools
import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from . import tensor as T
from .errors import (
    ArityMismatch,
    DisconnectedInput,
    DtypeMismatch,
    InvalidProbability,
    MissingInput,
    ShapeMismatch,
    UndeclaredInput,
    UnknownActivation,
    UnreachableDeclaredInput,
    UnreachableDependency,
)
from .tensor import Tensor

DEFAULT_SEED = 0

_ids = itertools.count(1)
_seed_scopes: list = []
_global_seeds = itertools.count()


@dataclass(frozen=True)
class Context:
    """Execution flags threaded through every compute call.

    ``step`` keys the random masks of stochastic layers, so two executions
    with the same step see identical masks.
    """

    training: bool = False
    step: int = 0


INFERENCE = Context()


@contextlib.contextmanager
def seed_scope(seed: int):
    """Give layers built inside the block seeds derived from ``seed``.

    Building the same architecture twice under equal scopes yields equal
    initial state.
    """
    _seed_scopes.append((int(seed), itertools.count()))
    try:
        yield
    finally:
        _seed_scopes.pop()


def _next_seed() -> int:
    if _seed_scopes:
        base, counter = _seed_scopes[-1]
        return T.derive_seed(base, next(counter))
    return T.derive_seed(DEFAULT_SEED, "global", next(_global_seeds))


def glorot_uniform(shape, seed, dtype=None) -> Tensor:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return T.random_uniform(shape, -limit, limit, seed=seed, dtype=dtype)


class Variable:
    """A mutable cell holding a tensor whose shape is fixed once set."""

    __slots__ = ("value", "trainable", "fixed_shape")

    def __init__(self, value=None, trainable=True, fixed_shape=True):
        self.value = value
        self.trainable = trainable
        self.fixed_shape = fixed_shape

    def assign(self, value):
        dtype = self.value.dtype if self.value is not None else None
        new = T.as_tensor(value, dtype)
        if self.fixed_shape and self.value is not None and new.shape != self.value.shape:
            raise ShapeMismatch(f"cannot assign shape {new.shape} to variable of shape {self.value.shape}")
        self.value = new

    def __repr__(self):
        shape = None if self.value is None else self.value.shape
        return f"Variable(shape={shape}, trainable={self.trainable})"


class LayerState:
    """Named variables shared by every node that references this record."""

    def __init__(self):
        self.slots: dict[str, Variable] = {}

    def add(self, name, value, trainable=True):
        self.slots[name] = Variable(value, trainable)
        return self.slots[name]

    def __getitem__(self, name) -> Tensor:
        return self.slots[name].value

    def __contains__(self, name):
        return name in self.slots

    def __len__(self):
        return len(self.slots)

    def assign(self, name, value):
        self.slots[name].assign(value)

    def trainable_slots(self) -> list[str]:
        return [k for k, v in self.slots.items() if v.trainable]

    def __repr__(self):
        body = ", ".join(f"{k}: {v!r}" for k, v in self.slots.items())
        return f"LayerState({body})"


class Layer:
    kind = "layer"
    stateless = True

    def __init__(self, inputs=(), n_units=None, *, name=None, seed=None, config=None, state=None, dtype=None):
        if n_units is None or int(n_units) < 1:
            raise ValueError(f"n_units must be a positive integer, got {n_units!r}")
        self.id = next(_ids)
        self.inputs = tuple(inputs)
        for node in self.inputs:
            if not isinstance(node, Layer):
                raise TypeError(f"layer inputs must be layers, got {type(node).__name__}")
        self.n_units = int(n_units)
        self.name = name or f"{self.kind}_{self.id}"
        self.seed = _next_seed() if seed is None else int(seed)
        self.config = MappingProxyType(dict(config or {}))
        self.dtype = T.as_dtype(dtype)
        self.state = state if state is not None else self.init_state()

    def init_state(self) -> LayerState:
        return LayerState()

    # -- execution --

    def compute(self, *inputs, training=False, step=0) -> Tensor:
        """Apply only this layer to ``inputs``; upstream nodes are not run."""
        args = self._check_arity(inputs)
        return self._compute(args, Context(training, step))

    def forward(self, training=False, step=0) -> Tensor:
        """Execute the whole graph that ends in this layer."""
        from .graph import Graph

        return Graph.build([self]).execute({}, training=training, step=step)[0]

    def _check_arity(self, inputs):
        if len(inputs) != len(self.inputs):
            raise ArityMismatch(f"{self.name} takes {len(self.inputs)} input(s), got {len(inputs)}")
        return [T.as_tensor(x) for x in inputs]

    def _check_last_dim(self, x: Tensor, n: int, what="input"):
        if x.ndim == 0 or x.shape[-1] != n:
            raise ShapeMismatch(f"{self.name}: {what} last dimension must be {n}, got shape {x.shape}")

    def _compute(self, args, ctx: Context) -> Tensor:
        raise NotImplementedError

    def _vjp(self, args, out, grad, ctx: Context):
        """Return ``(input_grads, slot_grads)`` for the output adjoint ``grad``.

        ``input_grads`` has one entry per input (``None`` when the input is not
        differentiable); ``slot_grads`` maps ``(state, slot)`` to a gradient.
        """
        raise NotImplementedError

    # -- state --

    def reuse_with(self, *inputs, name=None) -> "Layer":
        """New node over ``inputs`` that shares this node's state record."""
        if len(inputs) == 1 and isinstance(inputs[0], (list, tuple)):
            inputs = tuple(inputs[0])
        if len(inputs) != len(self.inputs):
            raise ArityMismatch(f"{self.name} takes {len(self.inputs)} input(s), got {len(inputs)}")
        for new, old in zip(inputs, self.inputs):
            if new.n_units != old.n_units:
                raise ShapeMismatch(
                    f"reuse_with: {new.name} has n_units={new.n_units}, {old.name} had {old.n_units}"
                )
        node = copy.copy(self)
        node.id = next(_ids)
        node.inputs = tuple(inputs)
        node.name = name or f"{self.name}_{node.id}"
        return node

    def variables(self) -> list[tuple[LayerState, str]]:
        """Trainable ``(state, slot)`` pairs this node reads."""
        return [(self.state, s) for s in self.state.trainable_slots()]

    def __repr__(self):
        ins = ", ".join(n.name for n in self.inputs)
        return f"{type(self).__name__}({self.name!r}, inputs=[{ins}], n_units={self.n_units})"


class Input(Layer):
    """Stateful placeholder: zero inputs, stores the value it produces."""

    kind = "input"
    stateless = False

    def __init__(self, n_units, value=None, *, name=None, dtype=None):
        super().__init__((), n_units, name=name, seed=0, dtype=dtype)
        if value is not None:
            self.value = value

    def init_state(self):
        state = LayerState()
        state.slots["value"] = Variable(None, trainable=False, fixed_shape=False)
        return state

    @property
    def value(self):
        return self.state["value"]

    @value.setter
    def value(self, value):
        self.state.assign("value", self.check_value(value))

    def check_value(self, value) -> Tensor:
        t = T.as_tensor(value, self.dtype) if not isinstance(value, Tensor) else value
        if t.dtype != self.dtype:
            raise DtypeMismatch(f"{self.name}: expected {self.dtype.name}, got {t.dtype.name}")
        self._check_last_dim(t, self.n_units, "value")
        return t

    def compute(self, *inputs, training=False, step=0):
        if len(inputs) > 1:
            raise ArityMismatch(f"{self.name} takes at most one value, got {len(inputs)}")
        return self._compute([self.check_value(x) for x in inputs], Context(training, step))

    def _compute(self, args, ctx):
        if args:
            return args[0]
        value = self.value
        if value is None:
            raise MissingInput(self.name)
        return value

    def _vjp(self, args, out, grad, ctx):
        return [None] * len(args), {}


class Linear(Layer):
    """``y = x W + b`` over the last axis; leading axes are batch axes."""

    kind = "linear"
    stateless = False

    def __init__(self, input, n_units, weight_init=None, bias=True, *, name=None, seed=None, dtype=None):
        if dtype is None:
            dtype = input.dtype if input.dtype.kind == "f" else None
        self._weight_init = weight_init
        super().__init__((input,), n_units, name=name, seed=seed, config={"bias": bool(bias)}, dtype=dtype)
        del self._weight_init

    @property
    def in_units(self):
        return self.inputs[0].n_units

    def init_state(self):
        state = LayerState()
        shape = (self.in_units, self.n_units)
        init = self._weight_init
        if init is None:
            w = glorot_uniform(shape, T.derive_seed(self.seed, "weights"), self.dtype)
        elif callable(init):
            w = T.as_tensor(init(shape, T.derive_seed(self.seed, "weights"), self.dtype), self.dtype)
        else:
            w = T.as_tensor(np.asarray(init), self.dtype)
        if w.shape != shape:
            raise ShapeMismatch(f"{self.name}: initial weights have shape {w.shape}, expected {shape}")
        state.add("weights", w)
        if self.config["bias"]:
            state.add("bias", T.zeros((self.n_units,), self.dtype))
        return state

    def _compute(self, args, ctx):
        (x,) = args
        self._check_last_dim(x, self.in_units)
        lead = x.shape[:-1]
        flat = x if x.ndim == 2 else T.reshape(x, (math.prod(lead), self.in_units))
        y = T.matmul(flat, self.state["weights"])
        if "bias" in self.state:
            y = T.add_broadcast(y, self.state["bias"])
        return y if x.ndim == 2 else T.reshape(y, lead + (self.n_units,))

    def _vjp(self, args, out, grad, ctx):
        (x,) = args
        x2 = T.reshape(x, (math.prod(x.shape[:-1]), self.in_units))
        g2 = T.reshape(grad, (math.prod(grad.shape[:-1]), self.n_units))
        w = self.state["weights"]
        slots = {(self.state, "weights"): T.matmul(T.transpose_2d(x2), g2)}
        if "bias" in self.state:
            slots[(self.state, "bias")] = T.reduce_sum(g2, axis=0)
        dx = T.reshape(T.matmul(g2, T.transpose_2d(w)), x.shape)
        return [dx], slots


def _unary_grad(fn, x: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if fn == "identity":
        return g.copy()
    if fn == "tanh":
        return g * (1 - y * y)
    if fn == "relu":
        # derivative at exactly zero is taken as zero
        return np.where(x > 0, g, g.dtype.type(0))
    if fn == "sigmoid":
        return g * y * (1 - y)
    if fn == "exp":
        return g * y
    if fn == "log":
        return g / x
    if fn == "neg":
        return -g
    raise UnknownActivation(fn)


class Activation(Layer):
    kind = "activation"

    def __init__(self, input, fn="identity", *, name=None):
        if callable(fn):
            fn = getattr(fn, "__name__", fn)
        if fn not in T.UNARY:
            raise UnknownActivation(f"unknown activation {fn!r}; choose from {sorted(T.UNARY)}")
        super().__init__((input,), input.n_units, name=name, seed=0, config={"fn": fn}, dtype=input.dtype)

    def _compute(self, args, ctx):
        (x,) = args
        self._check_last_dim(x, self.n_units)
        return T.elementwise_unary(self.config["fn"], x)

    def _vjp(self, args, out, grad, ctx):
        (x,) = args
        return [Tensor._wrap(_unary_grad(self.config["fn"], x.data, out.data, grad.data))], {}


class Add(Layer):
    kind = "add"

    def __init__(self, *inputs, name=None):
        if len(inputs) == 1 and isinstance(inputs[0], (list, tuple)):
            inputs = tuple(inputs[0])
        if len(inputs) < 2:
            raise ArityMismatch(f"Add needs at least two inputs, got {len(inputs)}")
        units = {n.n_units for n in inputs}
        if len(units) != 1:
            raise ShapeMismatch(f"Add inputs disagree on n_units: {sorted(units)}")
        super().__init__(inputs, inputs[0].n_units, name=name, seed=0, dtype=inputs[0].dtype)

    def _compute(self, args, ctx):
        out = args[0]
        for x in args[1:]:
            out = T.add(out, x)
        return out

    def _vjp(self, args, out, grad, ctx):
        return [grad] * len(args), {}


class Dropout(Layer):
    """Inverted dropout.

    In training mode each element is zeroed with chance ``probability`` and
    the survivors are multiplied by ``1 / (1 - probability)``; in inference
    mode the layer returns its input unchanged.
    """

    kind = "dropout"

    def __init__(self, input, probability=0.1, *, name=None, seed=None):
        probability = float(probability)
        if not 0.0 <= probability < 1.0:
            raise InvalidProbability(f"dropout probability must be in [0, 1), got {probability}")
        seed = _next_seed() if seed is None else int(seed)
        super().__init__(
            (input,), input.n_units, name=name, seed=seed,
            config={"probability": probability, "seed": seed}, dtype=input.dtype,
        )

    @property
    def probability(self):
        return self.config["probability"]

    def _active(self, ctx):
        return ctx.training and self.probability > 0

    def mask(self, shape, ctx: Context) -> np.ndarray:
        """Boolean keep-mask for one execution step."""
        u = T.random_uniform(shape, 0.0, 1.0, seed=T.derive_seed(self.seed, "mask", ctx.step), dtype=T.float64)
        return u.data >= self.probability

    def _scale(self, dtype):
        return dtype.type(1.0 / (1.0 - self.probability))

    def _compute(self, args, ctx):
        (x,) = args
        self._check_last_dim(x, self.n_units)
        if not self._active(ctx):
            return x
        keep = self.mask(x.shape, ctx)
        return Tensor._wrap(np.where(keep, x.data * self._scale(x.dtype), x.dtype.type(0)))

    def _vjp(self, args, out, grad, ctx):
        if not self._active(ctx):
            return [grad], {}
        keep = self.mask(grad.shape, ctx)
        return [Tensor._wrap(np.where(keep, grad.data * self._scale(grad.dtype), grad.dtype.type(0)))], {}


class Lookup(Layer):
    """Embedding lookup: rows of a ``[vocab_size, n_units]`` table picked by int64 indices."""

    kind = "lookup"
    stateless = False

    def __init__(self, input, vocab_size, n_units, weight_init=None, *, name=None, seed=None, dtype=None):
        self._weight_init = weight_init
        super().__init__((input,), n_units, name=name, seed=seed, config={"vocab_size": int(vocab_size)}, dtype=dtype)
        del self._weight_init

    @property
    def vocab_size(self):
        return self.config["vocab_size"]

    def init_state(self):
        state = LayerState()
        shape = (self.vocab_size, self.n_units)
        init = self._weight_init
        if init is None:
            table = glorot_uniform(shape, T.derive_seed(self.seed, "table"), self.dtype)
        elif callable(init):
            table = T.as_tensor(init(shape, T.derive_seed(self.seed, "table"), self.dtype), self.dtype)
        else:
            table = T.as_tensor(np.asarray(init), self.dtype)
        if table.shape != shape:
            raise ShapeMismatch(f"{self.name}: initial table has shape {table.shape}, expected {shape}")
        state.add("table", table)
        return state

    def _compute(self, args, ctx):
        (idx,) = args
        return T.gather_rows(self.state["table"], idx)

    def _vjp(self, args, out, grad, ctx):
        (idx,) = args
        return [None], {(self.state, "table"): T.scatter_add_rows(self.vocab_size, idx, grad)}


class ModuleState(LayerState):
    """State of a module: no slots of its own, plus the encapsulated graph."""

    def __init__(self, graph):
        super().__init__()
        self.graph = graph


class Module(Layer):
    """A validated layer graph wrapped up as a single layer.

    ``compute(t1, ..., tk)`` binds ``ti`` to the i-th declared input and
    runs the inner graph; the module's variables are those of its inner
    layers, so training a module trains them.
    """

    kind = "module"
    stateless = False

    def __init__(self, inputs, output, *, name=None):
        from .graph import Graph

        inputs = list(inputs)
        try:
            graph = Graph.build([output], inputs)
        except UndeclaredInput as e:
            raise UnreachableDependency(
                e.names, "module body depends on undeclared source(s): " + ", ".join(e.names)
            ) from None
        except UnreachableDeclaredInput as e:
            raise DisconnectedInput(
                e.names, "module input(s) do not reach the output: " + ", ".join(e.names)
            ) from None
        self._graph = graph
        super().__init__(inputs, output.n_units, name=name, seed=0, dtype=output.dtype)
        del self._graph

    def init_state(self):
        return ModuleState(self._graph)

    @property
    def graph(self):
        return self.state.graph

    def _check_arity(self, inputs):
        args = super()._check_arity(inputs)
        for x, node in zip(args, self.graph.inputs):
            self._check_last_dim(x, node.n_units)
        return args

    def _compute(self, args, ctx):
        from .graph import run_eager

        return run_eager(self.graph, args, ctx)[0]

    def _vjp(self, args, out, grad, ctx):
        from .autodiff import graph_vjp

        return graph_vjp(self.graph, args, grad, ctx)

    def variables(self):
        seen, out = set(), []
        for node in self.graph.nodes:
            for state, slot in node.variables():
                if (id(state), slot) not in seen:
                    seen.add((id(state), slot))
                    out.append((state, slot))
        return out


def _check_pair(node, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{node.name}: prediction shape {a.shape} differs from target shape {b.shape}")
    if a.dtype != b.dtype:
        raise DtypeMismatch(f"{node.name}: prediction {a.dtype.name} vs target {b.dtype.name}")


class MeanSquaredError(Layer):
    """Scalar loss node: mean over every element of ``(pred - target)**2``. Output shape ``[1]``."""

    kind = "mse"

    def __init__(self, pred, target, *, name=None):
        if pred.n_units != target.n_units:
            raise ShapeMismatch(f"mse: n_units {pred.n_units} vs {target.n_units}")
        super().__init__((pred, target), 1, name=name, seed=0, dtype=pred.dtype)

    def _compute(self, args, ctx):
        pred, target = args
        _check_pair(self, pred, target)
        d = pred.data - target.data
        return Tensor._wrap(np.asarray([np.mean(d * d)], dtype=pred.dtype))

    def _vjp(self, args, out, grad, ctx):
        pred, target = args
        g = grad.data.reshape(()) * (2.0 / pred.size)
        d = ((pred.data - target.data) * pred.dtype.type(g)).astype(pred.dtype)
        return [Tensor._wrap(d), Tensor._wrap(-d)], {}


class SoftmaxCrossEntropy(Layer):
    """Scalar loss node: batch mean of ``-sum(target * log_softmax(logits))``."""

    kind = "softmax_xent"

    def __init__(self, logits, target, *, name=None):
        if logits.n_units != target.n_units:
            raise ShapeMismatch(f"softmax_xent: n_units {logits.n_units} vs {target.n_units}")
        super().__init__((logits, target), 1, name=name, seed=0, dtype=logits.dtype)

    def _compute(self, args, ctx):
        logits, target = args
        _check_pair(self, logits, target)
        if logits.ndim != 2:
            raise ShapeMismatch(f"{self.name}: logits must be rank 2, got {logits.shape}")
        lsm = T.log_softmax(logits).data
        per_row = -np.sum(target.data * lsm, axis=-1)
        return Tensor._wrap(np.asarray([np.mean(per_row)], dtype=logits.dtype))

    def _vjp(self, args, out, grad, ctx):
        logits, target = args
        g = logits.dtype.type(grad.data.reshape(()) / logits.shape[0])
        sm = T.softmax(logits).data
        tsum = np.sum(target.data, axis=-1, keepdims=True)
        dlogits = (sm * tsum - target.data) * g
        dtarget = -T.log_softmax(logits).data * g
        return [Tensor._wrap(dlogits), Tensor._wrap(dtarget)], {}


# lowercase constructors matching the operation names
def input_layer(n_units, name=None, value=None, dtype=None):
    return Input(n_units, value, name=name, dtype=dtype)


def linear(input, n_units, weight_init=None, bias=True, **kw):
    return Linear(input, n_units, weight_init, bias, **kw)


def activation(input, fn, **kw):
    return Activation(input, fn, **kw)


def add(inputs, **kw):
    return Add(*inputs, **kw)


def dropout(input, probability, seed=None, **kw):
    return Dropout(input, probability, seed=seed, **kw)


def lookup(indices_input, vocab_size, n_units, **kw):
    return Lookup(indices_input, vocab_size, n_units, **kw)


def module(inputs, output, **kw):
    return Module(inputs, output, **kw)


def reuse_with(layer, new_inputs, **kw):
    return layer.reuse_with(*new_inputs, **kw)


def compute(layer, *inputs, training=False, step=0):
    return layer.compute(*inputs, training=training, step=step)


def forward(layer, training=False, step=0):
    return layer.forward(training=training, step=step)


def mse(pred, target, **kw):
    return MeanSquaredError(pred, target, **kw)


def softmax_cross_entropy(logits, target, **kw):
    return SoftmaxCrossEntropy(logits, target, **kw)
