"""Reverse-mode differentiation over layer graphs.

The forward pass is recorded as a :class:`~layergraph.graph.Trace`; the
backward sweep walks it in reverse, asks each layer for its
vector-Jacobian product, and sums contributions wherever a value fans out
or a state record is shared between nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import NonScalarLoss, NotInGraph
from .graph import ExecutablePlan, Graph, Trace, bind_feed
from .layers import Context, Layer, LayerState


def _accumulate(store: dict, key, grad):
    prev = store.get(key)
    store[key] = grad if prev is None else T.add(prev, grad)


def sweep(trace: Trace, seeds: dict, ctx: Context, slots=None):
    """Propagate adjoints from ``seeds`` (trace key -> gradient) back to the sources.

    Returns ``(adjoints by trace key, slot gradients by (state, slot))``.
    """
    adj: dict = {}
    slots = {} if slots is None else slots
    for key, g in seeds.items():
        _accumulate(adj, key, g)
    for key, node, srcs in reversed(trace.entries):
        g = adj.get(key)
        if g is None or not srcs:
            continue
        args = [trace.values[k] for k in srcs]
        in_grads, slot_grads = node._vjp(args, trace.values[key], g, ctx)
        for k, ig in zip(srcs, in_grads):
            if ig is not None:
                _accumulate(adj, k, ig)
        for sk, sg in slot_grads.items():
            _accumulate(slots, sk, sg)
    return adj, slots


def graph_vjp(graph: Graph, args, grad, ctx: Context):
    """VJP of a single-output graph, as used by modules: re-runs the forward pass."""
    plan = ExecutablePlan.from_graph(graph, training=ctx.training)
    trace = plan.trace(bind_feed(graph.inputs, list(args)), ctx.step)
    adj, slots = sweep(trace, {trace.output_keys[0]: grad}, ctx)
    return [adj.get(n) for n in graph.inputs], slots


@dataclass
class AdjointMap:
    """Gradients of one scalar loss.

    ``nodes`` maps each layer node on a path to the loss to d(loss)/d(node
    output); ``slots`` maps every trainable ``(state, slot)`` of the graph to
    its gradient (exact zeros when the loss does not depend on it).
    """

    loss: T.Tensor
    nodes: dict = field(default_factory=dict)
    slots: dict = field(default_factory=dict)
    outputs: tuple = ()

    def slot(self, owner, name) -> T.Tensor:
        state = owner.state if isinstance(owner, Layer) else owner
        for (s, n), g in self.slots.items():
            if s is state and n == name:
                return g
        if isinstance(state, LayerState) and name in state:
            return T.zeros(state[name].shape, state[name].dtype)
        raise KeyError(name)

    def node(self, node) -> T.Tensor:
        return self.nodes[node]


def backward(g: Graph, loss: Layer, feed=None, training=True, step=0, compile=False, order=None) -> AdjointMap:
    """Gradient of the scalar ``loss`` w.r.t. every trainable slot and every node.

    ``order`` optionally replaces the default dependency order used for the
    sweep (any valid topological order gives the same sums up to rounding).
    """
    if loss not in g:
        raise NotInGraph(f"{getattr(loss, 'name', loss)!r} is not a node of this graph")
    outputs = list(g.outputs) + ([loss] if not any(o is loss for o in g.outputs) else [])
    plan = g.as_function(compile=compile, training=training, outputs=outputs)
    if order is not None:
        plan = _reordered(plan, order)
    ctx = Context(training, step)
    trace = plan.trace(bind_feed(g.inputs, (), feed or {}), step)
    loss_key = trace.output_keys[outputs.index(loss)]
    value = trace.values[loss_key]
    if value.size != 1:
        raise NonScalarLoss(f"loss {loss.name!r} has shape {value.shape}; expected a scalar")

    slots = {(state, slot): T.zeros(state[slot].shape, state[slot].dtype) for _, state, slot in g.variables()}
    adj, slots = sweep(trace, {loss_key: T.ones(value.shape, value.dtype)}, ctx, slots)
    nodes = {}
    for key, node, _ in trace.entries:
        if key in adj:
            nodes[node] = adj[key]
    outs = tuple(trace.values[k] for k in trace.output_keys[: len(g.outputs)])
    return AdjointMap(value, nodes, slots, outs)


def _reordered(plan: ExecutablePlan, order) -> ExecutablePlan:
    from .graph import Step

    order = list(order)
    if set(order) != set(plan.graph.nodes) or len(order) != len(plan.graph.nodes):
        raise ValueError("order must be a permutation of the graph's nodes")
    pos = {n: i for i, n in enumerate(order)}
    for src, dst in plan.graph.edges:
        if pos[src] >= pos[dst]:
            raise ValueError(f"order puts {dst.name} before its input {src.name}")
    slot = {n: i for i, n in enumerate(plan.graph.inputs)}
    steps = [Step(n, feed_slot=slot[n]) if n in slot else Step(n, tuple(pos[s] for s in n.inputs)) for n in order]
    outputs = [pos[plan.steps[i].node] for i in plan.outputs]
    return ExecutablePlan(plan.graph, steps, outputs, True, plan.training, plan.output_nodes)


@dataclass
class GradCheckEntry:
    slot: str
    coordinate: tuple
    analytic: float
    numeric: float
    rel_error: float

    def line(self) -> str:
        coord = ",".join(str(c) for c in self.coordinate)
        return f"{self.slot}\t{coord}\t{self.analytic!r}\t{self.numeric!r}\t{self.rel_error!r}"


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e.rel_error < self.tolerance]

    def lines(self) -> list[str]:
        return ["slot\tcoordinate\tanalytic\tnumeric\trel_error"] + [e.line() for e in self.entries]

    def __bool__(self):
        return self.passed


def relative_error(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    g: Graph, loss: Layer, feed=None, tolerance=1e-4, h=1e-6, step=0,
    max_elements=10_000, seed=0, floor=1e-6, training=True,
) -> GradCheckReport:
    """Compare backward gradients with central finite differences.

    Every trainable element is checked, or a seeded random subsample of
    ``max_elements`` when the graph holds more. ``floor`` bounds the
    denominator of the relative error so exact zeros compare absolutely.
    Meant for float64 state.
    """
    adj = backward(g, loss, feed, training=training, step=step)
    plan = g.as_function(training=training, outputs=[loss])
    bound = bind_feed(g.inputs, (), feed or {})

    def loss_at():
        return float(plan.trace(bound, step).values[loss].data.reshape(()))

    coords = []
    for label, state, slot in g.variables():
        shape = state[slot].shape
        coords.extend((label, state, slot, idx) for idx in np.ndindex(*shape))
    if len(coords) > max_elements:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(coords), size=max_elements, replace=False))
        coords = [coords[i] for i in pick]

    entries = []
    for label, state, slot, idx in coords:
        var = state.slots[slot]
        original = var.value
        try:
            bumped = original.numpy()
            bumped[idx] = original.data[idx] + h
            var.value = T.Tensor(bumped, original.dtype)
            up = loss_at()
            bumped[idx] = original.data[idx] - h
            var.value = T.Tensor(bumped, original.dtype)
            down = loss_at()
        finally:
            var.value = original
        numeric = (up - down) / (2 * h)
        analytic = float(adj.slots[(state, slot)].data[idx])
        rel = relative_error(analytic, numeric, floor) if math.isfinite(numeric) else math.inf
        entries.append(GradCheckEntry(label, tuple(int(i) for i in idx), analytic, numeric, rel))
    return GradCheckReport(tolerance, entries)
