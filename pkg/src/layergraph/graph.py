"""Layer graphs: tracing, validation, ordering and conversion to functions.

``Graph.build`` walks backward from the output layers until it reaches the
inputs. ``Graph.as_function`` turns the result into an
:class:`ExecutablePlan`; with ``compile=True`` the plan is first run through
:func:`optimize` (dead-node elimination, duplicate merging, and dropout
elision in inference mode) and its argument wiring is frozen into integer
positions.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from . import tensor as T
from .errors import (
    CycleDetected,
    DuplicateName,
    FeedArityMismatch,
    FeedShapeMismatch,
    MissingInput,
    ShapeMismatch,
    UndeclaredInput,
    UnreachableDeclaredInput,
)
from .layers import Context, Dropout, Input, Layer


def find_cycle(roots: Iterable[Hashable], deps: Callable[[Hashable], Sequence[Hashable]]):
    """Return one cycle as a path ``[a, ..., a]`` reachable from ``roots``, or ``None``."""
    color: dict = {}
    for root in roots:
        if root in color:
            continue
        color[root] = 1
        path = [root]
        stack = [iter(deps(root))]
        while stack:
            for nxt in stack[-1]:
                c = color.get(nxt, 0)
                if c == 1:
                    return path[path.index(nxt):] + [nxt]
                if c == 0:
                    color[nxt] = 1
                    path.append(nxt)
                    stack.append(iter(deps(nxt)))
                    break
            else:
                color[path.pop()] = 2
                stack.pop()
    return None


def toposort(items: Sequence[Hashable], deps: Callable[[Hashable], Sequence[Hashable]], key=None) -> list:
    """Kahn's algorithm over ``items``; ties go to the smallest ``key``.

    ``deps(x)`` lists what ``x`` consumes. Dependencies outside ``items`` are
    ignored. Raises :class:`CycleDetected` with one offending path.
    """
    key = key or (lambda x: x)
    members = set(items)
    pending = {}
    consumers: dict = {x: [] for x in items}
    for x in items:
        ds = [d for d in dict.fromkeys(deps(x)) if d in members]
        pending[x] = len(ds)
        for d in ds:
            consumers[d].append(x)
    heap = [(key(x), i, x) for i, x in enumerate(items) if pending[x] == 0]
    heapq.heapify(heap)
    order = []
    counter = len(items)
    while heap:
        _, _, x = heapq.heappop(heap)
        order.append(x)
        for c in consumers[x]:
            pending[c] -= 1
            if pending[c] == 0:
                counter += 1
                heapq.heappush(heap, (key(c), counter, c))
    if len(order) != len(items):
        left = [x for x in items if pending[x] > 0]
        cycle = find_cycle(left, lambda x: [d for d in deps(x) if d in members])
        raise CycleDetected(cycle or left)
    return order


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable snapshot of a layer DAG.

    ``nodes`` is already in dependency order (ties broken by creation id);
    ``order`` is the same tuple under its traversal name.
    """

    nodes: tuple
    edges: tuple
    inputs: tuple
    outputs: tuple

    @property
    def order(self) -> tuple:
        return self.nodes

    @property
    def layers(self) -> dict:
        return {n.name: n for n in self.nodes}

    def __contains__(self, node):
        return any(n is node for n in self.nodes)

    def __len__(self):
        return len(self.nodes)

    def node_set(self) -> frozenset:
        return frozenset(self.nodes)

    @classmethod
    def build(cls, outputs, inputs=None) -> "Graph":
        if isinstance(outputs, Layer):
            outputs = [outputs]
        outputs = list(outputs)
        if not outputs:
            raise ValueError("Graph.build needs at least one output")
        declared = None if inputs is None else list(inputs)
        stop = set(declared or ())

        def deps(n):
            return () if n in stop else n.inputs

        cycle = find_cycle(outputs, deps)
        if cycle:
            raise CycleDetected([n.name for n in cycle])

        seen = {}
        stack = list(reversed(outputs))
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen[n] = None
            stack.extend(reversed(deps(n)))
        members = list(seen)

        sources = [n for n in members if not deps(n)]
        if declared is None:
            graph_inputs = sorted(sources, key=lambda n: n.id)
        else:
            undeclared = [n.name for n in sorted(sources, key=lambda n: n.id) if n not in stop]
            if undeclared:
                raise UndeclaredInput(undeclared)
            unreached = [n.name for n in declared if n not in seen]
            if unreached:
                raise UnreachableDeclaredInput(unreached)
            graph_inputs = declared

        names: dict = {}
        for n in members:
            if n.name in names and names[n.name] is not n:
                raise DuplicateName(f"two graph nodes are named {n.name!r}")
            names[n.name] = n

        order = toposort(members, deps, key=lambda n: n.id)
        edges = tuple((src, n) for n in order for src in deps(n))
        return cls(tuple(order), edges, tuple(graph_inputs), tuple(outputs))

    def dependency_order(self) -> list:
        return list(self.nodes)

    def variables(self, prefix="") -> list:
        """Trainable ``(label, state, slot)`` triples, each shared record once.

        Labels read ``node.slot``; variables inside a module are prefixed with
        the module name.
        """
        seen = set()
        out = []
        for node in self.nodes:
            if node in self.inputs and not isinstance(node, Input):
                continue
            inner = getattr(node.state, "graph", None)
            found = (
                inner.variables(prefix + node.name + "/")
                if inner is not None
                else [(f"{prefix}{node.name}.{s}", node.state, s) for s in node.state.trainable_slots()]
            )
            for label, state, slot in found:
                if (id(state), slot) not in seen:
                    seen.add((id(state), slot))
                    out.append((label, state, slot))
        return out

    def as_function(self, compile=False, training=False, outputs=None) -> "ExecutablePlan":
        """Convert to a plan; ``outputs`` may pick a subset of the graph's outputs."""
        plan = ExecutablePlan.from_graph(self, training=training, outputs=outputs)
        return optimize(plan) if compile else plan

    def execute(self, feed=None, training=False, step=0) -> tuple:
        return self.as_function(training=training)(feed or {}, step=step)


def build(outputs, inputs=None) -> Graph:
    return Graph.build(outputs, inputs)


def dependency_order(g: Graph) -> list:
    return g.dependency_order()


def as_function(g: Graph, compile=False, training=False, outputs=None) -> "ExecutablePlan":
    return g.as_function(compile=compile, training=training, outputs=outputs)


def execute(g: Graph, feed=None, training=False, step=0) -> tuple:
    return g.execute(feed, training=training, step=step)


# -- feeds -------------------------------------------------------------------

def bind_feed(inputs: Sequence[Layer], args=(), named=None) -> list:
    """Normalize a feed into one entry per declared input (``None`` when absent).

    Accepts positional tensors (exactly one per input) or a mapping keyed by
    input name or input node.
    """
    named = dict(named or {})
    if len(args) == 1 and isinstance(args[0], Mapping):
        named.update(args[0])
        args = ()
    if args and named:
        raise FeedArityMismatch("feed must be either positional or by name, not both")
    if args:
        if len(args) != len(inputs):
            raise FeedArityMismatch(f"plan takes {len(inputs)} input(s), got {len(args)}")
        values = list(args)
    else:
        values = [None] * len(inputs)
        by_name = {n.name: i for i, n in enumerate(inputs)}
        for k, v in named.items():
            if isinstance(k, Layer):
                idx = next((i for i, n in enumerate(inputs) if n is k), None)
            else:
                idx = by_name.get(k)
            if idx is None:
                raise FeedArityMismatch(f"feed names unknown input {getattr(k, 'name', k)!r}")
            values[idx] = v
    out = []
    for node, v in zip(inputs, values):
        if v is None:
            out.append(None)
            continue
        try:
            if isinstance(node, Input):
                out.append(node.check_value(v))
            else:
                t = T.as_tensor(v, node.dtype if not isinstance(v, T.Tensor) else None)
                node._check_last_dim(t, node.n_units, "feed")
                out.append(t)
        except ShapeMismatch as e:
            raise FeedShapeMismatch(str(e)) from None
    return out


def _source_value(node, value, ctx):
    if isinstance(node, Input):
        return node._compute([value] if value is not None else [], ctx)
    if value is None:
        raise MissingInput(node.name)
    return value


def eager_values(graph: Graph, feed: Sequence, ctx: Context) -> dict:
    """Walk the graph in dependency order; returns every node's value."""
    fed = {n: v for n, v in zip(graph.inputs, feed)}
    values: dict = {}
    for node in graph.order:
        if node in fed:
            values[node] = _source_value(node, fed[node], ctx)
        else:
            values[node] = node._compute([values[s] for s in node.inputs], ctx)
    return values


def run_eager(graph: Graph, args, ctx: Context, outputs=None) -> list:
    """Execute ``graph`` on already-validated positional ``args``."""
    feed = bind_feed(graph.inputs, list(args))
    values = eager_values(graph, feed, ctx)
    return [values[o] for o in (outputs or graph.outputs)]


# -- executable plans ----------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    node: Layer
    sources: tuple = ()
    feed_slot: int | None = None


@dataclass(frozen=True)
class Trace:
    """Values of one execution, keyed so autodiff can sweep them in reverse."""

    entries: list  # (key, node, source keys), in execution order
    values: dict
    output_keys: list


class ExecutablePlan:
    """A schedule of layer computations plus argument wiring.

    ``steps[i].sources`` are positions of earlier steps; input steps read
    ``feed_slot`` instead. Call the plan with one tensor per declared input,
    positionally or by name.
    """

    def __init__(self, graph: Graph, steps, outputs, compiled=False, training=False, graph_outputs=None):
        self.graph = graph
        self.steps = tuple(steps)
        self.outputs = tuple(outputs)
        self.compiled = compiled
        self.training = training
        self.output_nodes = tuple(graph_outputs if graph_outputs is not None else graph.outputs)

    @classmethod
    def from_graph(cls, graph: Graph, training=False, outputs=None) -> "ExecutablePlan":
        if outputs is None:
            outputs = graph.outputs
        for o in outputs:
            if o not in graph:
                raise ValueError(f"{o.name} is not a node of this graph")
        pos = {n: i for i, n in enumerate(graph.order)}
        slot = {n: i for i, n in enumerate(graph.inputs)}
        steps = [
            Step(n, feed_slot=slot[n]) if n in slot else Step(n, tuple(pos[s] for s in n.inputs))
            for n in graph.order
        ]
        return cls(graph, steps, [pos[o] for o in outputs], False, training, outputs)

    @property
    def inputs(self):
        return self.graph.inputs

    @property
    def mode(self):
        return "train" if self.training else "inference"

    def __len__(self):
        return len(self.steps)

    def __call__(self, *args, step=0, **named) -> tuple:
        trace = self.trace(bind_feed(self.inputs, args, named), step)
        return tuple(trace.values[k] for k in trace.output_keys)

    def trace(self, feed: Sequence, step=0) -> Trace:
        ctx = Context(self.training, step)
        if not self.compiled:
            values = eager_values(self.graph, feed, ctx)
            entries = [
                (n, n, () if s.feed_slot is not None else n.inputs)
                for n, s in zip(self.graph.order, self.steps)
            ]
            return Trace(entries, values, list(self.output_nodes))
        vals: list = []
        for s in self.steps:
            if s.feed_slot is not None:
                vals.append(_source_value(s.node, feed[s.feed_slot], ctx))
            else:
                vals.append(s.node._compute([vals[i] for i in s.sources], ctx))
        entries = [(i, s.node, s.sources) for i, s in enumerate(self.steps)]
        return Trace(entries, dict(enumerate(vals)), list(self.outputs))

    def describe(self) -> str:
        """Render the schedule as a function body, one line per step."""
        names = [s.node.name for s in self.steps]
        lines = []
        for s in self.steps:
            srcs = ", ".join(names[i] for i in s.sources)
            lines.append(f"{s.node.name} = {s.node.kind}({srcs})")
        lines.append("return " + ", ".join(names[i] for i in self.outputs))
        return "\n".join(lines) + "\n"

    def __repr__(self):
        return f"ExecutablePlan({len(self.steps)} steps, compiled={self.compiled}, mode={self.mode})"


def describe(plan) -> str:
    if isinstance(plan, Graph):
        plan = plan.as_function()
    return plan.describe()


def _rebuild(steps, outputs, keep, remap_source):
    """Keep the steps whose old positions are in ``keep`` and rewire sources."""
    new_pos = {}
    out_steps = []
    for i in sorted(keep):
        s = steps[i]
        srcs = tuple(new_pos[remap_source(j)] for j in s.sources)
        new_pos[i] = len(out_steps)
        out_steps.append(Step(s.node, srcs, s.feed_slot))
    return out_steps, [new_pos[remap_source(o)] for o in outputs]


def _resolve(alias: dict, i: int) -> int:
    while i in alias:
        i = alias[i]
    return i


def eliminate_dead(steps, outputs):
    live = set(i for i, s in enumerate(steps) if s.feed_slot is not None)
    stack = list(outputs)
    while stack:
        i = stack.pop()
        if i in live and steps[i].feed_slot is None:
            continue
        live.add(i)
        stack.extend(steps[i].sources)
    return _rebuild(steps, outputs, live, lambda j: j)


def _merge_key(step: Step, sources):
    node = step.node
    config = tuple(sorted(node.config.items()))
    ident = None if node.stateless else id(node.state)
    return (type(node), node.kind, node.n_units, node.dtype, config, ident, sources)


def merge_duplicates(steps, outputs):
    alias: dict = {}
    seen: dict = {}
    for i, s in enumerate(steps):
        if s.feed_slot is not None:
            continue
        key = _merge_key(s, tuple(_resolve(alias, j) for j in s.sources))
        if key in seen:
            alias[i] = seen[key]
        else:
            seen[key] = i
    keep = [i for i in range(len(steps)) if i not in alias]
    return _rebuild(steps, outputs, keep, lambda j: _resolve(alias, j))


def elide_dropout(steps, outputs):
    alias = {i: s.sources[0] for i, s in enumerate(steps) if isinstance(s.node, Dropout) and s.feed_slot is None}
    keep = [i for i in range(len(steps)) if i not in alias]
    return _rebuild(steps, outputs, keep, lambda j: _resolve(alias, j))


def optimize(plan: ExecutablePlan) -> ExecutablePlan:
    """Dead-node elimination, duplicate merge, then (inference only) dropout elision."""
    steps, outputs = eliminate_dead(list(plan.steps), list(plan.outputs))
    steps, outputs = merge_duplicates(steps, outputs)
    if not plan.training:
        steps, outputs = elide_dropout(steps, outputs)
    return ExecutablePlan(plan.graph, steps, outputs, True, plan.training, plan.output_nodes)
