"""Graph fixtures: the five-node and dropout-reuse graphs, an RNN cell, and random DAGs."""
from dataclasses import dataclass, field

import numpy as np

import layergraph as lg


def five_node(dtype=None):
    """Input x1(2), x2(4); l1 = Linear(x1, 4); l2 = Add(l1, x2); l3 = Linear(l2, 2)."""
    x1 = lg.Input(2, name="x1", dtype=dtype)
    x2 = lg.Input(4, name="x2", dtype=dtype)
    l1 = lg.Linear(x1, 4, name="l1")
    l2 = lg.Add(l1, x2, name="l2")
    l3 = lg.Linear(l2, 2, name="l3")
    return dict(x1=x1, x2=x2, l1=l1, l2=l2, l3=l3)


def dropout_reuse(dtype="float64", seed=0):
    """Linear -> relu -> Linear, then Dropout spliced in front of a reused last Linear."""
    with lg.seed_scope(seed):
        x1 = lg.Input(2, name="x1", dtype=dtype)
        x1.value = lg.tensor.random_uniform([2, 2], seed=seed, dtype=dtype)
        l1 = lg.Linear(x1, 3, name="l1")
        a1 = lg.Activation(l1, "relu", name="a1")
        l2 = lg.Linear(a1, 4, name="l2")
        d1 = lg.Dropout(a1, probability=0.4, name="d1")
        l3 = l2.reuse_with(d1, name="l3")
    return dict(x1=x1, l1=l1, a1=a1, l2=l2, d1=d1, l3=l3)


def rnn_cell(n_in=3, n_units=4, dtype="float64", seed=0):
    """tanh(Linear(x) + Linear(h)) consolidated as a module over [x, h]."""
    with lg.seed_scope(seed):
        x = lg.Input(n_in, name="x", dtype=dtype)
        h = lg.Input(n_units, name="h", dtype=dtype)
        w = lg.Linear(x, n_units, name="w")
        u = lg.Linear(h, n_units, name="u")
        add_wu = lg.Add(w, u, name="add_wu")
        out = lg.Activation(add_wu, "tanh", name="out")
        cell = lg.Module([x, h], out, name="rnn_cell")
    return dict(x=x, h=h, w=w, u=u, add_wu=add_wu, out=out, cell=cell)


@dataclass
class RandomGraph:
    graph: lg.Graph
    feed: dict
    nodes: list
    outputs: list
    planted: int = 0
    extra_outputs: list = field(default_factory=list)


FNS = ["tanh", "relu", "sigmoid", "identity", "neg"]
KINDS = ["linear", "activation", "add", "dropout", "lookup", "module"]


def _stateless_key(node):
    return (node.kind, tuple(sorted(node.config.items())), tuple(id(i) for i in node.inputs))


def random_graph(rng, max_nodes=10, batch=3, dtype="float64", kinds=KINDS) -> RandomGraph:
    """A valid DAG of at most ``max_nodes`` nodes with no accidental duplicates.

    Every node reaches an output (outputs are the sinks), so none is dead.
    Shapes come in two classes: ``[batch, n]`` from float inputs and
    ``[batch, 2, n]`` below an embedding lookup.
    """
    seed = int(rng.integers(2**62))
    with lg.seed_scope(seed):
        nodes = []
        cls = {}
        feed = {}
        n_float = int(rng.integers(1, 3))
        for i in range(n_float):
            x = lg.Input(int(rng.choice([2, 3])), name=f"in{i}", dtype=dtype)
            nodes.append(x)
            cls[x] = "flat"
            feed[x.name] = rng.standard_normal((batch, x.n_units))
        ids = None
        if "lookup" in kinds and rng.random() < 0.4:
            ids = lg.Input(2, name="ids", dtype="int64")
            nodes.append(ids)
            cls[ids] = "ids"
            feed[ids.name] = rng.integers(0, 5, size=(batch, 2))
        seen = set()
        attempts = 0
        while len(nodes) < max_nodes and attempts < 200:
            attempts += 1
            kind = kinds[int(rng.integers(len(kinds)))]
            floats = [n for n in nodes if cls[n] != "ids"]
            p = floats[int(rng.integers(len(floats)))]
            if kind == "linear":
                new = lg.Linear(p, int(rng.choice([2, 3])))
            elif kind == "activation":
                new = lg.Activation(p, FNS[int(rng.integers(len(FNS)))])
            elif kind == "dropout":
                new = lg.Dropout(p, float(rng.choice([0.2, 0.5])))
            elif kind == "add":
                same = [n for n in floats if n is not p and n.n_units == p.n_units and cls[n] == cls[p]]
                if not same:
                    continue
                new = lg.Add(p, same[int(rng.integers(len(same)))])
            elif kind == "lookup":
                if ids is None:
                    continue
                new = lg.Lookup(ids, 5, int(rng.choice([2, 3])), dtype=dtype)
                cls[new] = "seq"
                nodes.append(new)
                continue
            else:
                inner_in = lg.Input(p.n_units, dtype=dtype)
                body = lg.Activation(lg.Linear(inner_in, int(rng.choice([2, 3]))), "tanh")
                new = lg.Module([inner_in], body).reuse_with(p)
            if new.stateless:
                key = _stateless_key(new)
                if key in seen:
                    continue
                seen.add(key)
            cls[new] = cls[p]
            nodes.append(new)
        consumed = {id(i) for n in nodes for i in n.inputs}
        outputs = [n for n in nodes if id(n) not in consumed]
        graph = lg.Graph.build(outputs)
    return RandomGraph(graph, {k: v for k, v in feed.items() if k in graph.layers}, nodes, outputs)


def plant(rng, rg: RandomGraph, dtype="float64") -> RandomGraph:
    """Add dead branches and duplicates of existing nodes.

    Dead nodes become extra graph outputs that the plan does not request.
    Duplicates copy a stateless node's kind, config and inputs, or reuse a
    stateful node's state over its own inputs; they are requested outputs.
    """
    base = [n for n in rg.nodes if n.kind != "input"]
    floats = [n for n in rg.nodes if n.dtype.kind == "f"]
    dead, dups = [], []
    with lg.seed_scope(int(rng.integers(2**62))):
        for _ in range(int(rng.integers(1, 4))):
            src = floats[int(rng.integers(len(floats)))]
            if dead and rng.random() < 0.5:
                src = dead[-1]
            dead.append(lg.Linear(src, int(rng.choice([2, 3]))))
        for _ in range(int(rng.integers(1, 4))):
            if not base:
                break
            n = base.pop(int(rng.integers(len(base))))
            if n.kind == "activation":
                dups.append(lg.Activation(n.inputs[0], n.config["fn"]))
            elif n.kind == "add":
                dups.append(lg.Add(*n.inputs))
            elif n.kind == "dropout":
                dups.append(lg.Dropout(n.inputs[0], n.probability, seed=n.seed))
            else:
                dups.append(n.reuse_with(*n.inputs))
    outputs = list(rg.outputs) + dups
    graph = lg.Graph.build(outputs + dead)
    feed = {k: v for k, v in rg.feed.items() if k in graph.layers}
    return RandomGraph(graph, feed, rg.nodes + dead + dups, outputs, len(dead) + len(dups), dups)
