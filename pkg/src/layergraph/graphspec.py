"""Line-oriented text format for layer graphs.

Example::

    version: 1
    inputs: x1, x2
    outputs: l3
    node x1: kind=input n_units=2
    node x2: kind=input n_units=4
    node l1: kind=linear inputs=x1 n_units=4
    node l2: kind=add inputs=l1,x2 n_units=4
    node l3: kind=linear inputs=l2 n_units=2
    state l1.weights: l1.weights.tsr

Blank lines and ``#`` comments are ignored. Node inputs may refer to nodes
declared further down; cycles are reported when the graph is built.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from . import tensor as T
from .errors import DuplicateName, ParseError, ShapeMismatch, UnknownKind
from .graph import Graph, toposort
from .layers import Activation, Add, Dropout, Input, Linear, Lookup

VERSION = 1
NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _bool(text):
    if text not in ("true", "false"):
        raise ValueError(f"expected true or false, got {text!r}")
    return text == "true"


def _dtype(text):
    T.as_dtype(text)
    return text


def _fn(text):
    if text not in T.UNARY:
        raise ValueError(f"unknown activation {text!r}")
    return text


# kind -> (number of inputs or None for "two or more", config key -> parser)
KINDS = {
    "input": (0, {"dtype": _dtype}),
    "linear": (1, {"bias": _bool}),
    "activation": (1, {"fn": _fn}),
    "add": (None, {}),
    "dropout": (1, {"probability": float}),
    "lookup": (1, {"vocab_size": int}),
}
REQUIRED = {"activation": ("fn",), "dropout": ("probability",), "lookup": ("vocab_size",)}


def _render_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class NodeDecl:
    name: str
    kind: str
    inputs: tuple = ()
    n_units: int = 1
    config: dict = field(default_factory=dict)
    seed: int | None = None


@dataclass
class GraphSpec:
    nodes: list
    inputs: list
    outputs: list
    state: dict = field(default_factory=dict)  # "node.slot" -> path
    version: int = VERSION

    def node(self, name) -> NodeDecl:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)


def render_spec(spec: GraphSpec) -> str:
    lines = [f"version: {spec.version}", "inputs: " + ", ".join(spec.inputs), "outputs: " + ", ".join(spec.outputs)]
    for n in spec.nodes:
        parts = [f"node {n.name}:", f"kind={n.kind}"]
        if n.inputs:
            parts.append("inputs=" + ",".join(n.inputs))
        parts.append(f"n_units={n.n_units}")
        parts.extend(f"{k}={_render_value(n.config[k])}" for k in sorted(n.config))
        if n.seed is not None:
            parts.append(f"seed={n.seed}")
        lines.append(" ".join(parts))
    for key in sorted(spec.state):
        lines.append(f"state {key}: {spec.state[key]}")
    return "\n".join(lines) + "\n"


def _names(text, lineno, col):
    """Comma-separated names with the column of each one."""
    found = []
    for m in re.finditer(r"[^,]+", text):
        s = m.group().strip()
        at = col + m.start() + len(m.group()) - len(m.group().lstrip())
        if not NAME.match(s):
            raise ParseError(f"invalid name {s!r}", lineno, at)
        found.append((s, at))
    if text.strip() and len(found) != text.count(",") + 1:
        raise ParseError(f"empty name in {text.strip()!r}", lineno, col)
    return found


def parse_spec(text: str) -> GraphSpec:
    version = inputs = outputs = None
    nodes: list = []
    where: dict = {}
    state: dict = {}
    refs = []  # (name, line, column) that must resolve to a node
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col = len(line) - len(line.lstrip()) + 1
        head, sep, rest = line.strip().partition(":")
        if not sep:
            raise ParseError(f"expected ':' in {line.strip()!r}", lineno, col)
        rest_col = col + len(head) + 1 + (len(rest) - len(rest.lstrip()))
        words = head.split()
        if words == ["version"]:
            if version is not None or nodes or inputs is not None:
                raise ParseError("version must be the first line", lineno, col)
            if rest.strip() != str(VERSION):
                raise ParseError(f"unsupported version {rest.strip()!r}", lineno, rest_col)
            version = VERSION
            continue
        if version is None:
            raise ParseError("document must start with 'version: 1'", lineno, col)
        if words == ["inputs"] or words == ["outputs"]:
            found = _names(rest.strip(), lineno, rest_col)
            refs.extend((n, lineno, c) for n, c in found)
            names = [n for n, _ in found]
            if words[0] == "inputs":
                inputs = names
            else:
                outputs = names
        elif len(words) == 2 and words[0] == "node":
            nodes.append(_parse_node(words[1], rest, lineno, col, col + len(head) + 1, where, refs))
        elif len(words) == 2 and words[0] == "state":
            key = words[1]
            node_name, dot, slot = key.partition(".")
            if not dot or not NAME.match(node_name) or not NAME.match(slot):
                raise ParseError(f"state key must be node.slot, got {key!r}", lineno, col)
            if key in state:
                raise DuplicateName(f"state {key!r} given twice", lineno, col)
            if not rest.strip():
                raise ParseError("state line needs a file path", lineno, rest_col)
            refs.append((node_name, lineno, col))
            state[key] = rest.strip()
        else:
            raise ParseError(f"unrecognized line {line.strip()!r}", lineno, col)
    if version is None:
        raise ParseError("empty document; expected 'version: 1'", 1, 1)
    if inputs is None:
        raise ParseError("missing 'inputs:' line")
    if not outputs:
        raise ParseError("missing or empty 'outputs:' line")
    for name, lineno, col in refs:
        if name not in where:
            raise ParseError(f"reference to undeclared node {name!r}", lineno, col)
    return GraphSpec(nodes, inputs, outputs, state)


def _parse_node(name, rest, lineno, col, base, where, refs) -> NodeDecl:
    if not NAME.match(name):
        raise ParseError(f"invalid node name {name!r}", lineno, col)
    if name in where:
        raise DuplicateName(f"node {name!r} already declared on line {where[name]}", lineno, col)
    where[name] = lineno
    fields = {}
    for m in re.finditer(r"\S+", rest):
        tok, tcol = m.group(), base + m.start()
        key, eq, val = tok.partition("=")
        if not eq or not val:
            raise ParseError(f"expected key=value, got {tok!r}", lineno, tcol)
        if key in fields:
            raise ParseError(f"field {key!r} given twice", lineno, tcol)
        fields[key] = (val, tcol)
    if "kind" not in fields:
        raise ParseError(f"node {name!r} has no kind", lineno, col)
    kind, kcol = fields.pop("kind")
    if kind not in KINDS:
        raise UnknownKind(f"unknown kind {kind!r}", lineno, kcol)
    arity, schema = KINDS[kind]
    inputs = ()
    if "inputs" in fields:
        text, icol = fields.pop("inputs")
        found = _names(text, lineno, icol + len("inputs="))
        refs.extend((n, lineno, c) for n, c in found)
        inputs = tuple(n for n, _ in found)
    want = "two or more" if arity is None else str(arity)
    if (arity is None and len(inputs) < 2) or (arity is not None and len(inputs) != arity):
        raise ParseError(f"{kind} node {name!r} needs {want} input(s), got {len(inputs)}", lineno, col)
    try:
        n_units = int(fields.pop("n_units")[0]) if "n_units" in fields else None
        seed = int(fields.pop("seed")[0]) if "seed" in fields else None
    except ValueError as e:
        raise ParseError(str(e), lineno, col) from None
    if n_units is None or n_units < 1:
        raise ParseError(f"node {name!r} needs a positive n_units", lineno, col)
    config = {}
    for key, (val, vcol) in fields.items():
        if key not in schema:
            raise ParseError(f"{kind} node does not take {key!r}", lineno, vcol)
        try:
            config[key] = schema[key](val)
        except ValueError as e:
            raise ParseError(f"bad value for {key}: {e}", lineno, vcol) from None
    for key in REQUIRED.get(kind, ()):
        if key not in config:
            raise ParseError(f"{kind} node {name!r} needs {key}=", lineno, col)
    return NodeDecl(name, kind, inputs, n_units, config, seed)


def load_spec(path) -> GraphSpec:
    return parse_spec(Path(path).read_text(encoding="utf-8"))


@dataclass
class BuiltSpec:
    layers: dict
    graph: Graph

    @property
    def inputs(self):
        return list(self.graph.inputs)

    @property
    def outputs(self):
        return list(self.graph.outputs)


def build_spec(spec: GraphSpec, seed=0, base_dir=None, load_state=True) -> BuiltSpec:
    """Instantiate layers for ``spec`` and trace its graph.

    Nodes without an explicit seed get one derived from ``seed`` and the
    node name, so the same document always builds the same initial state.
    """
    decls = {n.name: n for n in spec.nodes}
    rank = {n.name: i for i, n in enumerate(spec.nodes)}
    order = toposort([n.name for n in spec.nodes], lambda k: decls[k].inputs, key=rank.__getitem__)
    layers: dict = {}
    for name in order:
        d = decls[name]
        s = d.seed if d.seed is not None else T.derive_seed(seed, name)
        ins = [layers[i] for i in d.inputs]
        if d.kind == "input":
            layer = Input(d.n_units, name=name, dtype=d.config.get("dtype"))
        elif d.kind == "linear":
            layer = Linear(ins[0], d.n_units, bias=d.config.get("bias", True), name=name, seed=s)
        elif d.kind == "activation":
            layer = Activation(ins[0], d.config["fn"], name=name)
        elif d.kind == "add":
            layer = Add(*ins, name=name)
        elif d.kind == "dropout":
            layer = Dropout(ins[0], d.config["probability"], name=name, seed=s)
        else:
            layer = Lookup(ins[0], d.config["vocab_size"], d.n_units, name=name, seed=s)
        if layer.n_units != d.n_units:
            raise ShapeMismatch(f"node {name!r} declares n_units={d.n_units} but produces {layer.n_units}")
        layers[name] = layer
    graph = Graph.build([layers[n] for n in spec.outputs], [layers[n] for n in spec.inputs])
    if load_state:
        base = Path(base_dir) if base_dir is not None else Path(".")
        for key, rel in spec.state.items():
            node_name, _, slot = key.partition(".")
            load_slot(layers[node_name], slot, base / rel)
    return BuiltSpec(layers, graph)


def load_slot(layer, slot, path):
    if slot not in layer.state:
        raise ShapeMismatch(f"{layer.name} has no state slot {slot!r}")
    current = layer.state[slot]
    dtype = current.dtype if current is not None else layer.dtype
    layer.state.assign(slot, T.load(path, dtype))

