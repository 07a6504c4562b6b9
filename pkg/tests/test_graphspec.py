import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layergraph import tensor as T
from layergraph.errors import DuplicateName, ParseError, UnknownKind
from layergraph.graphspec import GraphSpec, NodeDecl, build_spec, load_spec, parse_spec, render_spec

from conftest import DATA

HEAD = "version: 1\ninputs: x\noutputs: y\nnode x: kind=input n_units=2\n"


def test_parse_five_node_file():
    spec = load_spec(DATA / "five_node.lg")
    assert [n.name for n in spec.nodes] == ["x1", "x2", "l1", "l2", "l3"]
    assert spec.node("l2").inputs == ("l1", "x2")
    built = build_spec(spec)
    assert [n.name for n in built.graph.order] == ["x1", "x2", "l1", "l2", "l3"]


def test_render_is_canonical():
    text = (DATA / "xor.lg").read_text()
    spec = parse_spec(text)
    again = render_spec(spec)
    assert "#" not in again
    assert render_spec(parse_spec(again)) == again


def test_forward_reference_allowed():
    spec = parse_spec(
        "version: 1\ninputs: x\noutputs: y\n"
        "node y: kind=activation inputs=x n_units=2 fn=relu\nnode x: kind=input n_units=2\n"
    )
    assert [n.name for n in build_spec(spec).graph.order] == ["x", "y"]


def test_undeclared_reference_names_the_node():
    with pytest.raises(ParseError, match="zz") as e:
        parse_spec(HEAD + "node y: kind=activation inputs=zz n_units=2 fn=tanh\n")
    assert e.value.line == 5
    assert e.value.column == 32


def test_unknown_kind_and_duplicates():
    with pytest.raises(UnknownKind) as e:
        parse_spec(HEAD + "node y: kind=conv inputs=x n_units=2\n")
    assert (e.value.line, e.value.column) == (5, 9)
    with pytest.raises(DuplicateName):
        parse_spec(HEAD + "node x: kind=input n_units=3\nnode y: kind=add inputs=x,x n_units=2\n")


@pytest.mark.parametrize(
    "line",
    [
        "node y: kind=activation inputs=x n_units=2",
        "node y: kind=activation inputs=x n_units=2 fn=tanh probability=0.1",
        "node y: kind=linear inputs=x n_units=0",
        "node y: kind=linear inputs=x,x n_units=2",
        "node y: kind=dropout inputs=x n_units=2 probability=abc",
        "node y kind=linear",
        "nodes y: kind=linear",
    ],
)
def test_malformed_lines(line):
    with pytest.raises(ParseError):
        parse_spec(HEAD + line + "\n")


def test_version_required():
    with pytest.raises(ParseError):
        parse_spec("inputs: x\n")
    with pytest.raises(ParseError):
        parse_spec("version: 2\n")


def test_state_lines_load(tmp_path):
    w = T.Tensor(np.eye(2), "float32")
    T.save(w, tmp_path / "w.tsr")
    (tmp_path / "g.lg").write_text(
        HEAD + "node y: kind=linear inputs=x n_units=2\nstate y.weights: w.tsr\n"
    )
    built = build_spec(load_spec(tmp_path / "g.lg"), base_dir=tmp_path)
    assert built.layers["y"].state["weights"].bitwise_equal(w)


def test_seeds_derive_from_base_and_name():
    spec = load_spec(DATA / "xor.lg")
    a = build_spec(spec, seed=3).layers["h"].state["weights"]
    assert a.bitwise_equal(build_spec(spec, seed=3).layers["h"].state["weights"])
    assert not a.bitwise_equal(build_spec(spec, seed=4).layers["h"].state["weights"])


NAMES = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True)


@st.composite
def specs(draw):
    names = draw(st.lists(NAMES, min_size=2, max_size=6, unique=True))
    width = draw(st.integers(1, 4))
    nodes = [NodeDecl(names[0], "input", (), width, {})]
    for i, name in enumerate(names[1:], 1):
        src = names[draw(st.integers(0, i - 1))]
        kind = draw(st.sampled_from(["linear", "activation", "dropout", "add"]))
        if kind == "linear":
            nodes.append(NodeDecl(name, kind, (src,), width, {"bias": draw(st.booleans())}, draw(st.none() | st.integers(0, 99))))
        elif kind == "activation":
            nodes.append(NodeDecl(name, kind, (src,), width, {"fn": draw(st.sampled_from(["tanh", "relu"]))}))
        elif kind == "dropout":
            p = draw(st.floats(0.0, 0.95, allow_nan=False))
            nodes.append(NodeDecl(name, kind, (src,), width, {"probability": p}))
        else:
            nodes.append(NodeDecl(name, kind, (src, names[0]), width, {}))
    return GraphSpec(nodes, [names[0]], [names[-1]])


@settings(max_examples=60, deadline=None)
@given(specs())
def test_render_parse_round_trip(spec):
    text = render_spec(spec)
    parsed = parse_spec(text)
    assert parsed == spec
    assert render_spec(parsed) == text
