"""Command line front end: ``describe``, ``train`` and ``eval``.

Exit codes: 0 success, 1 I/O error, 2 validation or parse error, 3 numeric
failure. Results go to standard output, diagnostics to standard error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import LayerGraphError, ShapeMismatch
from .graphspec import build_spec, load_slot, load_spec
from .train import SGD, Model

DATA_VERSION = "version: 1"
TARGET = "target"


class UsageError(LayerGraphError):
    pass


def load_data(path, inputs, target_units=None) -> dict:
    """Read a delimited data file into ``{input name: array, "target": array}``.

    The header names every column ``<input>.<k>`` or ``target.<k>``.
    """
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or lines[0].strip() != DATA_VERSION:
        raise UsageError(f"{path}: data files start with '{DATA_VERSION}'")
    if len(lines) < 3:
        raise UsageError(f"{path}: needs a header line and at least one row")
    header = [h.strip() for h in lines[1].split(",")]
    groups: dict = {}
    for col, h in enumerate(header):
        name, dot, k = h.rpartition(".")
        if not dot or not k.isdigit():
            raise UsageError(f"{path}: header column {h!r} is not <name>.<index>")
        groups.setdefault(name, []).append((int(k), col))
    by_name = {n.name: n for n in inputs}
    for name in groups:
        if name != TARGET and name not in by_name:
            raise UsageError(f"{path}: column group {name!r} matches no declared input")
    missing = [n for n in by_name if n not in groups]
    if missing:
        raise UsageError(f"{path}: no columns for input(s) {', '.join(missing)}")
    if TARGET not in groups:
        raise UsageError(f"{path}: no target columns")
    rows = [[c.strip() for c in ln.split(",")] for ln in lines[2:]]
    for i, r in enumerate(rows, 3):
        if len(r) != len(header):
            raise UsageError(f"{path}: row on line {i} has {len(r)} values, header has {len(header)}")
    out = {}
    for name, cols in groups.items():
        cols = [c for _, c in sorted(cols)]
        node = by_name.get(name)
        dtype = node.dtype if node is not None else None
        want = node.n_units if node is not None else target_units
        if want is not None and len(cols) != want:
            raise ShapeMismatch(f"{path}: {name} has {len(cols)} column(s), expected {want}")
        conv = int if dtype == T.int64 else float
        try:
            out[name] = np.array([[conv(r[c]) for c in cols] for r in rows], dtype=dtype)
        except ValueError as e:
            raise UsageError(f"{path}: bad value in {name} columns: {e}") from None
    return out


def batches(data: dict, batch_size=None) -> list:
    n = len(next(iter(data.values())))
    size = batch_size or n
    return [{k: v[i:i + size] for k, v in data.items()} for i in range(0, n, size)]


def default_seed():
    return int(os.environ.get("LAYERGRAPH_SEED", "0"))


def _build(args):
    spec = load_spec(args.spec)
    built = build_spec(spec, seed=args.seed, base_dir=Path(args.spec).parent)
    if len(built.outputs) != 1:
        raise UsageError("train/eval need a spec with exactly one output")
    return spec, built


def cmd_describe(args):
    spec = load_spec(args.spec)
    built = build_spec(spec, seed=args.seed, base_dir=Path(args.spec).parent, load_state=False)
    sys.stdout.write(built.graph.as_function(compile=args.compile).describe())
    return 0


def cmd_train(args):
    if args.epochs < 1:
        raise UsageError(f"--epochs must be at least 1, got {args.epochs}")
    if args.lr < 0:
        raise UsageError(f"--lr must be non-negative, got {args.lr}")
    spec, built = _build(args)
    out = built.outputs[0]
    data = load_data(args.data, built.inputs, out.n_units)
    model = Model(built.inputs, out, loss=args.loss, optimizer=SGD(args.lr, args.momentum), compile=args.compile)
    history = model.fit(batches(data, args.batch_size), args.epochs, metrics=tuple(args.metric or ()))

    outdir = Path(args.out)
    (outdir / "state").mkdir(parents=True, exist_ok=True)
    (outdir / "history.tsv").write_text(history.export(), encoding="utf-8")
    for label, state, slot in built.graph.variables():
        T.save(state[slot], outdir / "state" / f"{label}.tsr")
    if not args.no_plot:
        from .report import plot_history

        plot_history(history, outdir / "loss.png", title=Path(args.spec).stem)
    print(f"final_loss\t{history.losses[-1]!r}")
    return 0


def cmd_eval(args):
    spec, built = _build(args)
    state_dir = Path(args.state)
    if not state_dir.is_dir():
        raise FileNotFoundError(f"state directory {state_dir} not found")
    for path in sorted(state_dir.glob("*.tsr")):
        node_name, _, slot = path.stem.partition(".")
        if node_name not in built.layers:
            raise UsageError(f"state file {path.name} names unknown node {node_name!r}")
        load_slot(built.layers[node_name], slot, path)
    out = built.outputs[0]
    data = load_data(args.data, built.inputs, out.n_units)
    model = Model(built.inputs, out, loss="mse")
    scores = model.evaluate(batches(data, args.batch_size), tuple(args.metric or ("accuracy", "mse")))
    for name, value in scores.items():
        print(f"{name}\t{value!r}")
    return 0


def make_parser():
    p = argparse.ArgumentParser(prog="layergraph", description="Build, inspect and train layer graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("spec", help="graph spec file")
        sp.add_argument("--seed", type=int, default=default_seed(), help="base seed (env LAYERGRAPH_SEED)")

    d = sub.add_parser("describe", help="print the dependency-ordered schedule")
    common(d)
    d.add_argument("--compile", action="store_true", help="show the optimized schedule")
    d.set_defaults(func=cmd_describe)

    t = sub.add_parser("train", help="fit the graph to a data file")
    common(t)
    t.add_argument("data", help="delimited data file")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--loss", choices=["mse", "xent"], default="mse")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--metric", action="append", choices=["mse", "accuracy"], help="track per epoch")
    t.add_argument("--compile", action="store_true")
    t.add_argument("--out", default="run", help="output directory")
    t.add_argument("--no-plot", action="store_true", help="skip loss.png")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score saved state on a data file")
    common(e)
    e.add_argument("state", help="directory of <node>.<slot>.tsr files")
    e.add_argument("data", help="delimited data file")
    e.add_argument("--metric", action="append", choices=["mse", "accuracy"])
    e.add_argument("--batch-size", type=int, default=None)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    try:
        return args.func(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except LayerGraphError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
