"""Command-line entry point: ``uqinit {init,quantize,dequantize,compare,bench}``.

Exit codes: 0 success, 2 I/O or parse failure, 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import tensorfile
from .bench import ratio, run_bench
from .core import check_bits
from .layer import (
    METHODS,
    BitBudget,
    GroupSpec,
    LayerProblem,
    QuantizedLayer,
    average_bits,
    hessian_from_activations,
    layer_loss,
    quantize_layer,
)
from .scale_search import SearchConfig

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _load(path, what):
    try:
        return tensorfile.load(path)
    except tensorfile.TensorFileError as exc:
        raise CliError(f"{what} file {path}: {exc}", EXIT_IO) from None


def _save(path, tensors, metadata=None):
    try:
        tensorfile.save(path, tensors, metadata)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}", EXIT_IO) from None


def _group_spec(value: str) -> GroupSpec:
    if value in ("channel", "0"):
        return GroupSpec("channel")
    try:
        size = int(value)
    except ValueError:
        raise CliError(f"--group must be 'channel' or a positive integer, got {value!r}") from None
    if size < 1:
        raise CliError(f"--group must be positive, got {size}")
    return GroupSpec("grouped", size)


def _config(args) -> SearchConfig:
    try:
        check_bits(args.bits)
        return SearchConfig(args.T, args.Tc, args.window)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _check_method(name: str) -> str:
    if name not in METHODS:
        raise CliError(f"unknown method {name!r}; choose from {', '.join(sorted(METHODS))}")
    return name


def load_problems(args) -> list[tuple[str, LayerProblem]]:
    """Read weight tensors and pair each with its Hessian information.

    A Hessian tensor of the same name may be 1-D (diagonal) or 2-D (full).
    Activations (samples x cols) are turned into a proxy Hessian.  With
    neither, every column gets unit importance.
    """
    weights, _ = _load(args.weights, "weights")
    hess = _load(args.hessian, "hessian")[0] if args.hessian else None
    acts = _load(args.activations, "activations")[0] if args.activations else None

    names = args.layers or sorted(n for n, t in weights.items() if t.ndim == 2)
    if not names:
        raise CliError(f"weights file {args.weights}: no 2-D tensors")

    problems = []
    for name in names:
        if name not in weights:
            raise CliError(f"weights file has no tensor {name!r}")
        W = weights[name]
        if W.ndim != 2:
            raise CliError(f"tensor {name!r}: weights must be 2-D, got shape {W.shape}")
        cols = W.shape[1]
        diag, full = np.ones(cols), None
        if hess is not None:
            if name not in hess:
                raise CliError(f"hessian file has no tensor {name!r}")
            H = hess[name]
            if H.ndim == 1 and H.shape[0] == cols:
                diag = H
            elif H.ndim == 2 and H.shape == (cols, cols):
                diag, full = np.diag(H).copy(), H
            else:
                raise CliError(f"tensor {name!r}: hessian shape {H.shape} does not match {cols} columns")
        elif acts is not None:
            if name not in acts:
                raise CliError(f"activations file has no tensor {name!r}")
            X = acts[name]
            if X.ndim != 2 or X.shape[1] != cols:
                raise CliError(f"tensor {name!r}: activations shape {X.shape} does not match {cols} columns")
            full, diag = hessian_from_activations(X)
        try:
            problems.append((name, LayerProblem(W, diag, full)))
        except ValueError as exc:
            raise CliError(f"tensor {name!r}: {exc}") from None
    return problems


def _run_layer(problem, group, bits, method, cfg, compensate):
    t0 = time.perf_counter()
    try:
        layer = quantize_layer(problem, group, bits, method, cfg, compensate)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return layer, time.perf_counter() - t0


def _record(command, name, method, args, group, layer, problem, elapsed):
    budget = BitBudget.for_method(method, args.bits, layer.group_size)
    rec = {
        "command": command,
        "layer": name,
        "method": method,
        "bits": args.bits,
        "grouping": group.mode,
        "group_size": layer.group_size,
        "loss": layer_loss(problem, layer),
        "average_bits": average_bits(budget),
        "wall_time": elapsed,
        "evaluations": layer.evaluations,
        "T": args.T,
        "Tc": args.Tc,
        "window": args.window,
        "seed": args.seed,
    }
    if problem.hessian_full is not None:
        rec["loss_full"] = layer_loss(problem, layer, full=True)
    return rec


def layer_tensors(name: str, layer: QuantizedLayer) -> dict[str, np.ndarray]:
    return {
        f"{name}.codes": layer.codes.astype(np.int32),
        f"{name}.scales": layer.scales,
        f"{name}.zeros": layer.zeros,
        f"{name}.perm": layer.perm.astype(np.int64),
    }


def read_quantized(path) -> dict[str, QuantizedLayer]:
    tensors, meta = _load(path, "quantized")
    layers = {}
    for key in sorted(tensors):
        if not key.endswith(".codes"):
            continue
        name = key[: -len(".codes")]
        try:
            bits = int(meta[f"{name}.bits"])
            g = int(meta[f"{name}.group_size"])
            layers[name] = QuantizedLayer(
                tensors[key].astype(np.int64),
                tensors[f"{name}.scales"],
                tensors[f"{name}.zeros"],
                bits,
                g,
                tensors[f"{name}.perm"],
            )
        except KeyError as exc:
            raise CliError(f"quantized file {path}: layer {name!r} missing {exc}", EXIT_IO) from None
    return layers


def _emit(records, args, columns):
    if args.report:
        try:
            with open(args.report, "w") as f:
                for rec in records:
                    f.write(json.dumps(rec, sort_keys=True) + "\n")
        except OSError as exc:
            raise CliError(f"cannot write report {args.report}: {exc.strerror}", EXIT_IO) from None
    if args.json:
        for rec in records:
            print(json.dumps(rec, sort_keys=True))
        return
    print(format_table(records, columns))


def format_table(records, columns) -> str:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    rows = [[cell(r.get(c, "")) for c in columns] for r in records]
    widths = [max([len(c)] + [len(r[i]) for r in rows]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def cmd_init(args):
    cfg = _config(args)
    method = _check_method(args.method)
    group = _group_spec(args.group)
    records, out = [], {}
    for name, problem in load_problems(args):
        layer, elapsed = _run_layer(problem, group, args.bits, method, cfg, False)
        records.append(_record("init", name, method, args, group, layer, problem, elapsed))
        out[f"{name}.scales"] = layer.scales
        out[f"{name}.zeros"] = layer.zeros
    if args.out:
        _save(args.out, out, {"bits": args.bits, "method": method})
    _emit(records, args, ["layer", "method", "bits", "grouping", "loss", "average_bits", "evaluations", "wall_time"])
    return EXIT_OK


def cmd_quantize(args):
    cfg = _config(args)
    method = _check_method(args.method)
    group = _group_spec(args.group)
    records, out, meta = [], {}, {"method": method}
    for name, problem in load_problems(args):
        layer, elapsed = _run_layer(problem, group, args.bits, method, cfg, args.compensate)
        rec = _record("quantize", name, method, args, group, layer, problem, elapsed)
        rec["compensate"] = args.compensate
        records.append(rec)
        out.update(layer_tensors(name, layer))
        meta[f"{name}.bits"] = args.bits
        meta[f"{name}.group_size"] = layer.group_size
        meta[f"{name}.average_bits"] = repr(rec["average_bits"])
    _save(args.out, out, meta)
    _emit(records, args, ["layer", "method", "bits", "grouping", "compensate", "loss", "average_bits", "wall_time"])
    return EXIT_OK


def cmd_dequantize(args):
    layers = read_quantized(args.input)
    if not layers:
        raise CliError(f"quantized file {args.input}: no layers", EXIT_IO)
    _save(args.out, {name: layer.dequantize() for name, layer in layers.items()})
    return EXIT_OK


def cmd_compare(args):
    cfg = _config(args)
    methods = [_check_method(m) for m in args.methods.split(",") if m]
    if not methods:
        raise CliError("--methods is empty")
    baseline = args.baseline or methods[0]
    if baseline not in methods:
        raise CliError(f"baseline method {baseline!r} is not among --methods")
    group = _group_spec(args.group)
    records = []
    for name, problem in load_problems(args):
        rows = {}
        for m in methods:
            layer, elapsed = _run_layer(problem, group, args.bits, m, cfg, args.compensate)
            rows[m] = _record("compare", name, m, args, group, layer, problem, elapsed)
        base = rows[baseline]
        for m in methods:
            rec = rows[m]
            rec["baseline"] = baseline
            rec["rel_loss"] = ratio(rec["loss"], base["loss"])
            rec["rel_time"] = ratio(rec["wall_time"], base["wall_time"])
            records.append(rec)
    _emit(records, args, ["layer", "method", "loss", "rel_loss", "rel_time", "average_bits", "evaluations", "wall_time"])
    return EXIT_OK


def cmd_bench(args):
    cfg = _config(args)
    variants = [v for v in args.variants.split(",") if v]
    try:
        records = run_bench(args.n, args.bits, variants, args.repeat, args.seed, args.rows, cfg, args.baseline)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    _emit(records, args, ["repeat", "variant", "loss", "rel_loss", "wall_time", "rel_time"])
    return EXIT_OK


def _common(p, layer_inputs=True):
    if layer_inputs:
        p.add_argument("--weights", required=True, help="tensor file with 2-D weight matrices")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--hessian", help="tensor file: per-layer diagonal (1-D) or full (2-D) Hessian")
        src.add_argument("--activations", help="tensor file: per-layer calibration activations")
        p.add_argument("--layers", nargs="*", help="layer names (default: every 2-D tensor)")
        p.add_argument("--group", default="channel", help="'channel' or a group size (default: channel)")
    p.add_argument("--bits", "--k", "-k", type=int, default=2)
    p.add_argument("--T", type=int, default=2048, help="scale candidates (default 2048)")
    p.add_argument("--Tc", type=int, default=64, help="coarse scale candidates (default 64)")
    p.add_argument("--window", type=int, default=1, help="fine window half-width in coarse steps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="write one JSON record per line to this path")
    p.add_argument("--json", action="store_true", help="print JSON records instead of a table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uqinit", description="Uniform quantization parameter initialization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="compute per-group scale and zero-point")
    _common(p)
    p.add_argument("--method", default="neuqi")
    p.add_argument("--out", help="write scales/zeros tensor file")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("quantize", help="quantize layers and write codes")
    _common(p)
    p.add_argument("--method", default="neuqi")
    p.add_argument("--compensate", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("dequantize", help="reconstruct weights from a quantized file")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dequantize)

    p = sub.add_parser("compare", help="run several methods on the same layers")
    _common(p)
    p.add_argument("--methods", default="neuqi,neuqi_exhaustive")
    p.add_argument("--baseline", help="method the ratios are taken against (default: first)")
    p.add_argument("--compensate", action=argparse.BooleanOptionalAction, default=False)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="time search variants on synthetic rows")
    _common(p, layer_inputs=False)
    p.add_argument("--n", type=int, default=4096, help="row length")
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--variants", default="full,no_ctf,neuqi")
    p.add_argument("--baseline", default="full")
    p.add_argument("--repeat", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"uqinit: error: {exc}", file=sys.stderr)
        return exc.code
    except tensorfile.TensorFileError as exc:
        print(f"uqinit: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
