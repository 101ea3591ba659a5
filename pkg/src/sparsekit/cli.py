"""``sparsekit`` command line: convert, run, bench, perf, prune-train.

Exit codes: 0 success, 2 I/O or parse failure, 3 validation or shape error,
4 numerical divergence. Floats are written with ``repr`` so that CSV output
round-trips exactly and is byte-stable across runs.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import statistics
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from sparsekit.errors import DivergenceError, ParseError, ValidationError
from sparsekit.kernels import count_macs
from sparsekit.perf import amdahl_limit, at_density, default_hw, load_hw, speedup_curve, throughput
from sparsekit.runtime import (
    WeightStore,
    apply_sparsity,
    parse_graph,
    profile,
    random_inputs,
    read_weights,
    run,
    write_weights,
)
from sparsekit.sparsify import METRICS_HEADER, ExperimentConfig, run_experiment, to_weight_store
from sparsekit.tensor import sparsity_factor

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3, 4
PERF_HEADER = ("factor", "latency_s", "speedup", "bottleneck_mode", "throughput_samples_per_s", "accuracy")
# throughput-style operating point; batch 1 is dominated by per-op overhead
PERF_BATCH = 16
BENCH_HEADER = ("density", "wall_ms_median", "counted_macs", "samples_per_s")


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return repr(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def parse_factors(text: str) -> list[float]:
    """``"1,2,8"`` or reciprocals such as ``"0.125"``/``"1/8"``; all map to factors >= 1."""
    out = []
    for raw in text.split(","):
        raw = raw.strip()
        if not raw:
            continue
        try:
            v = Fraction(raw)
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"bad sparsity factor {raw!r}") from None
        if v <= 0:
            raise ValidationError(f"sparsity factor must be positive, got {raw!r}")
        f = 1 / v if v < 1 else v
        out.append(int(f) if f.denominator == 1 else float(f))
    if not out:
        raise ValidationError("empty sparsity factor list")
    return out


def parse_density(text: str) -> float:
    try:
        d = float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"bad density {text!r}") from None
    if not 0 < d <= 1:
        raise ValidationError(f"density must lie in (0, 1], got {text!r}")
    return d


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_graph(path, store=None):
    return parse_graph(_read_text(path), store)


def _emit(rows, header, out_path=None, stream=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if out_path:
        Path(out_path).write_text(buf.getvalue())
    else:
        (stream or sys.stdout).write(buf.getvalue())


# --------------------------------------------------------------------------- subcommands


def cmd_convert(a) -> int:
    store = read_weights(a.weights)
    g = _load_graph(a.graph, store)
    d = parse_density(a.density)
    out = apply_sparsity(store, d, g, fmt=a.format)
    write_weights(a.out, out)
    rows = []
    for name in g.matmul_weights():
        t = out[name]
        rows.append((name, "x".join(map(str, t.shape)), t.nnz, _num(sparsity_factor(t))))
    _emit(rows, ("weight", "shape", "nnz", "factor"))
    return EXIT_OK


def cmd_run(a) -> int:
    store = read_weights(a.weights)
    g = _load_graph(a.graph, store)
    inputs = read_weights(a.input)
    feed = {}
    for gi in g.inputs:
        if gi.name not in inputs:
            raise ValidationError(f"input file has no tensor {gi.name!r}")
        feed[gi.name] = inputs[gi.name]
    outs = run(g, store, feed, precision=a.precision)
    write_weights(a.out, WeightStore(outs))
    return EXIT_OK


def cmd_bench(a) -> int:
    if a.repeat < 3:
        raise ValidationError("--repeat must be >= 3")
    if a.batch < 1:
        raise ValidationError("--batch must be >= 1")
    store = read_weights(a.weights)
    g = _load_graph(a.graph, store)
    samples = [random_inputs(g, a.seed + i) for i in range(a.batch)]
    rows = []
    for f in parse_factors(a.sparsity):
        d = 1.0 / f
        pruned = apply_sparsity(store, d, g)
        walls, macs = [], None
        for _ in range(a.repeat):
            with count_macs() as counter:
                t0 = time.perf_counter()
                for x in samples:
                    run(g, pruned, x)
                walls.append(time.perf_counter() - t0)
            if macs is not None and counter.total != macs:
                raise AssertionError("MAC count changed between repeats")
            macs = counter.total
        med = statistics.median(walls)
        rows.append((_num(d), _num(med * 1e3), macs, _num(a.batch / med)))
    _emit(rows, BENCH_HEADER, a.out)
    return EXIT_OK


def _accuracy_by_factor(path) -> dict:
    """Last accuracy per density from a metrics CSV (``density`` or ``factor`` column)."""
    try:
        reader = csv.DictReader(io.StringIO(_read_text(path)))
        table = {}
        for row in reader:
            if "factor" in row:
                f = float(row["factor"])
            elif "density" in row:
                f = 1.0 / float(row["density"])
            else:
                raise ValidationError(f"{path}: metrics need a 'density' or 'factor' column")
            table[round(f, 9)] = row["accuracy"]
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ParseError(f"{path}: bad metrics file ({exc})") from None
    return table


def cmd_perf(a) -> int:
    store = read_weights(a.weights) if a.weights else None
    g = _load_graph(a.graph, store)
    hw = load_hw(a.hw) if a.hw else default_hw()
    if a.batch < 1:
        raise ValidationError("--batch must be >= 1")
    factors = parse_factors(a.sparsity)
    acc = _accuracy_by_factor(a.metrics) if a.metrics else {}
    per_sample = profile(g, store, 1)
    batched = profile(g, store, a.batch)
    rows = []
    for r in speedup_curve(batched, hw, factors):
        tp = throughput(at_density(per_sample, 1.0 / min(r.factor, hw.max_sparsity_speedup)), hw, a.batch)
        rows.append((_num(r.factor), _num(r.latency_s), _num(r.speedup), r.bottleneck_mode, _num(tp),
                     acc.get(round(float(r.factor), 9), "")))
    _emit(rows, PERF_HEADER, a.out)
    limit = amdahl_limit(batched, hw)
    print(f"amdahl_limit,{'inf' if math.isinf(limit) else _num(limit)}", file=sys.stderr)
    return EXIT_OK


def cmd_prune_train(a) -> int:
    cfg = ExperimentConfig.load(a.config)
    model, mask, history = run_experiment(cfg, a.seed)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(t, _num(d), _num(loss), _num(acc)) for t, d, loss, acc in history]
    _emit(rows, METRICS_HEADER, out / "metrics.csv")
    write_weights(out / "weights.spw", WeightStore(to_weight_store(model, mask)))
    final = history[-1]
    print(f"final density {_num(final[1])} accuracy {_num(final[3])}")
    return EXIT_OK


# --------------------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsekit", description="Sparse inference toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="magnitude-prune a weight store")
    c.add_argument("--graph", required=True)
    c.add_argument("--weights", required=True)
    c.add_argument("--density", required=True, help="target density, e.g. 0.125 or 1/8")
    c.add_argument("--out", required=True)
    c.add_argument("--format", choices=("csr", "balanced"), default="csr")
    c.set_defaults(func=cmd_convert)

    r = sub.add_parser("run", help="run a graph on an SPW1 input file")
    r.add_argument("--graph", required=True)
    r.add_argument("--weights", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--precision", choices=("f32", "i8"), default="f32")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="time the interpreter at several sparsity factors")
    b.add_argument("--graph", required=True)
    b.add_argument("--weights", required=True)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--sparsity", default="1,2,4,8,16,32")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("perf", help="speedup curve from the analytical model")
    f.add_argument("--graph", required=True)
    f.add_argument("--weights")
    f.add_argument("--hw")
    f.add_argument("--sparsity", default="1,2,4,8,16,32")
    f.add_argument("--batch", type=int, default=PERF_BATCH)
    f.add_argument("--metrics", help="CSV with accuracy per density/factor to join")
    f.add_argument("--out")
    f.set_defaults(func=cmd_perf)

    t = sub.add_parser("prune-train", help="pretrain, then prune with distillation")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_prune_train)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        code, exc_msg = EXIT_IO, str(exc)
    except ValidationError as exc:
        code, exc_msg = EXIT_INVALID, str(exc)
    except DivergenceError as exc:
        code, exc_msg = EXIT_DIVERGED, str(exc)
    print(f"sparsekit {args.command}: error: {exc_msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
