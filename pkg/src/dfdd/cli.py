"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 data or schema error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from . import calib, costmodel, numerics, synth
from .imageio import read_pgm, write_pgm
from .pipeline import CalibrationParams, ParamsError, default_params, run_pipeline
from .reference import reference_depth
from .streaming import CausalityError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out {out} is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_params(path: str) -> CalibrationParams:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"params file {p} not found")
    return CalibrationParams.from_json(p.read_text())


def _echo(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    if args.depths is not None:
        depths = np.array(args.depths, dtype=np.float64)
        if np.any(depths <= 0):
            raise UsageError("--depths must be positive")
    else:
        depths = synth.depth_ladder(args.start, args.stop, args.step)
    cfg = synth.OpticalConfig(width=args.width, height=args.height, noise_sigma=args.noise,
                              field_curvature=args.field_curvature)
    out = _out_dir(args)
    ds = synth.make_dataset(cfg, depths, seed=args.seed)
    synth.save_dataset(ds, out)
    _echo(f"wrote {len(ds)} pairs to {out}")
    return EXIT_OK


def _initial_params(ds: synth.Dataset, args) -> CalibrationParams:
    if args.init:
        return _load_params(args.init)
    a, b = synth.physical_init(ds.cfg, args.scales)
    h, w = ds.samples[0].i1.shape
    return default_params(w, h, a, b, n_scales=args.scales, derivatives_enabled=args.dxdy)


def cmd_calibrate(args) -> int:
    ds = synth.load_dataset(args.data)
    init = _initial_params(ds, args)
    out = _out_dir(args)

    def progress(t, loss):
        if args.verbose:
            print(f"iter {t:3d} loss {loss:.6g}", file=sys.stderr)

    rep = calib.calibrate(ds.samples, init, iters=args.iters, lr=args.lr, progress=progress)
    (out / "params.json").write_text(rep.params.to_json())
    (out / "report.txt").write_text(rep.to_text())
    (out / "report.csv").write_text(rep.to_csv())
    lo, hi, span = rep.working_range
    _echo(f"final loss {rep.final_loss:.6g}; working range {span:.2f} m"
          + ("" if span == 0 and np.isnan(lo) else f" ({lo:.2f} to {hi:.2f} m)"))
    return EXIT_OK


def cmd_depth(args) -> int:
    params = _load_params(args.params)
    i1, i2 = read_pgm(args.i1), read_pgm(args.i2)
    if i1.shape != i2.shape:
        raise ValueError("image pair dimensions differ")
    out = _out_dir(args)
    if args.engine == "streaming":
        dm = run_pipeline(i1, i2, params, numerics=args.numerics)
    else:
        dm = reference_depth(i1, i2, params, numerics=args.numerics)
    mm = np.where(dm.valid, np.clip(np.rint(np.nan_to_num(dm.depth) * 1000), 0, 65535), 0)
    write_pgm(out / "depth.pgm", mm.astype(np.uint16))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["x", "y", "depth_m", "confidence"])
    ys, xs = np.nonzero(dm.valid)
    for y, x in zip(ys, xs):
        wr.writerow([x, y, repr(float(dm.depth[y, x])), repr(float(dm.confidence[y, x]))])
    (out / "depth.csv").write_text(buf.getvalue())
    conf = dm.confidence[dm.valid]
    mean_conf = float(conf.mean()) if conf.size else 0.0
    summary = f"density {100 * dm.density:.2f}% mean confidence {mean_conf:.6g}"
    (out / "summary.txt").write_text(summary + "\n")
    _echo(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = synth.load_dataset(args.data)
    params = _load_params(args.params)
    out = _out_dir(args)
    rep = calib.evaluate(ds.samples, params, args.metric, args.sparsity, args.numerics)
    (out / "eval.csv").write_text(rep.to_csv())
    (out / "eval.txt").write_text(rep.to_text())
    lo, hi, span = rep.working_range
    _echo(f"working range {span:.2f} m" +
          ("" if np.isnan(lo) else f" ({lo:.2f} to {hi:.2f} m)"))
    return EXIT_OK


def cmd_cost(args) -> int:
    text = costmodel.cost_report(args.scales, args.dxdy)
    if args.audit:
        rng = np.random.default_rng(args.seed)
        w, h = args.width, args.height
        params = default_params(w, h, [-5.0] * args.scales, [1.5] * args.scales,
                                n_scales=args.scales, derivatives_enabled=args.dxdy)
        counter: Counter = Counter()
        graphs: list = []
        i1 = rng.integers(0, 256, (h, w))
        i2 = rng.integers(0, 256, (h, w))
        run_pipeline(i1, i2, params, counter=counter, graph_out=graphs)
        rep = costmodel.audit(graphs[0], counter, w, h, args.scales, args.dxdy)
        text += "\n## Audit\n\n```\n" + rep.text() + "\n```\n"
    if args.out:
        out = _out_dir(args)
        (out / "cost.md").write_text(text)
    _echo(text)
    return EXIT_OK


def cmd_selftest(args) -> int:
    t = time.perf_counter()
    res = numerics.selftest(args.n, args.seed)
    lines = [f"{op}: {n} mismatches" for op, n in res.items()]
    total = sum(res.values())
    lines.append(f"total mismatches: {total}")
    text = "\n".join(lines) + "\n"
    if args.out:
        (_out_dir(args) / "selftest.txt").write_text(text)
    _echo(text)
    print(f"{args.n} pairs per op in {time.perf_counter() - t:.2f} s", file=sys.stderr)
    return EXIT_OK if total == 0 else EXIT_INTERNAL


# ------------------------------------------------------------------ parser

def _positive_int(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _scales(v: str) -> int:
    n = _positive_int(v)
    if n > 2:
        raise argparse.ArgumentTypeError("the estimate weights cover at most 2 scales")
    return n


def _add_dxdy(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--dxdy", dest="dxdy", action="store_true", default=True,
                   help="use derivative estimates (default)")
    g.add_argument("--no-dxdy", dest="dxdy", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfdd", description="Differential defocus depth toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    p = common(sub.add_parser("synth", help="render a synthetic depth sweep"))
    p.add_argument("--depths", type=float, nargs="+", help="explicit depths in metres")
    p.add_argument("--start", type=float, default=synth.DEPTH_START)
    p.add_argument("--stop", type=float, default=synth.DEPTH_STOP)
    p.add_argument("--step", type=float, default=synth.DEPTH_STEP)
    p.add_argument("--width", type=_positive_int, default=synth.OpticalConfig.width)
    p.add_argument("--height", type=_positive_int, default=synth.OpticalConfig.height)
    p.add_argument("--noise", type=float, default=0.0, help="noise sigma, 8-bit units")
    p.add_argument("--field-curvature", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("calibrate", help="fit parameters and thresholds"))
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--init", help="initial params JSON (default: physical estimates)")
    p.add_argument("--scales", type=_scales, default=2)
    _add_dxdy(p)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("depth", help="depth map for one image pair"))
    p.add_argument("--params", required=True)
    p.add_argument("--i1", required=True)
    p.add_argument("--i2", required=True)
    p.add_argument("--engine", choices=["streaming", "reference"], default="streaming")
    p.add_argument("--numerics", choices=["half", "wide"], default="half")
    p.set_defaults(func=cmd_depth)

    p = common(sub.add_parser("eval", help="error and density against true depth"))
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--metric", choices=calib.METRICS, default="VW")
    p.add_argument("--sparsity", type=float, help="keep the top 100-S percent per image")
    p.add_argument("--numerics", choices=["half", "wide"], default="wide")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("cost", help="FLOP and line-buffer tables"), out_required=False)
    p.add_argument("--scales", type=_positive_int, default=2)
    _add_dxdy(p)
    p.add_argument("--audit", action="store_true", help="reconcile against an instrumented run")
    p.add_argument("--width", type=_positive_int, default=64)
    p.add_argument("--height", type=_positive_int, default=48)
    p.set_defaults(func=cmd_cost)

    p = common(sub.add_parser("numerics-selftest", help="binary16 ops against the wide oracle"),
               out_required=False)
    p.add_argument("-n", type=_positive_int, default=1_000_000)
    p.set_defaults(func=cmd_selftest)
    p = common(sub.add_parser("numerics", help="numerics tools"), out_required=False)
    p.add_argument("action", choices=["selftest"])
    p.add_argument("-n", type=_positive_int, default=1_000_000)
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "command", None) == "cost" and args.audit and args.scales > 2:
        print("error: --audit supports at most 2 scales", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ParamsError as e:
        print("error: invalid params file:", file=sys.stderr)
        for line in e.errors:
            print(f"  {line}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, CausalityError, calib.CalibrationError) as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
