"""``segt`` command line.

Standard output carries only ``key=value`` lines; prose goes to standard
error.  Exit codes: 0 ok, 1 selftest failure, 2 I/O, 3 config, 4 shape.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import model_io, spacecurve as sc
from .attention import group_attention_forward
from .encoder import bev_scatter, encoder_forward, lift_channels, segt_layer
from .errors import ConfigError, ContractError, DomainError, FormatError, IngestionError
from .synthetic import random_voxels
from .voxelizer import read_points, voxelize

EXIT_OK, EXIT_SELFTEST, EXIT_IO, EXIT_CONFIG, EXIT_SHAPE = 0, 1, 2, 3, 4
MAX_DUMP_LEVEL = 8


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _emit(out, **kv):
    for k, v in kv.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = f"{v:.6g}"
        print(f"{k}={v}", file=out)


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path, data):
    try:
        if isinstance(data, str):
            Path(path).write_text(data)
        else:
            Path(path).write_bytes(data)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc.strerror or exc}") from None


def _config(args):
    if args.config is None:
        return model_io.RunConfig()
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {args.config}: {exc.strerror or exc}") from None
    return model_io.load_config(text)


def cmd_voxelize(args, out):
    cfg = _config(args)
    stride = args.stride if args.stride is not None else cfg.stride
    if not Path(args.input).is_file():
        raise CliError(EXIT_IO, f"cannot read {args.input}: no such file")
    cloud = read_points(args.input, stride)
    vs = voxelize(cloud, cfg.grid)
    _write(args.output, model_io.write_voxels(vs))
    kept = int(vs.counts.sum())
    _emit(out, n=len(vs), c=vs.channel_count, dims=vs.grid.dims, points=len(cloud),
          dropped=len(cloud) - kept)


def _load_voxels(args, cfg):
    return model_io.read_voxels(_read_bytes(args.input), cfg.grid)


def cmd_serialize(args, out):
    cfg = _config(args)
    vs = _load_voxels(args, cfg)
    plan = sc.serialize(vs, sc.Strategy.parse(args.strategy), cfg.expansion)
    coords = sc.gather(vs.coords, plan)
    lines = ["rank,voxel_row,global_key,local_key,x,y,z"]
    for i, (row, g, l, c) in enumerate(zip(plan.order.tolist(), plan.global_keys.tolist(),
                                           plan.local_keys.tolist(), coords.tolist())):
        lines.append(f"{i},{row},{g},{l},{c[0]},{c[1]},{c[2]}")
    _write(args.output, "\n".join(lines) + "\n")
    _emit(out, n=len(vs), strategy=args.strategy, l_glb=cfg.l_glb, l_lcl=cfg.l_lcl)


def curve_svg(cells, level, scale=16):
    """2D curve as an SVG polyline; the path steps in cell units."""
    side = 1 << level
    path = " ".join(("M" if i == 0 else "L") + f"{x} {y}" for i, (x, y) in enumerate(cells))
    size = side * scale
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="-0.5 -0.5 {side} {side}">\n'
        f'  <path d="{path}" fill="none" stroke="black" stroke-width="{0.2:g}" '
        f'vector-effect="non-scaling-stroke"/>\n</svg>\n'
    )


def cmd_curve(args, out):
    if not 1 <= args.level <= MAX_DUMP_LEVEL:
        raise CliError(EXIT_CONFIG, f"--level must lie in [1, {MAX_DUMP_LEVEL}] for dumps, got {args.level}")
    if args.dims not in (2, 3):
        raise CliError(EXIT_CONFIG, f"--dims must be 2 or 3, got {args.dims}")
    if args.svg and args.dims != 2:
        raise CliError(EXIT_CONFIG, "--svg renders 2D curves only")
    cells = sc.curve_table(args.level, args.dims)
    full = cells if args.dims == 3 else np.c_[cells, np.zeros(len(cells), np.int64)]
    body = "\n".join(f"{i},{x},{y},{z}" for i, (x, y, z) in enumerate(full.tolist()))
    _write(args.output, "index,x,y,z\n" + body + "\n")
    if args.svg:
        _write(args.svg, curve_svg(cells.tolist(), args.level))
    _emit(out, level=args.level, dims=args.dims, rows=len(cells))


def cmd_encode(args, out):
    cfg = _config(args)
    vs = _load_voxels(args, cfg)
    if args.weights:
        try:
            params, wcfg = model_io.load_params(_read_bytes(args.weights))
        except ContractError as exc:
            raise CliError(EXIT_SHAPE, str(exc)) from None
        if wcfg.grid.dims != cfg.grid.dims or wcfg.expansion != cfg.expansion:
            raise CliError(EXIT_SHAPE, "weights were saved for a different grid or expansion depth")
    else:
        seed = args.seed if args.seed is not None else cfg.seed
        params = model_io.init_params(model_io.with_seed(cfg, seed), identity=args.identity)
    vs = lift_channels(vs, params.attention.channels)
    t0 = time.perf_counter()
    enc = encoder_forward(vs, params)
    t1 = time.perf_counter()
    bev = bev_scatter(enc)
    t2 = time.perf_counter()
    _write(args.output, model_io.write_bev(bev))
    _emit(out, n=len(vs), c=params.attention.channels, bev_dims=bev.features.shape[:2],
          encoder_ms=(t1 - t0) * 1e3, bev_ms=(t2 - t1) * 1e3)


BENCH_STAGES = ("serialize", "attention", "layer")


def cmd_bench(args, out):
    cfg = _config(args)
    if args.voxels < 1:
        raise CliError(EXIT_CONFIG, "--voxels must be at least 1")
    stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    unknown = set(stages) - set(BENCH_STAGES)
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown bench stage(s): {', '.join(sorted(unknown))}")
    seed = args.seed if args.seed is not None else cfg.seed
    vs = random_voxels(args.voxels, cfg.grid, cfg.channels, seed=seed)
    params = model_io.init_params(model_io.with_seed(cfg, seed))
    lp = params.layers()[0]
    plan = sc.serialize(vs, sc.Strategy.PLUS, cfg.expansion)
    f_z, c_z = sc.gather(vs.features, plan), sc.gather(vs.coords, plan)
    runs = {
        "serialize": lambda: sc.serialize(vs, sc.Strategy.PLUS, cfg.expansion),
        "attention": lambda: group_attention_forward(f_z, c_z, cfg.grid, cfg.attention, lp.attention),
        "layer": lambda: segt_layer(vs, sc.Strategy.PLUS, lp, cfg.attention, cfg.expansion),
    }
    report = dict(voxels=args.voxels, repeat=args.repeat)
    for name in BENCH_STAGES:
        if name not in stages:
            continue
        times = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            runs[name]()
            times.append((time.perf_counter() - t0) * 1e3)
        report[f"{name}_min_ms"] = float(np.min(times))
        report[f"{name}_median_ms"] = float(np.median(times))
    _emit(out, **report)
    return report


def cmd_selftest(args, out):
    from .selftest import corrupted_encoder, run_selftest

    t0 = time.perf_counter()
    results = run_selftest(corrupted_encoder if args.corrupt_curve else sc.hilbert_encode_array)
    failed = [k for k, (ok, _) in results.items() if not ok]
    for name, (ok, detail) in results.items():
        _emit(out, **{name: "pass" if ok else "fail"})
        print(f"{name}: {detail}", file=sys.stderr)
    _emit(out, failed=",".join(failed) or "none", seconds=time.perf_counter() - t0)
    return EXIT_SELFTEST if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="segt", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread count; 1 forces the sequential reference path (default: $SEGT_THREADS)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("voxelize", help="point cloud (.bin/.csv) -> SEGV")
    s.add_argument("--input", required=True)
    s.add_argument("--config")
    s.add_argument("--output", required=True)
    s.add_argument("--stride", type=int, help="floats per point in .bin input (default: config stride)")
    s.set_defaults(func=cmd_voxelize)

    s = sub.add_parser("serialize", help="SEGV -> ordered-field CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--strategy", default="+", choices=["+", "-"])
    s.add_argument("--config")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_serialize)

    s = sub.add_parser("curve", help="dump a full Hilbert curve as CSV (and SVG)")
    s.add_argument("--level", type=int, required=True)
    s.add_argument("--dims", type=int, default=2)
    s.add_argument("--output", required=True)
    s.add_argument("--svg")
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("encode", help="SEGV -> encoder -> SEGB")
    s.add_argument("--input", required=True)
    w = s.add_mutually_exclusive_group()
    w.add_argument("--weights")
    w.add_argument("--seed", type=int)
    s.add_argument("--identity", action="store_true", help="zero residual output projections when seeding")
    s.add_argument("--config")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("bench", help="time serialize / attention / layer on random voxels")
    s.add_argument("--voxels", type=int, default=100_000)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.add_argument("--repeat", type=int, default=5)
    s.add_argument("--stages", default=",".join(BENCH_STAGES))
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("selftest", help="run the embedded invariant suite")
    s.add_argument("--corrupt-curve", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)
    return p


@contextlib.contextmanager
def _thread_limit(n):
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    threads = args.threads
    if threads is None and os.environ.get("SEGT_THREADS"):
        threads = int(os.environ["SEGT_THREADS"])
    try:
        with _thread_limit(threads):
            rc = args.func(args, out)
        return rc if isinstance(rc, int) else EXIT_OK
    except CliError as exc:
        code, msg = exc.code, str(exc)
    except (ConfigError, DomainError) as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except ContractError as exc:
        code, msg = EXIT_SHAPE, str(exc)
    except (FormatError, IngestionError, OSError) as exc:
        code, msg = EXIT_IO, str(exc)
    print(f"segt {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
