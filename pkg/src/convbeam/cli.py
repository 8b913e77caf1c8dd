"""Command-line entry point: ``convbeam <subcommand> ...``.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.
``CONVBEAM_OUTPUT_DIR`` overrides output directories and ``CONVBEAM_WORKERS``
the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiment, formats, plotting
from .arrays import (
    ApodizationMap,
    coarray_extent,
    fractal_expand,
    intrinsic_apodization,
    is_full_coarray,
    is_sparse_wrt,
    is_symmetric,
    make_upa,
    named_sparse,
    sum_coarray,
)
from .beamform import ImagingGrid, coba3d, compound, das, default_weights, scoba3d
from .beampattern import AngleGrid, coba_receive_beam_pattern, pattern_metrics, receive_beam_pattern, wavelength_for
from .experiment import ConfigError
from .metrics import SliceSpec, envelope_logcompress

logger = logging.getLogger("convbeam")


def _out_dir(arg):
    return Path(os.environ.get("CONVBEAM_OUTPUT_DIR") or arg or ".")


def _workers(arg):
    return arg if arg is not None else experiment.default_workers()


def _emit(text, path=None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _load_array(path):
    try:
        return formats.load_array(path)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_array(args):
    if args.action in ("generate", "fractal"):
        if args.action == "fractal":
            gen = _load_array(args.generator)
            arr = fractal_expand(gen, args.order)
        elif args.upa:
            arr = make_upa(args.upa[0], args.upa[1], args.pitch_x_m, args.pitch_y_m)
        elif args.named:
            params = {}
            if args.preset:
                params["preset"] = args.preset
            arr = named_sparse(args.named, args.half_extent, args.pitch_x_m, args.pitch_y_m, **params)
        else:
            raise ConfigError("generate needs --upa or --named")
        text = json.dumps(formats.array_to_dict(arr), indent=1) + "\n"
        _emit(text, args.out)
        if args.plot:
            plotting.plot_array(arr, args.plot)
        return 0
    arr = _load_array(args.file)
    if args.action == "inspect":
        apod = intrinsic_apodization(arr)
        lines = ["n,m,count"] + [f"{n},{m},{int(v)}" for (n, m), v in zip(apod.positions.tolist(), apod.values)]
        _emit("\n".join(lines) + "\n", args.out)
        cx, cy = coarray_extent(arr)
        print(f"elements={len(arr)} coarray={len(apod)} coarray_box={cx}x{cy}", file=sys.stderr)
        if args.plot:
            plotting.plot_array(arr, args.plot)
        return 0
    # validate
    full = _load_array(args.against) if args.against else make_upa(15, 15, arr.pitch_x, arr.pitch_y)
    rows = [
        ("elements", len(arr)),
        ("coarray_elements", len(sum_coarray(arr))),
        ("symmetric", is_symmetric(arr)),
        ("full_coarray", is_full_coarray(arr)),
        ("sparse_wrt_reference", is_sparse_wrt(arr, full)),
    ]
    _emit("property,value\n" + "".join(f"{k},{str(v).lower()}\n" for k, v in rows), args.out)
    return 0


def cmd_beampattern(args):
    arr = _load_array(args.array)
    grid = AngleGrid.default(args.step_deg, tuple(args.phis_deg))
    lam = wavelength_for(args.center_freq_hz, args.sound_speed_mps)
    if args.method == "das":
        bp = receive_beam_pattern(ApodizationMap.uniform(arr), grid, lam, arr.pitch_x, arr.pitch_y)
    else:
        bp = coba_receive_beam_pattern(arr, default_weights(arr, args.weight_mode), grid, lam, arr.pitch_x, arr.pitch_y)
    db = bp.magnitude_db()
    th = np.rad2deg(grid.thetas)
    ph = np.rad2deg(grid.phis)
    lines = ["theta_deg,phi_deg,magnitude_db"]
    for i in range(len(th)):
        for j in range(len(ph)):
            lines.append(f"{th[i]:.6g},{ph[j]:.6g},{db[i, j]:.6g}")
    _emit("\n".join(lines) + "\n", args.out)
    if args.image:
        plotting.render_pattern(bp, args.image, args.dynamic_range_db)
    if args.plot:
        plotting.plot_pattern_cuts({args.method: bp}, args.plot)
    m = pattern_metrics(bp)
    print(f"mainlobe_width_deg={m.mainlobe_width_deg:.4g} peak_sidelobe_db={m.peak_sidelobe_db:.4g}", file=sys.stderr)
    return 0


def cmd_simulate(args):
    cfg = experiment.ExperimentConfig.load(args.config)
    cube = experiment._simulate(cfg)
    formats.write_iqcube(cube, args.out)
    print(f"events={cube.samples.shape[0]} elements={cube.samples.shape[1]} samples={cube.samples.shape[2]}", file=sys.stderr)
    return 0


def _grid_from(path):
    g = _load_json(path)
    try:
        return ImagingGrid.sector(
            np.deg2rad(experiment.axis_values(g["x_angle_deg"], "x_angle_deg")),
            np.deg2rad(experiment.axis_values(g.get("y_angle_deg", [0.0]), "y_angle_deg")),
            experiment.axis_values(g["depth_m"], "depth_m"),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing {exc}") from None


def cmd_beamform(args):
    grid = _grid_from(args.grid)
    cube = formats.read_iqcube(args.input)
    arr = _load_array(args.array) if args.array else cube.rx_array
    if not arr.as_set() <= cube.rx_array.as_set():
        raise ConfigError("beamforming array is not a subset of the recorded elements")
    field = compound(cube, grid, workers=_workers(args.workers))
    if args.method == "das":
        vol = das(field.restrict(arr))
    elif args.method == "coba":
        vol = coba3d(field.restrict(arr), weight_mode=args.weight_mode)
    else:
        vol = scoba3d(field, arr, weight_mode=args.weight_mode)
    vol.provenance = Path(args.input).name[:48] + ":" + args.method
    formats.write_volume(vol, args.out)
    return 0


def cmd_metrics(args):
    vol = formats.read_volume(args.input)
    regions = _load_json(args.regions) if args.regions else {}
    row = {"label": vol.provenance, "method": vol.beamformer.value, "elements": vol.n_elements}
    row.update(experiment.volume_metrics(vol, regions, None if regions.get("cyst_center_m") else {"kind": "points"}))
    _emit(experiment.write_csv([row], experiment.METRIC_COLUMNS), args.out)
    return 0


def cmd_render(args):
    vol = formats.read_volume(args.input)
    img = envelope_logcompress(vol, args.dynamic_range_db, SliceSpec(args.plane, args.index))
    plotting.render_bmode(img, args.out)
    return 0


def cmd_run(args):
    cfg = experiment.ExperimentConfig.load(_config_path(args.config))
    out = Path(os.environ["CONVBEAM_OUTPUT_DIR"]) / cfg.name if os.environ.get("CONVBEAM_OUTPUT_DIR") else args.output_dir
    res = experiment.run(cfg, out, workers=_workers(args.workers), figures=not args.no_figures)
    if res.status == 0:
        sys.stdout.write(experiment.write_csv(res.rows, experiment.METRIC_COLUMNS))
    else:
        print(f"error: stage {res.manifest['failed_stage']!r} failed: {res.manifest['error']}", file=sys.stderr)
    return res.status


def cmd_compare(args):
    cfgs = [experiment.ExperimentConfig.load(_config_path(p)) for p in args.configs]
    out = _out_dir(args.output_dir) if (args.output_dir or os.environ.get("CONVBEAM_OUTPUT_DIR")) else None
    _, text = experiment.compare(cfgs, out, workers=_workers(args.workers))
    sys.stdout.write(text)
    return 0


def cmd_bench(args):
    rows = experiment.bench(args.sizes, args.repeats, args.batch)
    text = experiment.write_csv(rows, ["size", "direct_s", "fourier_s", "speedup", "max_rel_err"])
    out = _out_dir(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(text)
    plotting.plot_bench([(r["size"], r["direct_s"], r["fourier_s"]) for r in rows], out / "bench.png")
    sys.stdout.write(text)
    return 0


def _config_path(p):
    path = Path(p)
    if not path.exists() and path.suffix == "":
        return experiment.bundled_config(p)
    return path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="convbeam", description="3D convolutional beamforming toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("array", help="generate, inspect, expand or validate array descriptors")
    asub = a.add_subparsers(dest="action", required=True)
    g = asub.add_parser("generate", help="UPA or named sparse layout descriptor")
    g.add_argument("--upa", type=int, nargs=2, metavar=("HX", "HY"), help="half extents of a UPA")
    g.add_argument("--named", choices=["plus", "x", "box", "nested"])
    g.add_argument("--preset", choices=["I", "II", "III"])
    g.add_argument("--half-extent", type=int, default=15)
    g.add_argument("--pitch-x-m", type=float, default=300e-6)
    g.add_argument("--pitch-y-m", type=float, default=300e-6)
    g.add_argument("-o", "--out")
    g.add_argument("--plot", help="layout figure path")
    f = asub.add_parser("fractal", help="fractal expansion of a generator array")
    f.add_argument("generator")
    f.add_argument("--order", type=int, required=True)
    f.add_argument("-o", "--out")
    f.add_argument("--plot")
    i = asub.add_parser("inspect", help="co-array and intrinsic apodization as CSV")
    i.add_argument("file")
    i.add_argument("-o", "--out")
    i.add_argument("--plot")
    v = asub.add_parser("validate", help="symmetry, co-array fullness and sparsity report")
    v.add_argument("file")
    v.add_argument("--against", help="reference array (default 31x31 UPA)")
    v.add_argument("-o", "--out")
    a.set_defaults(func=cmd_array)

    b = sub.add_parser("beampattern", help="far-field receive beam pattern")
    b.add_argument("--array", required=True)
    b.add_argument("--method", choices=["das", "coba"], default="das")
    b.add_argument("--weight-mode", choices=["unity-effective", "raw"], default="unity-effective")
    b.add_argument("--center-freq-hz", type=float, default=3e6)
    b.add_argument("--sound-speed-mps", type=float, default=1540.0)
    b.add_argument("--step-deg", type=float, default=0.5)
    b.add_argument("--phis-deg", type=float, nargs="+", default=[0.0, 45.0, 90.0])
    b.add_argument("--dynamic-range-db", type=float, default=60.0)
    b.add_argument("-o", "--out", help="CSV path (default stdout)")
    b.add_argument("--image", help="grayscale |H| image (.png/.pgm)")
    b.add_argument("--plot", help="theta-cut figure")
    b.set_defaults(func=cmd_beampattern)

    s = sub.add_parser("simulate", help="simulate an IQ cube from an experiment config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    bf = sub.add_parser("beamform", help="DAS, COBA-3D or SCOBA-3D volume from an IQ cube")
    bf.add_argument("--method", choices=["das", "coba", "scoba"], required=True)
    bf.add_argument("--array", help="receive array descriptor (default: every recorded element)")
    bf.add_argument("--grid", required=True, help="JSON with x_angle_deg, y_angle_deg, depth_m")
    bf.add_argument("--in", dest="input", required=True)
    bf.add_argument("--out", required=True)
    bf.add_argument("--weight-mode", choices=["unity-effective", "raw"], default="unity-effective")
    bf.add_argument("--workers", type=int)
    bf.set_defaults(func=cmd_beamform)

    m = sub.add_parser("metrics", help="CR and FWHM of a volume as CSV")
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--regions", help="JSON with cyst_center_m, cyst_radius_m (omit for FWHM only)")
    m.add_argument("-o", "--out")
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("render", help="8-bit grayscale B-mode slice")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True, help=".png or .pgm")
    r.add_argument("--plane", choices=["xz", "yz"], default="xz")
    r.add_argument("--index", type=int)
    r.add_argument("--dynamic-range-db", type=float, default=60.0)
    r.set_defaults(func=cmd_render)

    rn = sub.add_parser("run", help="full pipeline from a config (file or bundled name)")
    rn.add_argument("config")
    rn.add_argument("--output-dir")
    rn.add_argument("--workers", type=int)
    rn.add_argument("--no-figures", action="store_true")
    rn.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate CR/FWHM across configs")
    c.add_argument("configs", nargs="+")
    c.add_argument("--output-dir")
    c.add_argument("--workers", type=int)
    c.set_defaults(func=cmd_compare)

    be = sub.add_parser("bench", help="direct vs Fourier self-convolution timing")
    be.add_argument("--sizes", type=int, nargs="+", default=[3, 7, 15, 31])
    be.add_argument("--repeats", type=int, default=5)
    be.add_argument("--batch", type=int, default=64)
    be.add_argument("--output-dir")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except experiment.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
