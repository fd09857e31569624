"""Command line front end.

Exit codes: 0 success, 2 decode below threshold (or a guideline row not
reproduced), 3 format or I/O error, 4 spec violation, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import geometry, harness, nirsim, thermsim
from .decode import (POLARITIES, AccuracySeries, GridGeometry, decode_nir_cube, decode_thermal_recording,
                     reading_window, write_accuracy_csv)
from .errors import DecodeError, EmbedTagError, FormatError, IoFailure, SpecViolation
from .payload import GlyphBitmap, bitmap_to_mesh, load_pbm, matrix_accuracy, matrix_to_mesh, read_matrix

EXIT_OK, EXIT_BELOW, EXIT_FORMAT, EXIT_SPEC = 0, 2, 3, 4


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_matrix_file(path):
    return read_matrix(_read_bytes(path))


def _parse_res(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 24x24, got {text!r}") from None
    return w, h


def _parse_values(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _config(arg):
    if arg is None:
        return harness.load_config()
    if arg.startswith("builtin:"):
        return harness.shipped_config(arg.split(":", 1)[1])
    return harness.load_config(arg)


# ---------------------------------------------------------------- commands


def cmd_embed(a):
    obj = geometry.parse_stl(_read_bytes(a.object))
    lo, hi = obj.bbox()
    raw = _read_bytes(a.payload)
    spec_kw = dict(depth_d=a.depth, density_X=a.density, info_height=a.height, mode=a.mode,
                   infill_fraction=a.infill, object_dims=tuple(hi - lo), object_color=a.color)
    if raw[:2] in (b"P1", b"P4"):
        glyph = load_pbm(raw, scale=a.density)
        spec = geometry.EmbedSpec(payload_shape=(glyph.height, glyph.width), **spec_kw)
        info = bitmap_to_mesh(glyph, a.height)
    else:
        matrix = read_matrix(raw).check_payload()
        spec = geometry.EmbedSpec(payload_shape=matrix.shape, **spec_kw)
        info = matrix_to_mesh(matrix, spec)
    spec.validate()
    grid, bodies = geometry.embed(obj, info, spec, pitch=a.pitch, place=True)
    path = geometry.export_bodies(bodies, a.out)
    print(f"embedded {spec.payload_shape[0]}x{spec.payload_shape[1]} payload at d={spec.depth_d} mm; "
          f"object voxels {grid.count(geometry.OBJECT)}, info voxels {grid.count(geometry.INFO)}; wrote {path}")
    return EXIT_OK


def cmd_simulate_thermal(a):
    obj, info, spec, _ = geometry.load_design(a.design)
    c = thermsim.DEFAULT_CONSTANTS
    grid = geometry.design_grid(obj, info, spec, c.sim_pitch_mm, c.join_reach_mm)
    sc = thermsim.ThermalScenario(contact_temp=a.contact_temp, contact_duration=a.contact_duration,
                                  ambient_temp=a.ambient, record_duration=a.duration, frame_rate=a.fps,
                                  noise_sigma=a.noise, seed=a.seed)
    rec = thermsim.simulate_reading(grid, spec, sc, c)
    if a.corrupt_frames:
        rec, _ = harness.corrupt_frames(rec, a.corrupt_frames, a.seed)
    try:
        thermsim.write_thermal_csv(rec, a.out)
    except OSError as exc:
        raise IoFailure(f"cannot write {a.out}: {exc}") from exc
    print(f"{len(rec)} frames of {rec.frames.shape[1]}x{rec.frames.shape[2]} px, contact released at "
          f"{rec.contact_end:g} s; wrote {a.out}")
    return EXIT_OK


def cmd_simulate_nir(a):
    obj, info, spec, _ = geometry.load_design(a.design)
    grid = geometry.design_grid(obj, info, spec, harness.NIR_PITCH_MM)
    w, h = a.res
    scan = nirsim.ScanSettings(width=w, height=h, step_mm=a.step_mm, seed=a.seed,
                               **({} if a.noise is None else {"noise_sigma": a.noise}))
    cube = nirsim.simulate_scan(grid, spec, scan=scan, color=a.color)
    try:
        nirsim.write_cube(cube, a.out)
    except OSError as exc:
        raise IoFailure(f"cannot write {a.out}: {exc}") from exc
    print(f"{cube.width}x{cube.height}x{len(cube.wavelengths)} cube; wrote {a.out}")
    return EXIT_OK


def _geometry(a, truth):
    return GridGeometry(truth.rows, truth.cols, sample_spacing=getattr(a, "spacing", None),
                        density_X=a.density, object_width_mm=getattr(a, "object_width", 30.0),
                        polarity=a.polarity, invert=a.invert, orient=a.orient)


def cmd_decode_thermal(a):
    try:
        rec = thermsim.read_thermal_csv(a.input)
    except OSError as exc:
        raise IoFailure(f"cannot read {a.input}: {exc}") from exc
    truth = _read_matrix_file(a.truth)
    series = decode_thermal_recording(rec, _geometry(a, truth), truth)
    try:
        write_accuracy_csv(series, a.out)
    except OSError as exc:
        raise IoFailure(f"cannot write {a.out}: {exc}") from exc
    idx = np.nonzero(series.times >= a.contact_end - 1e-9)[0]
    if not len(idx):
        raise DecodeError(f"no frame at or after contact end {a.contact_end:g} s")
    first = float(series.accuracy[idx[0]])
    window = reading_window(series, a.contact_end)
    print(f"first post-contact accuracy {first:.4f} at t={series.times[idx[0]]:.3f} s; "
          f"reading window {window:.3f} s; wrote {a.out}")
    return EXIT_OK if first == 1.0 else EXIT_BELOW


def cmd_decode_nir(a):
    try:
        cube = nirsim.read_cube(a.input)
    except OSError as exc:
        raise IoFailure(f"cannot read {a.input}: {exc}") from exc
    truth = _read_matrix_file(a.truth)
    decoded = decode_nir_cube(cube, _geometry(a, truth))
    acc = matrix_accuracy(decoded, truth)
    try:
        write_accuracy_csv(AccuracySeries([0.0], [acc], [False]), a.out)
    except OSError as exc:
        raise IoFailure(f"cannot write {a.out}: {exc}") from exc
    sys.stdout.write(decoded.to_text())
    print(f"accuracy {acc:.4f}; wrote {a.out}")
    return EXIT_OK if acc == 1.0 else EXIT_BELOW


def cmd_sweep(a):
    cfg = _config(a.config)
    paths = harness.run_config(cfg, a.out, a.workers, a.method, a.axis, _parse_values(a.values))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_sweep_all(a):
    for p in harness.run_config(_config(a.config), a.out, a.workers):
        print(f"wrote {p}")
    return EXIT_OK


def cmd_check_guidelines(a):
    results = harness.load_results(a.results)
    verdicts = harness.check_guidelines(results, harness.load_guidelines(a.results))
    for v in verdicts:
        print(v.line())
    failed = sum(not v.passed for v in verdicts)
    print(f"{len(verdicts) - failed}/{len(verdicts)} guideline checks pass")
    return EXIT_OK if failed == 0 else EXIT_BELOW


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="embedtag", description="Embed, simulate and decode hidden 3D-print tags.")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("embed", help="carve a payload into an object and export the two print bodies")
    e.add_argument("--object", required=True, help="object STL (binary or ASCII)")
    e.add_argument("--payload", required=True, help="matrix file (rows of 0/1) or PBM glyph")
    e.add_argument("--depth", type=float, default=1.0, help="mm from the top surface to the payload")
    e.add_argument("--density", type=float, default=5.0, help="mm per payload bit")
    e.add_argument("--height", type=float, default=1.0, help="payload thickness in mm")
    e.add_argument("--mode", choices=[m.value for m in geometry.Mode], default="surface-join")
    e.add_argument("--infill", type=float, default=0.10)
    e.add_argument("--color", default="black", help="object filament color")
    e.add_argument("--pitch", type=float, default=geometry.DEFAULT_PITCH_MM, help="voxel pitch for the check")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_embed)

    t = sub.add_parser("simulate-thermal", help="simulate a heat-contact thermal recording")
    t.add_argument("--design", required=True)
    t.add_argument("--contact-temp", type=float, default=35.0)
    t.add_argument("--contact-duration", type=float, default=3.0)
    t.add_argument("--ambient", type=float, default=27.0)
    t.add_argument("--duration", type=float, default=60.0)
    t.add_argument("--fps", type=float, default=6.0)
    t.add_argument("--noise", type=float, default=0.05, help="camera noise sigma in degC")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--corrupt-frames", type=int, default=0,
                   help="replace this many random frames with flat calibration frames")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_simulate_thermal)

    n = sub.add_parser("simulate-nir", help="simulate a near-infrared raster scan")
    n.add_argument("--design", required=True)
    n.add_argument("--color", default=None, help="object color (default: from the design)")
    n.add_argument("--step-mm", type=float, default=1.0)
    n.add_argument("--res", type=_parse_res, default=(24, 24), help="WxH pixels")
    n.add_argument("--noise", type=float, default=None, help="per-band noise sigma")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--out", required=True)
    n.set_defaults(func=cmd_simulate_nir)

    for name, func, helptext in (("decode-thermal", cmd_decode_thermal, "decode every frame of a thermal CSV"),
                                 ("decode-nir", cmd_decode_nir, "decode a NIRC cube")):
        d = sub.add_parser(name, help=helptext)
        d.add_argument("--in", dest="input", required=True)
        d.add_argument("--truth", required=True, help="ground-truth matrix file")
        d.add_argument("--density", type=float, default=5.0, help="mm per payload bit")
        d.add_argument("--polarity", choices=POLARITIES, default="auto")
        d.add_argument("--invert", action="store_true", help="flip which side of the threshold is a set bit")
        d.add_argument("--orient", action="store_true", help="also try the payload rotated by 90, 180 and 270 degrees")
        d.add_argument("--out", required=True)
        if name == "decode-thermal":
            d.add_argument("--spacing", type=float, default=None, help="lattice spacing in crop pixels")
            d.add_argument("--object-width", type=float, default=30.0, help="object width in mm")
            d.add_argument("--contact-end", type=float, default=3.0, help="seconds at which contact ended")
        d.set_defaults(func=func)

    s = sub.add_parser("sweep", help="sweep one parameter and write CSV + SVG")
    s.add_argument("--axis", required=True, choices=harness.AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--config", default=None, help="JSON config, or builtin:<name>")
    s.add_argument("--method", choices=harness.METHODS, default=None)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    sa = sub.add_parser("sweep-all", help="run every sweep listed in a config")
    sa.add_argument("--config", default=None, help="JSON config, or builtin:<name>")
    sa.add_argument("--workers", type=int, default=1)
    sa.add_argument("--out", required=True)
    sa.set_defaults(func=cmd_sweep_all)

    g = sub.add_parser("check-guidelines", help="compare sweep results with the readability guidelines")
    g.add_argument("--results", required=True)
    g.set_defaults(func=cmd_check_guidelines)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except EmbedTagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
