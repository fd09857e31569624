"""Parameter sweeps over the two reading pipelines, guideline checks against
the sweep outcomes, and the static visibility table."""

from __future__ import annotations

import csv
import dataclasses
import glob
import hashlib
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import nirsim, thermsim
from .decode import GridGeometry, decode_nir_cube, decode_thermal_recording, reading_window, safe_accuracy
from .errors import EmbedTagError, FormatError, IncompleteCoverage, IoFailure, OutOfTable, SpecViolation
from .geometry import EmbedSpec, Mode, apply_mode, box_mesh, embed
from .payload import matrix_to_mesh, random_matrix

AXES = ("depth_d", "density_X", "infill_fraction", "contact_temp", "color")
METHODS = ("thermal", "nir")
CSV_FIELDS = ("method", "axis", "value", "seed", "accuracy", "window_s", "config_hash")
NIR_PITCH_MM = 0.25


# ------------------------------------------------------------------ config


def load_config(path=None):
    """Read a sweep configuration (JSON). None loads the shipped default."""
    try:
        if path is None:
            text = resources.files("embedtag.data").joinpath("default_config.json").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None


SHIPPED_CONFIGS = {"default": "default_config.json", "negative_control": "negative_control.json"}


def shipped_config(name):
    """A config shipped with the package, by short name ("default",
    "negative_control") or file name."""
    fname = SHIPPED_CONFIGS.get(name, name)
    try:
        text = resources.files("embedtag.data").joinpath(fname).read_text("utf-8")
    except OSError:
        raise IoFailure(f"no shipped config {name!r}; have {', '.join(SHIPPED_CONFIGS)}") from None
    return json.loads(text)


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _optics_from(overrides):
    optics = dict(nirsim.DEFAULT_OPTICS)
    for name, fields in (overrides or {}).items():
        base = optics.get(name, nirsim.ColorOptics(name, 0.0, nirsim.SCATTER_FLOOR))
        optics[name] = dataclasses.replace(base, name=name, **fields)
    return optics


# ------------------------------------------------------------------ sweeps


@dataclass
class SweepSpec:
    """One axis swept for one reading method, everything else held at
    ``base`` (EmbedSpec fields), ``scenario`` (thermal) or ``scan`` (NIR)."""

    method: str
    axis: str
    values: list
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    base: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    optics: dict = field(default_factory=dict)
    ones: int = 8
    corrupt_frames: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecViolation(f"method must be one of {METHODS}, got {self.method!r}")
        if self.axis not in AXES:
            raise SpecViolation(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.axis == "contact_temp" and self.method != "thermal":
            raise SpecViolation("contact_temp only applies to thermal reading")
        if not self.values:
            raise SpecViolation("sweep needs at least one value")
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        if len(self.seeds) < 1:
            raise SpecViolation("sweep needs at least one seed")
        if self.axis != "color":
            self.values = [float(v) for v in self.values]
        if self.corrupt_frames < 0:
            raise SpecViolation("corrupt_frames must be >= 0")
        if self.corrupt_frames and self.method != "thermal":
            raise SpecViolation("corrupt_frames only applies to thermal reading")

    def resolved(self):
        """Everything that determines the results, for hashing and reports."""
        return {
            "method": self.method, "axis": self.axis, "values": list(self.values),
            "seeds": list(self.seeds), "base": self.base, "scenario": self.scenario,
            "scan": self.scan, "optics": self.optics, "ones": self.ones,
            "corrupt_frames": self.corrupt_frames,
            "thermal_constants": dataclasses.asdict(thermsim.DEFAULT_CONSTANTS),
        }

    def hash(self):
        return config_hash(self.resolved())

    def tasks(self):
        return [(self, value, seed) for value in self.values for seed in self.seeds]


def sweeps_from_config(cfg, method=None, axis=None, values=None):
    """Expand a config into SweepSpecs. With ``axis`` given, a single sweep
    over ``values`` (or the config's own values for that axis)."""
    seeds = cfg.get("seeds", [0, 1, 2])
    ones = cfg.get("ones", 8)
    entries = cfg.get("sweeps", [])
    if axis is not None:
        method = method or cfg.get("method", "thermal")
        match = [e for e in entries if e["method"] == method and e["axis"] == axis]
        if values is None:
            if not match:
                raise SpecViolation(f"config has no {method} {axis} sweep and no values were given")
            values = match[0]["values"]
        entries = [{**(match[0] if match else {}), "method": method, "axis": axis, "values": values}]
    out = []
    for e in entries:
        m = e["method"]
        block = cfg.get(m, {})
        # per-sweep blocks override the method-wide ones key by key
        out.append(SweepSpec(
            method=m, axis=e["axis"], values=list(e["values"]), seeds=e.get("seeds", seeds),
            base={**block.get("spec", {}), **e.get("spec", {})},
            scenario={**block.get("scenario", {}), **e.get("scenario", {})},
            scan={**block.get("scan", {}), **e.get("scan", {})},
            optics={**block.get("optics", {}), **e.get("optics", {})}, ones=ones,
            corrupt_frames=e.get("corrupt_frames", block.get("corrupt_frames", 0)),
        ))
    return out


def _trial_spec(sweep: SweepSpec, value):
    fields = dict(sweep.base)
    fields.setdefault("mode", Mode.SURFACE_JOIN.value if sweep.method == "thermal" else Mode.SURFACE_FILL.value)
    fields.setdefault("object_color", "black" if sweep.method == "thermal" else "blue")
    if sweep.axis == "color":
        fields["object_color"] = value
    elif sweep.axis != "contact_temp":
        fields[sweep.axis] = value
    return EmbedSpec(**fields)


def embedded_grid(spec: EmbedSpec, matrix, pitch, join_reach_mm=None):
    """The default test object (a box of spec.object_dims) with the payload
    placed at depth and the fabrication mode applied."""
    obj = box_mesh((0.0, 0.0, 0.0), spec.object_dims)
    grid, _ = embed(obj, matrix_to_mesh(matrix, spec), spec, pitch=pitch, place=True)
    return apply_mode(grid, spec, join_reach_mm)


def corrupt_frames(rec: thermsim.ThermalRecording, count, seed):
    """Stand-in for camera self-calibration dropouts: ``count`` randomly
    chosen frames become flat fields at the frame mean plus sensor noise.
    Returns the new recording and the sorted corrupted indices."""
    if not 0 <= count <= len(rec):
        raise SpecViolation(f"cannot corrupt {count} of {len(rec)} frames")
    r = np.random.default_rng([seed, 0xCA1])  # own stream, camera noise is untouched
    idx = np.sort(r.choice(len(rec), size=count, replace=False))
    frames = rec.frames.copy()
    for i in idx:
        frames[i] = frames[i].mean() + r.normal(0.0, 0.05, frames[i].shape)
    return dataclasses.replace(rec, frames=frames), idx


def thermal_trial(spec: EmbedSpec, scenario: thermsim.ThermalScenario, matrix,
                  constants=thermsim.DEFAULT_CONSTANTS, corrupt=0):
    """Accuracy of the first intact frame after release and the reading
    window. With ``corrupt`` > 0 that many frames are replaced by
    calibration dropouts before decoding."""
    grid = embedded_grid(spec, matrix, constants.sim_pitch_mm, constants.join_reach_mm)
    rec = thermsim.simulate_reading(grid, spec, scenario, constants)
    bad = ()
    if corrupt:
        rec, bad = corrupt_frames(rec, corrupt, scenario.seed)
    series = decode_thermal_recording(rec, GridGeometry(*matrix.shape, density_X=spec.density_X,
                                                        object_width_mm=spec.object_dims[0]), matrix)
    i0 = rec.post_contact_index()
    # the harness knows which frames it broke; the decoder only sees its flags
    while i0 is not None and i0 in bad:
        i0 = i0 + 1 if i0 + 1 < len(rec) else None
    acc = float(series.accuracy[i0]) if i0 is not None else 0.0
    return acc, reading_window(series, rec.contact_end), series


def nir_trial(spec: EmbedSpec, scan: nirsim.ScanSettings, matrix, optics=None):
    grid = embedded_grid(spec, matrix, NIR_PITCH_MM)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cube = nirsim.simulate_scan(grid, spec, optics, scan)
    geom = GridGeometry(*matrix.shape, density_X=spec.density_X)
    return safe_accuracy(lambda: decode_nir_cube(cube, geom), matrix), cube


def run_trial(task):
    sweep, value, seed = task
    spec = _trial_spec(sweep, value)
    matrix = random_matrix(*spec.payload_shape, sweep.ones, seed)
    row = {"method": sweep.method, "axis": sweep.axis, "value": value, "seed": seed,
           "config_hash": sweep.hash()}
    try:
        if sweep.method == "thermal":
            sc = dict(sweep.scenario)
            if sweep.axis == "contact_temp":
                sc["contact_temp"] = value
            acc, window, _ = thermal_trial(spec, thermsim.ThermalScenario(seed=seed, **sc), matrix,
                                           corrupt=sweep.corrupt_frames)
            row.update(accuracy=acc, window_s=window)
        else:
            scan = nirsim.ScanSettings(seed=seed, **sweep.scan)
            acc, _ = nir_trial(spec, scan, matrix, _optics_from(sweep.optics))
            row.update(accuracy=acc, window_s=None)
    except EmbedTagError as exc:
        raise type(exc)(f"{sweep.method} {sweep.axis}={value} seed={seed}: {exc}") from exc
    return row


def run_sweep(sweep: SweepSpec, workers=1):
    """Rows in (value, seed) order whatever the worker count."""
    tasks = sweep.tasks()
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_trial, tasks))
    return [run_trial(t) for t in tasks]


def _fmt_value(v):
    return v if isinstance(v, str) else f"{v:g}"


def sweep_csv_text(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        window = "" if r["window_s"] is None else f"{r['window_s']:.3f}"
        w.writerow([r["method"], r["axis"], _fmt_value(r["value"]), r["seed"],
                    f"{r['accuracy']:.4f}", window, r["config_hash"]])
    return buf.getvalue()


def read_sweep_csv(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not lines or tuple(lines[0]) != CSV_FIELDS:
        raise FormatError(f"{path}: header must be {','.join(CSV_FIELDS)}", 1)
    rows = []
    for n, rec in enumerate(lines[1:], start=2):
        if len(rec) != len(CSV_FIELDS):
            raise FormatError(f"{path}: expected {len(CSV_FIELDS)} fields", n)
        method, axis, value, seed, acc, window, h = rec
        try:
            rows.append({
                "method": method, "axis": axis,
                "value": value if axis == "color" else float(value),
                "seed": int(seed), "accuracy": float(acc),
                "window_s": float(window) if window else None, "config_hash": h,
            })
        except ValueError:
            raise FormatError(f"{path}: non-numeric field", n) from None
    return rows


def summarize(rows):
    """{value: (mean accuracy, all seeds perfect)} in first-seen order."""
    by = {}
    for r in rows:
        by.setdefault(r["value"], []).append(r["accuracy"])
    return {v: (float(np.mean(a)), all(x == 1.0 for x in a)) for v, a in by.items()}


def plot_sweep_svg(rows, path, title, digest):
    """Accuracy against the swept value; per-seed points plus the mean."""
    import matplotlib
    from matplotlib.figure import Figure

    summary = summarize(rows)
    labels = list(summary)
    categorical = any(isinstance(v, str) for v in labels)
    xs = np.arange(len(labels)) if categorical else np.array(labels, dtype=float)
    pos = dict(zip(labels, xs))
    with matplotlib.rc_context({"svg.hashsalt": digest, "svg.fonttype": "none"}):
        fig = Figure(figsize=(5, 3.5))
        ax = fig.add_subplot()
        ax.scatter([pos[r["value"]] for r in rows], [r["accuracy"] for r in rows],
                   s=12, color="0.6", label="seed")
        ax.plot(xs, [summary[v][0] for v in labels], marker="o", color="C0", label="mean")
        if categorical:
            ax.set_xticks(xs, labels)
        ax.set_xlabel(rows[0]["axis"] if rows else "")
        ax.set_ylabel("accuracy")
        ax.set_ylim(-0.05, 1.05)
        ax.set_title(f"{title}\nconfig {digest[:12]}", fontsize=9)
        ax.legend(loc="lower left", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"config_hash={digest}"})


def write_sweep_report(sweep: SweepSpec, rows, out_dir):
    """CSV, SVG and resolved config side by side; returns the CSV path."""
    stem = f"{sweep.method}_{sweep.axis}"
    digest = sweep.hash()
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, stem + ".csv")
        with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(sweep_csv_text(rows))
        plot_sweep_svg(rows, os.path.join(out_dir, stem + ".svg"), f"{sweep.method} {sweep.axis}", digest)
        with open(os.path.join(out_dir, stem + ".json"), "w", encoding="utf-8") as fh:
            json.dump({"config_hash": digest, "config": sweep.resolved()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out_dir}: {exc}") from exc
    return csv_path


def run_config(cfg, out_dir, workers=1, method=None, axis=None, values=None):
    paths = []
    for sweep in sweeps_from_config(cfg, method, axis, values):
        paths.append(write_sweep_report(sweep, run_sweep(sweep, workers), out_dir))
    if "guidelines" in cfg:
        try:
            with open(os.path.join(out_dir, "guidelines.json"), "w", encoding="utf-8") as fh:
                json.dump(cfg["guidelines"], fh, indent=2, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            raise IoFailure(f"cannot write guidelines to {out_dir}: {exc}") from exc
    return paths


# -------------------------------------------------------------- guidelines


@dataclass(frozen=True)
class GuidelineRow:
    """Readability limits of one method. ``max_infill`` None means any
    infill; ``colors`` is "any" or "non-black"."""

    method: str
    min_density_mm: float
    max_depth_mm: float
    max_infill: float | None
    colors: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.min_density_mm > 0 and self.max_depth_mm > 0):
            raise ValueError("thresholds must be positive")
        if self.max_infill is not None and not 0 < self.max_infill <= 1:
            raise ValueError("max_infill must be in (0, 1]")
        if self.colors not in ("any", "non-black"):
            raise ValueError("colors must be 'any' or 'non-black'")


DEFAULT_GUIDELINES = (
    GuidelineRow("thermal", 5.0, 1.0, 0.20, "any"),
    GuidelineRow("nir", 3.0, 3.0, None, "non-black"),
)

GUIDELINE_AXES = ("density_X", "depth_d", "infill_fraction", "color")


@dataclass
class Verdict:
    method: str
    parameter: str
    rule: str
    observed: str
    passed: bool

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.method:<8} {self.parameter:<16} rule {self.rule:<16} observed {self.observed}"


def _readable(pred_inside, summary, describe):
    inside = [v for v in summary if pred_inside(v)]
    outside = [v for v in summary if not pred_inside(v)]
    ok = all(summary[v][1] for v in inside) and not any(summary[v][1] for v in outside)
    readable = [v for v in summary if summary[v][1]]
    return ok, describe(readable), inside, outside


def check_guidelines(results, guidelines=DEFAULT_GUIDELINES):
    """Compare every guideline threshold with the sweep outcomes.

    ``results`` maps (method, axis) to sweep rows. A value counts as
    readable when every seed decodes perfectly; a row passes when all values
    on the permitted side are readable and none beyond it are.
    """
    verdicts = []
    for g in guidelines:
        missing = [a for a in GUIDELINE_AXES if (g.method, a) not in results]
        if missing:
            raise IncompleteCoverage(f"no {g.method} sweep for {', '.join(missing)}")
        checks = [
            ("density_X", f">= {g.min_density_mm:g} mm", lambda v, g=g: v >= g.min_density_mm - 1e-9, None),
            ("depth_d", f"<= {g.max_depth_mm:g} mm", lambda v, g=g: v <= g.max_depth_mm + 1e-9, None),
            ("infill_fraction", "any" if g.max_infill is None else f"<= {g.max_infill:g}",
             (lambda v: True) if g.max_infill is None else (lambda v, g=g: v <= g.max_infill + 1e-9), None),
            ("color", g.colors, (lambda v: True) if g.colors == "any" else (lambda v: v != "black"), None),
        ]
        for axis, rule, inside, _ in checks:
            summary = summarize(results[(g.method, axis)])
            ok, observed, ins, outs = _readable(
                inside, summary,
                lambda vals: "readable: " + (", ".join(_fmt_value(v) for v in vals) if vals else "none"))
            bounded = not rule.startswith("any")
            if not ins or (bounded and not outs):
                raise IncompleteCoverage(
                    f"{g.method} {axis} sweep does not bracket the rule {rule}")
            verdicts.append(Verdict(g.method, axis, rule, observed, ok))
    return verdicts


def load_results(directory):
    """Sweep rows from every report CSV in a results directory, keyed by
    (method, axis)."""
    paths = sorted(glob.glob(os.path.join(directory, "*.csv")))
    if not paths:
        raise IncompleteCoverage(f"no sweep results in {directory}")
    results = {}
    for p in paths:
        for r in read_sweep_csv(p):
            results.setdefault((r["method"], r["axis"]), []).append(r)
    return results


def load_guidelines(directory):
    path = os.path.join(directory, "guidelines.json")
    if not os.path.exists(path):
        return DEFAULT_GUIDELINES
    try:
        with open(path, encoding="utf-8") as fh:
            return tuple(GuidelineRow(**row) for row in json.load(fh))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise FormatError(f"bad guidelines.json: {exc}") from None


# -------------------------------------------------------------- visibility

_VIS = {"V": "Visible", "U": "Unobtrusive", "I": "Invisible"}
# surface-fill at d = 1, 2, 3 mm, then surface-join (printed at d = 1 mm)
_VISIBILITY = {
    "blue": "VIIU",
    "red": "VIIU",
    "orange": "VUIV",
    "gray": "VIIV",
    "black": "IIII",
}


def visibility_lookup(color, mode, depth):
    """Observed visibility of an embedded pattern by color, mode and depth."""
    row = _VISIBILITY.get(str(color).lower())
    if row is None:
        raise OutOfTable(f"no visibility data for color {color!r}")
    try:
        mode = Mode(mode)
    except ValueError:
        raise OutOfTable(f"unknown mode {mode!r}") from None
    depths = (1.0, 2.0, 3.0) if mode is Mode.SURFACE_FILL else (1.0,)
    hit = [i for i, d in enumerate(depths) if abs(float(depth) - d) < 1e-9]
    if not hit:
        raise OutOfTable(f"no visibility data for {mode.value} at d={depth}")
    return _VIS[row[hit[0]] if mode is Mode.SURFACE_FILL else row[3]]
