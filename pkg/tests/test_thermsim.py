import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from conftest import CONSTANTS, thermal_grid, thermal_recording
from embedtag import thermsim as ts
from embedtag.decode import GridGeometry, decode_thermal_frame, safe_accuracy
from embedtag.errors import FormatError, SpecViolation, UnstableDt
from embedtag.geometry import EMPTY, INFO, EmbedSpec
from embedtag.harness import thermal_trial
from embedtag.payload import random_matrix


def safe_dt(solver):
    return min(solver.dt_max, solver.dt_stable())


def random_props(r, shape, active_frac=1.0):
    k = r.uniform(0.02, 0.2, shape)
    rho_c = r.uniform(1e5, 3e6, shape)
    active = r.random(shape) < active_frac
    active.flat[0] = True
    return ts.HeatProps(k, rho_c, active)


# --------------------------------------------------------------- materials


def test_mixture_endpoints_and_example():
    assert ts.effective_props(1.0).k == ts.PLA.k
    assert ts.effective_props(0.10).k == pytest.approx(0.1 * 0.13 + 0.9 * 0.026)
    assert ts.effective_props(0.10).k == pytest.approx(0.0364)
    mix = ts.effective_props(0.4)
    assert mix.rho_c == pytest.approx(0.4 * ts.PLA.rho_c + 0.6 * ts.AIR.rho_c)


def test_material_props_positive():
    with pytest.raises(ValueError):
        ts.MaterialProps(k=0.0, rho=1.0, c=1.0)


@pytest.mark.parametrize("f", [0.1, 0.4, 1.0])
def test_material_grid_labels(f, payload):
    grid, spec = thermal_grid(payload, infill_fraction=f)
    props = ts.material_grid(grid, spec)
    info = grid.cells == INFO
    material = grid.cells != EMPTY
    assert np.all(props.k[info] == ts.PLA.k)
    assert np.all(props.k[~material] == ts.AIR.k)
    assert np.array_equal(props.active, material)
    if f == 1.0:
        assert np.all(props.k[material] == ts.PLA.k)
    else:
        eff = ts.effective_props(f)
        assert np.isclose(props.k[material], eff.k).any()


def test_infill_core_and_skin():
    grid, spec = thermal_grid(random_matrix(4, 4, 8, 0), infill_fraction=0.1)
    props = ts.material_grid(grid, spec)
    i, j, k = (n // 2 for n in grid.dims)
    assert props.k[i, j, k] == pytest.approx(0.0364)  # deep interior is infill
    assert props.k[i, j, 1] == ts.PLA.k  # bottom skin


# ----------------------------------------------------------------- solver


def test_uniform_field_unchanged():
    props = random_props(np.random.default_rng(0), (6, 5, 4), 0.8)
    solver = ts.HeatSolver(props, 0.5)
    T = np.full(props.k.shape, 31.5)
    out = solver.step(T, solver.dt_max)
    assert np.array_equal(out[props.active], T[props.active])


def test_uniform_field_unchanged_with_convection_at_ambient():
    props = ts.HeatProps.uniform((4, 4, 4), ts.PLA)
    out = ts.step_heat(np.full((4, 4, 4), 27.0), props, 0.001, pitch_mm=0.5, h=10.0, ambient=27.0)
    assert np.all(out == 27.0)


def test_two_cell_relaxation_closed_form():
    k, rho_c, p = 0.13, ts.PLA.rho_c, 0.5e-3
    props = ts.HeatProps.uniform((2, 1, 1), ts.PLA)
    solver = ts.HeatSolver(props, 0.5)
    dt = 0.8 * solver.dt_max
    r = dt * k / (rho_c * p * p)
    T = np.array([40.0, 20.0]).reshape(2, 1, 1)
    mean = T.mean()
    for n in range(1, 51):
        T = solver.step(T, dt)
        expected = (40.0 - 20.0) * (1 - 2 * r) ** n
        assert T[0, 0, 0] - T[1, 0, 0] == pytest.approx(expected, rel=1e-9)
        assert T.mean() == pytest.approx(mean, rel=1e-12)


def test_stability_bound_boundary():
    props = random_props(np.random.default_rng(1), (5, 5, 5))
    bound = float(np.min(props.rho_c * (0.5e-3) ** 2 / (6 * props.k)))
    solver = ts.HeatSolver(props, 0.5)
    assert solver.dt_max == pytest.approx(bound, rel=1e-15)
    T = np.random.default_rng(2).random(props.k.shape)
    solver.step(T, bound)
    with pytest.raises(UnstableDt):
        solver.step(T, math.nextafter(bound, 1.0))
    with pytest.raises(UnstableDt):
        ts.step_heat(T, props, 1.01 * bound, pitch_mm=0.5)


def test_enthalpy_conserved_per_step():
    r = np.random.default_rng(3)
    props = random_props(r, (7, 6, 5), 0.7)
    solver = ts.HeatSolver(props, 0.5)
    T = r.uniform(10, 60, props.k.shape)
    dt = safe_dt(solver)
    for _ in range(20):
        before = ts.enthalpy(T, props, 0.5)
        T = solver.step(T, dt)
        assert abs(ts.enthalpy(T, props, 0.5) - before) <= 1e-9 * abs(before)


def enthalpy_drift(steps=10_000, seed=4):
    r = np.random.default_rng(seed)
    props = random_props(r, (8, 8, 8), 0.8)
    solver = ts.HeatSolver(props, 0.5)
    T = r.uniform(10, 60, props.k.shape)
    e0 = ts.enthalpy(T, props, 0.5)
    dt = safe_dt(solver)
    for _ in range(steps):
        T = T + dt * solver.rate(T)
    return abs(ts.enthalpy(T, props, 0.5) - e0) / abs(e0)


def test_enthalpy_drift_over_many_steps():
    assert enthalpy_drift() < 1e-6


@given(st.integers(0, 10_000), st.floats(0.1, 1.0))
@settings(max_examples=25)
def test_maximum_principle(seed, frac):
    r = np.random.default_rng(seed)
    props = random_props(r, (5, 4, 6), 0.9)
    solver = ts.HeatSolver(props, 0.5)
    T = r.uniform(-5, 80, props.k.shape)
    out = solver.step(T, frac * safe_dt(solver))
    act = props.active
    assert out[act].min() >= T[act].min() - 1e-9
    assert out[act].max() <= T[act].max() + 1e-9


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_maximum_principle_at_the_bound_for_uniform_material(seed):
    r = np.random.default_rng(seed)
    props = ts.HeatProps.uniform((5, 5, 5), ts.PLA)
    solver = ts.HeatSolver(props, 0.5)
    T = r.uniform(0, 100, props.k.shape)
    out = solver.step(T, solver.dt_max)
    assert T.min() - 1e-9 <= out.min() and out.max() <= T.max() + 1e-9


def erf_profile_error(pitch_mm=0.05, cells=400, times=(1.0, 5.0, 20.0, 60.0)):
    """Largest |simulated - analytic| / |T0 - Ts| over x >= 2 voxels for a
    1D column whose top face is held at Ts from t = 0."""
    T0, Ts = 27.0, 35.0
    props = ts.HeatProps.uniform((1, 1, cells), ts.PLA)
    solver = ts.HeatSolver(props, pitch_mm)
    alpha = ts.PLA.k / ts.PLA.rho_c
    x = (cells - 1 - np.arange(cells) + 0.5) * pitch_mm * 1e-3
    T = np.full((1, 1, cells), T0)
    t, worst = 0.0, 0.0
    dt_cap = 0.9 * solver.dt_stable(contact=True)
    for target in times:
        n = math.ceil((target - t) / dt_cap)
        dt = (target - t) / n
        for _ in range(n):
            T = T + dt * solver.rate(T, Ts)
        t = target
        analytic = Ts + (T0 - Ts) * erf(x / (2 * math.sqrt(alpha * t)))
        far = x >= 2 * pitch_mm * 1e-3
        worst = max(worst, float(np.max(np.abs(T.ravel() - analytic)[far]) / abs(T0 - Ts)))
    # the column must behave as semi-infinite: the far end is untouched
    assert abs(T.ravel()[0] - T0) < 1e-6
    return worst


def test_erf_profile_short_window():
    assert erf_profile_error(times=(1.0, 5.0)) < 0.02


# --------------------------------------------------------------- recording


def test_frame_count_and_contact_frames(hand_recording):
    rec = hand_recording
    assert abs(len(rec) - 6 * (60 + 3)) <= 1
    assert rec.contact_end == 3.0
    assert np.all(np.diff(rec.times) > 0)
    pre = rec.frames[rec.times < 3.0 - 1e-9]
    assert len(pre) == 17
    # contact frames show the warm source over the object footprint
    assert np.all(pre[:, rec.footprint_mask].mean(axis=1) > 33.0)


def test_pattern_contrast_after_release(hand_recording):
    rec = hand_recording
    i = rec.post_contact_index()
    contrast = ts.pattern_contrast(rec.frames[i], rec.info_mask, rec.footprint_mask)
    assert abs(contrast) >= 0.5


def contrast_1s_after_release(**spec_fields):
    rec = thermal_recording(random_matrix(4, 4, 8, 0),
                            ts.ThermalScenario(noise_sigma=0.0, record_duration=1.5), **spec_fields)
    i = int(np.argmin(np.abs(rec.times - (rec.contact_end + 1.0))))
    return ts.pattern_contrast(rec.frames[i], rec.info_mask, rec.footprint_mask)


def test_contrast_non_increasing_in_depth():
    values = [abs(contrast_1s_after_release(depth_d=d)) for d in (1.0, 1.5, 2.0, 3.0)]
    assert all(a >= b for a, b in zip(values, values[1:])), values


def test_contrast_non_increasing_in_infill():
    values = [abs(contrast_1s_after_release(infill_fraction=f)) for f in (0.1, 0.2, 0.4, 0.8)]
    assert all(a >= b for a, b in zip(values, values[1:])), values


def test_ambient_contact_gives_no_readable_pattern():
    m = random_matrix(4, 4, 8, 0)
    rec = thermal_recording(m, ts.ThermalScenario(contact_temp=27.0, record_duration=1.0))
    spread = rec.frames.max(axis=(1, 2)) - rec.frames.min(axis=(1, 2))
    assert np.all(spread < 10 * 0.05)  # noise only
    geom = GridGeometry()
    assert all(safe_accuracy(lambda f=f: decode_thermal_frame(f, geom), m) < 1.0 for f in rec.frames)


def test_recording_deterministic():
    m = random_matrix(4, 4, 8, 2)
    sc = ts.ThermalScenario(record_duration=1.0, seed=9)
    a, b = thermal_recording(m, sc), thermal_recording(m, sc)
    assert a.frames.tobytes() == b.frames.tobytes()
    c = thermal_recording(m, ts.ThermalScenario(record_duration=1.0, seed=10))
    assert a.frames.tobytes() != c.frames.tobytes()


def test_surface_fill_warns(payload):
    grid, spec = thermal_grid(payload, mode="surface-fill")
    with pytest.warns(UserWarning):
        ts.simulate_reading(grid, spec, ts.ThermalScenario(record_duration=0.5))


@pytest.mark.parametrize("fields", [dict(record_duration=0.0), dict(frame_rate=0.0),
                                    dict(contact_duration=-1.0), dict(noise_sigma=-0.1)])
def test_scenario_validation(fields, payload):
    grid, spec = thermal_grid(payload)
    with pytest.raises(SpecViolation):
        ts.simulate_reading(grid, spec, ts.ThermalScenario(**fields))


def test_camera_pixel_must_tile_the_grid(payload):
    import dataclasses
    grid, spec = thermal_grid(payload)
    odd = dataclasses.replace(CONSTANTS, camera_pixel_mm=1.2)
    with pytest.raises(SpecViolation):
        ts.simulate_reading(grid, spec, ts.ThermalScenario(record_duration=0.5), odd)


def test_recording_invariants():
    with pytest.raises(ValueError):
        ts.ThermalRecording([0.0, 0.0], np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        ts.ThermalRecording([0.0, 1.0], np.array([np.zeros((3, 3)), np.full((3, 3), np.inf)]))


# --------------------------------------------------------------------- CSV


def small_recording():
    r = np.random.default_rng(0)
    return ts.ThermalRecording(np.array([0.5, 1.0, 1.5]), r.uniform(20, 40, (3, 4, 5)))


def test_csv_roundtrip(tmp_path):
    rec = small_recording()
    path = tmp_path / "rec.csv"
    ts.write_thermal_csv(rec, path)
    back = ts.read_thermal_csv(path)
    assert np.array_equal(back.times, rec.times)
    assert np.max(np.abs(back.frames - rec.frames)) <= 1e-3 / 2 + 1e-9


def test_csv_layout(tmp_path):
    rec = ts.ThermalRecording([0.25], np.array([[[1.0, 2.0], [3.0, 4.5]]]))
    path = tmp_path / "rec.csv"
    ts.write_thermal_csv(rec, path)
    assert path.read_text() == "rows,2,cols,2\nt,0.250\n1.000,2.000\n3.000,4.500\n"


def write_lines(tmp_path, lines):
    path = tmp_path / "bad.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_csv_decreasing_timestamps(tmp_path):
    path = write_lines(tmp_path, ["rows,1,cols,2", "t,1.000", "1,2", "", "t,0.500", "3,4"])
    with pytest.raises(FormatError) as err:
        ts.read_thermal_csv(path)
    assert err.value.line == 5


def test_csv_empty_frame_block(tmp_path):
    path = write_lines(tmp_path, ["rows,2,cols,2", "t,1.000", "", "t,2.000", "1,2", "3,4"])
    with pytest.raises(FormatError) as err:
        ts.read_thermal_csv(path)
    assert err.value.line == 2


@pytest.mark.parametrize("lines,line", [
    (["rows,2,cols"], 1),
    (["rows,x,cols,2"], 1),
    (["rows,1,cols,2", "t,1.000", "1,abc"], 3),
    (["rows,1,cols,2", "t,1.000", "1,2,3"], 3),
    (["rows,1,cols,2", "1,2"], 2),
    (["rows,1,cols,2", "t,1.000", "1,2", "t,2.000", "1,2"], 4),
])
def test_csv_malformed(tmp_path, lines, line):
    with pytest.raises(FormatError) as err:
        ts.read_thermal_csv(write_lines(tmp_path, lines))
    assert err.value.line == line


def test_noise_free_window_shrinks_with_contact_temperature():
    """Stronger convection at a larger surface excess ends the window sooner."""
    for seed in (0, 1):
        m = random_matrix(4, 4, 8, seed)
        windows = [thermal_trial(EmbedSpec(), ts.ThermalScenario(contact_temp=t, seed=seed, noise_sigma=0.0), m)[1]
                   for t in (40.0, 50.0)]
        assert 0 < windows[1] < windows[0]
