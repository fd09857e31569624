import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import thermal_recording
from embedtag import imaging, nirsim, thermsim
from embedtag.decode import (AccuracySeries, GridGeometry, anchor_contour, decode_nir_cube, decode_thermal_frame,
                             decode_thermal_recording, flag_outliers, read_accuracy_csv, reading_window,
                             safe_accuracy, sample_lattice, write_accuracy_csv)
from embedtag.errors import EmptyRecording, FormatError, NoAnchorContour, NoObjectContour
from embedtag.payload import BitMatrix, matrix_accuracy, random_matrix
from test_nirsim import nir_design, scan


def six_fps(accuracy, flagged=None):
    t = np.arange(1, len(accuracy) + 1) / 6.0
    return AccuracySeries(t, accuracy, flagged)


# ---------------------------------------------------------------- geometry


def test_geometry_invariants():
    with pytest.raises(ValueError):
        GridGeometry(sample_spacing=0.0)
    with pytest.raises(ValueError):
        GridGeometry(polarity="sideways")
    with pytest.raises(ValueError):
        GridGeometry(rows=0)
    assert GridGeometry(density_X=5.0, object_width_mm=30.0).spacing_for(18) == 3.0
    assert GridGeometry(sample_spacing=4.0).spacing_for(18) == 4.0


def test_anchor_is_top_left():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[6:9, 1:4] = 1
    mask[1:4, 6:9] = 1
    mask[0:2, 0:2] = 1  # 4 px, below the area filter
    contours = imaging.find_contours(mask)
    assert anchor_contour(contours).bbox == (0, 0, 1, 1)
    a = anchor_contour(contours, min_area=5)
    assert a.bbox == (6, 1, 8, 3)  # ties on x0 + y0 go to the smaller y0
    with pytest.raises(NoAnchorContour):
        anchor_contour(contours, min_area=100)


def test_lattice_sampling_reads_cell_centres():
    truth = random_matrix(3, 3, 5, 2)
    img = np.kron(truth.bits, np.ones((4, 4), dtype=np.uint8))
    anchor = anchor_contour(imaging.find_contours(img))
    assert sample_lattice(img, anchor, 4.0, 3, 3) == truth


# --------------------------------------------------------------- thermal


def test_first_post_contact_frame_decodes_exactly(hand_recording, payload):
    rec = hand_recording
    frame = rec.frames[rec.post_contact_index()]
    decoded = decode_thermal_frame(frame, GridGeometry())
    assert decoded == payload
    assert matrix_accuracy(decoded, payload) == 1.0


def test_blank_frames_have_no_object():
    r = np.random.default_rng(0)
    for _ in range(50):
        with pytest.raises(NoObjectContour):
            decode_thermal_frame(27.0 + r.normal(0, 0.05, (28, 28)), GridGeometry())
    with pytest.raises(NoObjectContour):
        decode_thermal_frame(np.full((28, 28), 27.0), GridGeometry())


def test_anchor_only_payload_decodes_to_one_bit():
    m = BitMatrix(np.eye(1, 16, dtype=bool).reshape(4, 4))
    rec = thermal_recording(m, thermsim.ThermalScenario(noise_sigma=0.0, record_duration=2.0))
    for i in range(rec.post_contact_index(), len(rec)):
        decoded = decode_thermal_frame(rec.frames[i], GridGeometry())
        assert decoded.popcount() == 1 and decoded == m


def test_decode_is_deterministic(hand_recording):
    frame = hand_recording.frames[hand_recording.post_contact_index() + 3]
    assert decode_thermal_frame(frame.copy(), GridGeometry()) == decode_thermal_frame(frame.copy(), GridGeometry())


def test_invert_flips_every_bit(hand_recording, payload):
    frame = hand_recording.frames[hand_recording.post_contact_index()]
    flipped = decode_thermal_frame(frame, GridGeometry(invert=True))
    assert flipped != payload


def test_perfect_recording_flags_nothing(hand_recording, payload):
    good = hand_recording.frames[hand_recording.post_contact_index()]
    rec = thermsim.ThermalRecording(np.arange(1, 9) / 6.0, np.repeat(good[None], 8, axis=0))
    series = decode_thermal_recording(rec, GridGeometry(), payload)
    assert np.all(series.accuracy == 1.0) and not series.flagged.any()


def test_hand_recording_perfect_then_decaying(hand_recording, payload):
    series = decode_thermal_recording(hand_recording, GridGeometry(), payload)
    i0 = hand_recording.post_contact_index()
    assert series.accuracy[i0] == 1.0
    assert series.accuracy[-12:].mean() < 1.0
    window = reading_window(series, hand_recording.contact_end)
    assert 0 < window < 60


def test_empty_recording():
    rec = thermsim.ThermalRecording(np.zeros(0), np.zeros((0, 28, 28)))
    with pytest.raises(EmptyRecording):
        decode_thermal_recording(rec, GridGeometry(), random_matrix(4, 4, 8, 0))


# ------------------------------------------------------------- flagging


def test_two_corrupted_frames_flagged():
    acc = np.array([1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0])
    flags = flag_outliers(acc)
    assert np.nonzero(flags)[0].tolist() == [2, 6]


def test_quantile_is_linear_interpolation():
    # q0.2 of [0, 1, 2, 3, 4, 5] is 1.0, so only 0 is below it
    assert flag_outliers(np.arange(6.0)).tolist() == [True] + [False] * 5


# -------------------------------------------------------------- window


def test_window_of_72_perfect_frames():
    acc = np.r_[np.ones(72), np.full(20, 0.75)]
    assert reading_window(six_fps(acc), contact_end=0.0) == pytest.approx(12.0)


def test_window_zero_when_first_frame_imperfect():
    assert reading_window(six_fps(np.r_[0.9375, np.ones(10)])) == 0.0


def test_window_skips_flagged_frames():
    acc = np.r_[np.ones(10), 0.5, np.ones(9), 0.5]
    flags = np.zeros(21, dtype=bool)
    flags[10] = True
    assert reading_window(six_fps(acc, flags)) == pytest.approx(20 / 6)


def test_window_starts_after_contact():
    acc = np.r_[np.zeros(18), np.ones(12), 0.5]
    series = six_fps(acc)
    assert reading_window(series, contact_end=3.0) == 0.0  # the frame at t=3.0 reads 0
    assert reading_window(series, contact_end=19 / 6) == pytest.approx(12 / 6)


@given(st.integers(1, 40), st.lists(st.floats(0, 1), max_size=30))
def test_window_ignores_frames_after_first_imperfect(n_good, tail):
    base = np.r_[np.ones(n_good), 0.5]
    w0 = reading_window(six_fps(base))
    w1 = reading_window(six_fps(np.r_[base, tail]))
    assert w0 == w1 == pytest.approx(n_good / 6)


def test_series_invariants():
    with pytest.raises(ValueError):
        AccuracySeries([1.0, 0.5], [1.0, 1.0])
    with pytest.raises(ValueError):
        AccuracySeries([1.0, 2.0], [1.0])


def test_accuracy_csv_roundtrip(tmp_path):
    series = six_fps([1.0, 0.9375, 0.5], [False, False, True])
    path = tmp_path / "acc.csv"
    write_accuracy_csv(series, path)
    back = read_accuracy_csv(path)
    assert np.allclose(back.times, series.times, atol=5e-4)
    assert np.array_equal(back.accuracy, series.accuracy)
    assert np.array_equal(back.flagged, series.flagged)
    path.write_text("t,accuracy,flagged\n0.1,1.0,0\n0.2,x,0\n")
    with pytest.raises(FormatError) as err:
        read_accuracy_csv(path)
    assert err.value.line == 3


# ------------------------------------------------------------------ NIR


def test_nir_blue_depth_two_exact():
    m = random_matrix(4, 4, 8, 6)
    grid, spec = nir_design(m)
    assert decode_nir_cube(scan(grid, spec, seed=6), GridGeometry()) == m


def test_nir_black_fails():
    m = random_matrix(4, 4, 8, 6)
    grid, spec = nir_design(m, object_color="black")
    assert safe_accuracy(lambda: decode_nir_cube(scan(grid, spec, seed=6), GridGeometry()), m) < 1.0


def test_nir_depth_four_fails():
    m = random_matrix(4, 4, 8, 6)
    grid, spec = nir_design(m, depth_d=4.0)
    assert safe_accuracy(lambda: decode_nir_cube(scan(grid, spec, seed=6), GridGeometry()), m) < 1.0


def test_nir_flat_cube_has_no_anchor():
    cube = scan(*nir_design(), noise_sigma=0.0)
    cube.data[:] = 0.0
    with pytest.raises(NoAnchorContour):
        decode_nir_cube(cube, GridGeometry())


def test_nir_explicit_spacing_matches_derived():
    m = random_matrix(4, 4, 8, 1)
    cube = scan(*nir_design(m), seed=1)
    assert decode_nir_cube(cube, GridGeometry(sample_spacing=5.0)) == decode_nir_cube(cube, GridGeometry()) == m


# ------------------------------------------------------------- orientation

# only the anchor corner is set, so exactly one rotation puts a set bit top-left
ONE_CORNER = BitMatrix([[1, 0, 1, 0], [0, 1, 1, 1], [1, 1, 0, 1], [0, 1, 1, 0]])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_orientation_search_recovers_rotated_scan(k):
    cube = scan(*nir_design(ONE_CORNER), seed=2)
    rotated = nirsim.SpectraCube(cube.wavelengths, np.ascontiguousarray(np.rot90(cube.data, k, axes=(0, 1))),
                                 cube.step_mm)
    assert decode_nir_cube(rotated, GridGeometry(orient=True)) == ONE_CORNER
    assert decode_nir_cube(rotated, GridGeometry()) != ONE_CORNER


def test_orientation_search_keeps_aligned_result(hand_recording, payload):
    frame = hand_recording.frames[hand_recording.post_contact_index()]
    assert decode_thermal_frame(frame, GridGeometry(orient=True)) == payload
    cube = scan(*nir_design(ONE_CORNER), seed=2)
    assert decode_nir_cube(cube, GridGeometry(orient=True)) == ONE_CORNER


def test_window_running_to_the_end_adds_one_period():
    assert reading_window(six_fps(np.ones(12))) == pytest.approx(2.0)
    assert reading_window(six_fps(np.ones(12)), frame_period=0.5) == pytest.approx(11 / 6 + 0.5)
