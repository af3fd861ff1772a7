import json
import os

import numpy as np
import pytest

from conftest import fourier_shift
from thermal_ips.compass import CameraModel
from thermal_ips.errors import ParameterError
from thermal_ips.sensorio import load_frames, load_imu, load_ranges, sample_gyro_heading
from thermal_ips.synth import (
    CALIBRATED_NOISE,
    NoiseModel,
    Panorama,
    Scenario,
    Timeline,
    gen_pan,
    gen_walk,
    load_scenario,
    load_truth,
    save_scenario,
    write_pan,
    write_walk,
)

L_WALK = [(0, 0), (10, 0), (10, 10)]


def test_zero_rotation_identical_frames():
    frames, truth = gen_pan(3, 0.0, 5)
    assert np.all(truth == 0)
    assert all(np.array_equal(f.pixels, frames[0].pixels) for f in frames)


def test_pan_shift_per_frame():
    cam = CameraModel(320, 49)
    _, truth = gen_pan(0, 90.0, 300, cam)
    shift = (truth[1] - truth[0]) * cam.nx / cam.beta
    assert shift == pytest.approx(90 * 320 / 49 / 300)
    assert shift == pytest.approx(1.959, abs=5e-4)
    pano = Panorama(0, cam)
    a, b = pano.render(0.0), pano.render(float(truth[1]))
    # positive heading change moves content right by the same amount;
    # recover the image shift by Gauss-Newton on the interior columns
    est = 0.0
    for _ in range(10):
        c = fourier_shift(a, est, 0.0)
        grad = np.gradient(c, axis=1)[:, 40:-40]
        est += np.sum((c[:, 40:-40] - b[:, 40:-40]) * grad) / np.sum(grad * grad)
    assert est == pytest.approx(shift, abs=0.01)


def test_pan_deterministic():
    a, _ = gen_pan(11, 45.0, 80, pixel_noise=2.0)
    b, _ = gen_pan(11, 45.0, 80, pixel_noise=2.0)
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a, b))


def test_pan_too_fast():
    with pytest.raises(ParameterError):
        gen_pan(0, 360.0, 50)


def test_low_texture_has_less_contrast():
    hi, _ = gen_pan(0, 1.0, 3)
    lo, _ = gen_pan(0, 1.0, 3, texture_scale=0.1)
    assert lo[0].pixels.std() < 0.2 * hi[0].pixels.std()


def test_scenario_validation():
    with pytest.raises(ParameterError):
        Scenario(waypoints=[(0, 0)])
    with pytest.raises(ParameterError):
        Scenario(waypoints=[(0, 0), (0.5, 0)])
    with pytest.raises(ParameterError):
        Scenario(waypoints=[(0, 0), (5, 0)], speed=0)
    with pytest.raises(ParameterError):
        NoiseModel(lidar=-1)
    with pytest.raises(ParameterError):
        Scenario(waypoints=[(0, 0), (5, 0), (5, 5)], turn_rate=90)


def test_straight_walk_construction():
    sc = Scenario(waypoints=[(0, 0), (10, 0)], pause=0.0, wall_margin=0.0)
    data = gen_walk(sc)
    xs = np.array([p.x for p in data.truth])
    ts = np.array([p.t for p in data.truth])
    assert ts[-1] == pytest.approx(8.0)
    assert np.allclose([p.y for p in data.truth], 0)
    assert np.allclose(xs, 1.25 * ts)
    assert data.ranges.distance[0] == pytest.approx(10.0)
    assert data.ranges.distance[-1] == pytest.approx(10.0 - 1.25 * data.ranges.t[-1])
    assert np.all(np.diff(data.ranges.distance) <= 0)
    assert np.mean(np.diff(data.ranges.t)) == pytest.approx(1 / 60, rel=0.05)


def test_l_walk_gyro_and_reset():
    data = gen_walk(Scenario(waypoints=L_WALK))
    heading = sample_gyro_heading(data.imu, [0.0, data.imu.t[-1]])
    assert heading[-1] == pytest.approx(90.0, abs=1e-9)
    jumps = np.diff(data.ranges.distance)
    assert np.sum(jumps > 1.0) == 1
    assert len(data.turn_times) == 1
    assert data.truth[-1].x == pytest.approx(10) and data.truth[-1].y == pytest.approx(10)


def test_timeline_phases():
    tl = Timeline(Scenario(waypoints=L_WALK))
    assert [p.kind for p in tl.phases] == ["stand", "leg", "turn", "leg", "stand"]
    assert tl.duration == pytest.approx(1 + 8 + 6 + 8 + 1)
    assert tl.turn_times == [pytest.approx(12.0)]


def test_walk_determinism():
    sc = Scenario(waypoints=L_WALK, noise=CALIBRATED_NOISE, seed=4)
    a, b = gen_walk(sc), gen_walk(sc)
    assert np.array_equal(a.imu.gyro, b.imu.gyro)
    assert np.array_equal(a.ranges.distance, b.ranges.distance)
    for k in (0, 250, len(a.frames) - 1):
        assert np.array_equal(a.frames[k].pixels, b.frames[k].pixels)


def test_calibrated_preset():
    n = CALIBRATED_NOISE
    assert (n.pixel, n.gyro_noise, n.gyro_bias, n.lidar, n.outlier_rate) == (2.0, 0.5, 0.1, 0.05, 0.05)


def test_written_walk_passes_loaders(tmp_path):
    sc = Scenario(waypoints=[(0, 0), (3, 0), (3, 2)], noise=CALIBRATED_NOISE, seed=1)
    data = gen_walk(sc)
    paths = write_walk(str(tmp_path), data)
    frames = load_frames(paths["frames"])
    assert len(frames) == len(data.frames)
    assert np.array_equal(frames[7].pixels, data.frames[7].pixels)
    imu = load_imu(paths["imu"])
    assert np.array_equal(imu.gyro, data.imu.gyro)
    lidar = load_ranges(paths["lidar"])
    assert np.array_equal(lidar.t, data.ranges.t)
    truth = load_truth(paths["truth"])
    assert truth == data.truth
    assert load_scenario(paths["scenario"]) == sc


def test_written_pan_passes_loader(tmp_path):
    frames, truth = gen_pan(2, 30.0, 60)
    write_pan(str(tmp_path), frames, truth)
    loaded = load_frames(os.path.join(tmp_path, "frames"))
    assert [f.t for f in loaded] == [f.t for f in frames]


def test_scenario_json_round_trip(tmp_path):
    sc = Scenario(waypoints=L_WALK, noise=NoiseModel(pixel=1.0), speed=1.0, seed=9)
    p = tmp_path / "sc.json"
    save_scenario(str(p), sc)
    assert load_scenario(str(p)) == sc
    p.write_text(json.dumps({"waypoints": L_WALK, "noise": "calibrated"}))
    assert load_scenario(str(p)).noise == CALIBRATED_NOISE
    p.write_text(json.dumps({"waypoints": L_WALK, "colour": "red"}))
    with pytest.raises(ParameterError):
        load_scenario(str(p))
