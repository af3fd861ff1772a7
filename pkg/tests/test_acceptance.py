"""Acceptance criteria, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (shown even
without ``-s``) before asserting.  Criterion 9 runs 25 full synthetic walks
and takes about 45 minutes on one core; select it alone with ``-m slow``.
"""
import json
import math
import sys
import time

import numpy as np
import pytest

from conftest import fourier_shift, smooth_texture
from thermal_ips.cli import build_config, make_parser, walk_config
from thermal_ips.compass import CameraModel, fuse_headings, reject_and_average
from thermal_ips.flow import FlowVector, lk_at_points
from thermal_ips.kinematics import VelocitySample, threshold_velocities
from thermal_ips.pipeline import PipelineConfig, endpoint_error, reconstruct, run, track_compass
from thermal_ips.ranger import RangeSegment, detect_turns, svr_fit, svr_predict
from thermal_ips.synth import CALIBRATED_NOISE, Scenario, gen_pan, gen_walk, write_pan


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            sys.stdout.write(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}\n")
        assert ok, detail

    return emit


def test_criterion_01_lk_shift(verdict):
    a = smooth_texture(1)
    b = fourier_shift(a, 3.0, 0.0)
    ys, xs = np.mgrid[30:210:9, 40:280:12]  # 20 x 20 = 400 points
    pts = np.column_stack([xs.ravel(), ys.ravel()]).astype(float) + 0.37
    t0 = time.perf_counter()
    vecs = lk_at_points(a, b, pts)
    elapsed = time.perf_counter() - t0
    ok_vecs = [v for v in vecs if v.valid]
    mu = float(np.mean([v.u for v in ok_vecs]))
    mv = float(np.mean([v.v for v in ok_vecs]))
    ok = len(pts) == 400 and abs(mu - 3) <= 0.1 and abs(mv) <= 0.1 and elapsed < 1.0
    verdict(1, ok, f"mean u={mu:.4f} v={mv:.4f} over {len(ok_vecs)}/400 valid, {elapsed:.3f} s")


@pytest.mark.parametrize("rotation,frames", [(30.0, 300), (90.0, 300), (360.0, 600)])
def test_criterion_02_pan_compass(verdict, rotation, frames):
    # 360 degrees in 300 frames would move 7.8 px/frame, beyond the tracker; 600 frames keep it under 4
    seq, truth = gen_pan(17, rotation, frames, CameraModel(320, 49.0), pixel_noise=CALIBRATED_NOISE.pixel)
    t0 = time.perf_counter()
    track = track_compass(seq, PipelineConfig())
    per300 = (time.perf_counter() - t0) * 300 / frames
    # frame k shows heading k * step, so the last frame's truth is truth[-1]
    err = abs(track.theta_c[-1] - truth[-1]) / truth[-1]
    ok = err <= 0.05 and per300 < 30
    verdict(2, ok, f"{rotation:g} deg pan: theta_c={track.theta_c[-1]:.3f} truth={truth[-1]:.3f} "
                   f"({100 * err:.2f}%), {per300:.1f} s per 300 frames")


def test_criterion_03_foreground_rejection(verdict):
    flows = [FlowVector(0, 0, 3.0, 0.0, True)] * 90 + [FlowVector(0, 0, 30.0, 0.0, True)] * 10
    u_mean, _ = reject_and_average(flows)
    cfg = build_config(make_parser().parse_args(["run", "--fixed-high-cut", "17", "--out", "x"]))
    pinned = [FlowVector(0, 0, 8.39, 0.0, True)] * 50
    _, adaptive = reject_and_average(pinned)
    _, fixed = reject_and_average(pinned, fixed_high_cut=cfg.fixed_high_cut)
    ok = abs(u_mean - 3.0) <= 0.5 and fixed.high_cut == 17.0 and abs(adaptive.high_cut - 16.78) < 1e-9
    verdict(3, ok, f"U_mean={u_mean}; sigma=8.39 gives 2 sigma={adaptive.high_cut:.2f}, fixed cut={fixed.high_cut}")


def test_criterion_04_fusion(verdict):
    exact = float(fuse_headings([20.0], [10.0], 0.6)[0])
    rng = np.random.default_rng(4)
    lam, c, g = rng.uniform(0, 1, 1000), rng.uniform(-720, 720, 1000), rng.uniform(-720, 720, 1000)
    fused = np.array([fuse_headings([ci], [gi], li)[0] for ci, gi, li in zip(c, g, lam)])
    convex = int(np.sum((fused >= np.minimum(c, g)) & (fused <= np.maximum(c, g))))
    verdict(4, exact == 14.0 and convex == 1000, f"Theta={exact!r}; convex on {convex}/1000 triples")


def test_criterion_05_turn_detection(verdict):
    w = 15
    missed = false_pos = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n_steps = int(rng.integers(1, 5))
        positions = 100 + 5 * w * np.arange(n_steps) + rng.integers(0, 2 * w, n_steps)
        trace = rng.normal(0.0, 0.5, int(positions[-1]) + 100)
        for p in positions:
            trace[p:] += rng.choice([-90.0, 90.0])
        found = [e.frame for e in detect_turns(trace)]
        matched = [any(abs(f - p) <= w for f in found) for p in positions]
        missed += matched.count(False)
        false_pos += sum(not any(abs(f - p) <= w for p in positions) for f in found)
    verdict(5, missed == 0 and false_pos == 0, f"100 trials: {missed} missed, {false_pos} false positives")


def test_criterion_06_robust_svr(verdict):
    t = np.linspace(0, 8, 100)
    clean = 10 - 1.25 * t
    rng = np.random.default_rng(6)
    y = clean + rng.normal(0, 0.05, t.size)
    y[rng.random(t.size) < 0.05] += 10
    t0 = time.perf_counter()
    m = svr_fit(RangeSegment(t, y))
    elapsed = time.perf_counter() - t0
    rmse = float(np.sqrt(np.mean((svr_predict(m, t) - clean) ** 2)))
    bound = bool(np.all(np.abs(m.alpha) <= m.C))
    verdict(6, rmse <= 0.2 and bound and elapsed < 2, f"RMSE={rmse:.4f} m, max|alpha|={np.abs(m.alpha).max():.3f} "
                                                      f"(C={m.C}), {elapsed:.3f} s")


def test_criterion_07_velocity_threshold(verdict):
    vals = [1.2] * 30
    vals[15] = 10.0
    s = [VelocitySample(k / 30, v, v) for k, v in enumerate(vals)]
    once = threshold_velocities(s, v_max=3.0)
    twice = threshold_velocities([VelocitySample(o.t, o.v, o.v) for o in once], v_max=3.0)
    ok = abs(once[15].v - 1.2) <= 0.05 and [o.v for o in twice] == [o.v for o in once]
    verdict(7, ok, f"spike -> {once[15].v}; idempotent={[o.v for o in twice] == [o.v for o in once]}")


def walk_error(sc):
    data = gen_walk(sc)
    cfg = PipelineConfig.from_dict(walk_config(sc, data.initial_heading))
    rec = reconstruct(data.frames, data.imu, data.ranges, cfg)
    return endpoint_error(rec.path, data.truth), rec, data


@pytest.mark.parametrize("name,waypoints", [
    ("L-walk", [(0, 0), (10, 0), (10, 10)]),
    ("square", [(0, 0), (10, 0), (10, 10), (0, 10), (0, 0)]),
])
def test_criterion_08_zero_noise_walks(verdict, name, waypoints):
    sc = Scenario(waypoints=waypoints)
    err, rec, _ = walk_error(sc)
    closure = math.hypot(rec.path[-1].x - waypoints[0][0], rec.path[-1].y - waypoints[0][1])
    measure = closure if name == "square" else err
    ratio = measure / sc.path_length
    verdict(8, ratio <= 0.02, f"{name} ({sc.path_length:g} m, {len(rec.turns)} turns): "
                              f"{'closure' if name == 'square' else 'endpoint error'} {measure:.3f} m = {100 * ratio:.2f}%")


@pytest.mark.slow
def test_criterion_09_calibrated_walks(verdict):
    waypoints = [(0, 0), (30, 0), (30, 20), (10, 20), (10, 35), (25, 35)]  # 100 m, four turns
    errors, times = [], []
    for seed in range(25):
        t0 = time.perf_counter()
        err, _, _ = walk_error(Scenario(waypoints=waypoints, noise=CALIBRATED_NOISE, seed=seed))
        times.append(time.perf_counter() - t0)
        errors.append(err)
    within = sum(e <= 2.0 for e in errors)
    ok = within >= 20 and max(times) < 300
    verdict(9, ok, f"{within}/25 trials within 2 m (need 20); errors median {np.median(errors):.2f} m, "
                   f"range {min(errors):.2f}..{max(errors):.2f} m; slowest run {max(times):.0f} s")


def test_criterion_10_low_texture(verdict, tmp_path):
    ratios = {}
    for scale in (1.0, 0.1):
        d = tmp_path / f"tex{scale}"
        frames, truth = gen_pan(5, 90.0, 300, texture_scale=scale, pixel_noise=CALIBRATED_NOISE.pixel)
        write_pan(str(d), frames, truth)
        run(PipelineConfig(frames=str(d / "frames"), compass_only=True, out=str(d / "out")))
        ratios[scale] = json.loads((d / "out" / "report.json").read_text())
    hi, lo = ratios[1.0], ratios[0.1]
    ok = (lo["inlier_ratio"] < hi["inlier_ratio"] and lo["zero_survivor_ratio"] >= 0.5
          and "zero_survivor_majority" in lo["flags"])
    verdict(10, ok, f"inlier ratio {hi['inlier_ratio']:.3f} -> {lo['inlier_ratio']:.3f}; zero-survivor frames "
                    f"{100 * lo['zero_survivor_ratio']:.0f}%, flags {lo['flags']}")
