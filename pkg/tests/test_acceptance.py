"""Acceptance gate: every criterion at its stated tolerance and budget.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Scenes are synthetic and seeded; each test also enforces its
runtime budget.
"""

import json
import time

import numpy as np
import pytest

from drivewatch.camera_geometry import WorldPoint, backproject_ground, project_point
from drivewatch.behavior import Thresholds, classify_rash
from drivewatch.config import load_config
from drivewatch.detection import HogParams, iou, score_template
from drivewatch.errors import NoConsensusError
from drivewatch.imagekit import ImageF32, build_pyramid
from drivewatch.lane_detection import RansacParams, detect_lanes, ransac_parabola
from drivewatch.optical_flow import FlowField, FlowParams, estimate_flow, flow_energy
from drivewatch.pipeline import run_pipeline

from synth import (
    car_bbox_for_ground,
    default_bev,
    draw_box_into,
    make_calibration,
    random_calibration,
    render_road,
    smooth_blob_image,
    write_calibration,
    write_config,
    write_detections,
    write_sequence,
)
from test_behavior import perturb_monotone, random_features
from test_detection import build_rect_template, canonical_score
from test_lane_detection import make_noisy_parabola_points
from test_optical_flow import brute_force_energy


@pytest.fixture(scope="module", autouse=True)
def warm_solver():
    """One tiny run so JIT compilation stays out of the measured budgets."""
    img = ImageF32(np.random.default_rng(0).uniform(size=(32, 32)))
    estimate_flow(img, img, FlowParams(pyramid_levels=1, solver_iterations_per_warp=2))


def report(name, elapsed, budget):
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s of {budget:.0f}s budget)")


def test_flow_energy_matches_brute_force_oracle():
    budget = 5.0
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    params = FlowParams()
    for _ in range(100):
        h = int(rng.integers(4, 17))
        w = int(rng.integers(4, 17))
        i1 = rng.uniform(size=(h, w))
        i2 = rng.uniform(size=(h, w))
        flow = FlowField(
            rng.uniform(-2, 2, size=(h, w)).astype(np.float32),
            rng.uniform(-2, 2, size=(h, w)).astype(np.float32),
        )
        fast = flow_energy(ImageF32(i1), ImageF32(i2), flow, params)
        slow = brute_force_energy(
            i1,
            i2,
            flow.u.astype(np.float64),
            flow.v.astype(np.float64),
            params.smoothness_lambda,
            params.penalty_epsilon,
        )
        assert fast == pytest.approx(slow, rel=1e-6)
    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report("flow energy oracle (100 instances, rel 1e-6)", elapsed, budget)


def test_flow_recovery_on_synthetic_shifts():
    budget = 60.0
    start = time.perf_counter()
    params = FlowParams()
    interior = (slice(12, -12), slice(12, -12))

    for case in range(10):
        rng = np.random.default_rng(200 + case)
        scene = smooth_blob_image(rng, size=128)
        dx = case % 3 + 1
        flow = estimate_flow(scene(0, 0), scene(dx, 0), params)
        epe = np.hypot(flow.u[interior] - dx, flow.v[interior])
        assert epe.mean() < 0.2, f"case {case}: mean EPE {epe.mean():.3f} for dx={dx}"

    for case in range(2):
        rng = np.random.default_rng(300 + case)
        img = smooth_blob_image(rng, size=128)(0, 0)
        flow = estimate_flow(img, img, params)
        assert max(np.abs(flow.u).max(), np.abs(flow.v).max()) <= 0.1

    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report("flow recovery (10 shifted + 2 static images)", elapsed, budget)


def test_geometry_round_trip_and_worked_example():
    budget = 1.0
    start = time.perf_counter()

    from drivewatch.camera_geometry import Calibration, Extrinsics, Intrinsics

    calib = Calibration(
        intrinsics=Intrinsics(500.0, 500.0, 0.0, 320.0, 240.0),
        extrinsics=Extrinsics(np.eye(3), np.zeros(3)),
        image_width=640,
        image_height=480,
    )
    assert project_point(WorldPoint(1, 2, 4), calib) == (445.0, 490.0)

    rng = np.random.default_rng(400)
    worst = 0.0
    for _ in range(10):
        cal = random_calibration(rng)
        for u, w in zip(rng.uniform(-8, 8, 1000), rng.uniform(5, 60, 1000)):
            pixel = project_point(WorldPoint(u, 0.0, w), cal)
            back = backproject_ground(pixel, cal)
            worst = max(worst, abs(back.u - u), abs(back.w - w))
    assert worst < 1e-6

    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report(f"geometry round-trip (sup error {worst:.2e} m)", elapsed, budget)


def test_ransac_recovery_and_determinism():
    budget = 10.0
    start = time.perf_counter()
    truth = (0.01, 0.5, 10.0)

    successes = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        pts, _ = make_noisy_parabola_points(rng, *truth)
        params = RansacParams(iterations=500, inlier_threshold=0.15, min_inliers=12, seed=seed)
        try:
            parab, _ = ransac_parabola(pts, params)
        except NoConsensusError:
            continue
        if (
            abs(parab.a - truth[0]) < 0.002
            and abs(parab.b - truth[1]) < 0.05
            and abs(parab.c - truth[2]) < 0.3
        ):
            successes += 1
    assert successes >= 48

    rng = np.random.default_rng(2000)
    pts, _ = make_noisy_parabola_points(rng, *truth)
    params = RansacParams(iterations=400, inlier_threshold=0.15, min_inliers=12, seed=9)
    p1, i1 = ransac_parabola(pts, params)
    p2, i2 = ransac_parabola(pts, params)
    assert (p1.a, p1.b, p1.c) == (p2.a, p2.b, p2.c)
    assert np.array_equal(i1, i2)

    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report(f"RANSAC recovery ({successes}/50, bitwise deterministic)", elapsed, budget)


def test_lane_pipeline_on_rendered_scenes():
    budget_per_scene = 30.0
    calib = make_calibration()  # 640x480
    ransac = RansacParams(seed=11)

    start = time.perf_counter()
    straight = render_road(calib, [(0, 0, -1.8), (0, 0, 1.8)], color=True)
    model = detect_lanes(straight, calib, default_bev(), ransac)
    straight_elapsed = time.perf_counter() - start
    assert model.left is not None and model.right is not None
    assert abs(model.left.c - (-1.8)) < 0.2
    assert abs(model.right.c - 1.8) < 0.2
    assert abs(model.left.a) < 0.002 and abs(model.right.a) < 0.002
    assert straight_elapsed < budget_per_scene

    start = time.perf_counter()
    curved = render_road(calib, [(0.004, 0, -1.8), (0.004, 0, 1.8)], color=True)
    model = detect_lanes(curved, calib, default_bev(), ransac)
    curved_elapsed = time.perf_counter() - start
    assert model.left is not None and model.right is not None
    assert abs(model.left.a - 0.004) < 0.002
    assert abs(model.right.a - 0.004) < 0.002
    assert curved_elapsed < budget_per_scene

    report(
        "lane pipeline (straight offsets, curved curvature)",
        straight_elapsed + curved_elapsed,
        2 * budget_per_scene,
    )


def test_detector_plant_and_recover():
    budget = 30.0
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    params = HogParams()
    template = build_rect_template(rng, params)
    threshold = 0.6 * canonical_score(template, params)

    hits = 0
    for _ in range(10):
        rx = int(rng.integers(40, 240))
        ry = int(rng.integers(40, 160))
        scene = np.full((240, 320), 0.15)
        scene[ry : ry + 40, rx : rx + 48] = 0.9
        pyr = build_pyramid(ImageF32(scene), 2, 0.5)
        dets = score_template(pyr, template, params, threshold)
        window = (rx - 16, ry - 20, 80, 80)
        if len(dets) == 1 and iou(dets[0].bbox, window) >= 0.5:
            hits += 1
    assert hits >= 9

    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report(f"detector plant-and-recover ({hits}/10)", elapsed, budget)


# ---------------------------------------------------------------------------
# end-to-end scenes

SCENE_CALIB_KW = dict(focal=260.0, width=320, height=240, cam_height=1.5, pitch_deg=8.0)
N_FRAMES = 60


def _weave_u(frame):
    """Ego-lane car drifting out over the right boundary and back."""
    if frame < 10:
        return 0.0
    if frame < 26:
        return 2.6 * (frame - 10) / 16.0
    if frame < 32:
        return 2.6
    if frame < 48:
        return 2.6 * (1.0 - (frame - 32) / 16.0)
    return 0.0


def _approach_w(frame):
    """Car closing in from 20 m down to 2 m over the sequence."""
    return 20.0 - 18.0 * frame / (N_FRAMES - 1)


def build_scene(tmp_path, name, rash):
    calib = make_calibration(**SCENE_CALIB_KW)
    base = render_road(calib, [(0, 0, -1.8), (0, 0, 1.8)], color=False)

    frames = []
    rows = []
    for frame in range(N_FRAMES):
        img = base
        if rash:
            boxes = [
                car_bbox_for_ground(calib, _weave_u(frame), 12.0),
                car_bbox_for_ground(calib, -2.5, _approach_w(frame)),
            ]
        else:
            boxes = [car_bbox_for_ground(calib, 0.0, 25.0)]
        for bbox in boxes:
            img = draw_box_into(img, bbox, value=0.05)
            rows.append(
                {
                    "frame": frame,
                    "class": "car",
                    "x": bbox[0],
                    "y": bbox[1],
                    "width": bbox[2],
                    "height": bbox[3],
                    "score": 2.0,
                }
            )
        frames.append(img)

    scene_dir = tmp_path / name
    write_sequence(scene_dir / "frames", frames)
    write_calibration(scene_dir / "calib.txt", calib)
    write_detections(scene_dir / "dets.jsonl", rows)
    write_config(
        scene_dir / "run.cfg",
        fps=30,
        seed=1234,
        **{
            "bev.u_min": -8,
            "bev.u_max": 8,
            "bev.w_min": 4,
            "bev.w_max": 30,
            "bev.meters_per_pixel": 0.1,
        },
    )
    return scene_dir


def run_scene(scene_dir, out_name):
    config = load_config(scene_dir / "run.cfg")
    out = scene_dir / out_name
    summary = run_pipeline(
        config,
        frames_dir=scene_dir / "frames",
        calib_path=scene_dir / "calib.txt",
        out_path=out,
        detections_path=scene_dir / "dets.jsonl",
    )
    return summary, out


def test_end_to_end_behavioral_discrimination(tmp_path):
    budget_per_run = 120.0

    calm_dir = build_scene(tmp_path, "calm", rash=False)
    start = time.perf_counter()
    calm_summary, _ = run_scene(calm_dir, "events.jsonl")
    calm_elapsed = time.perf_counter() - start
    assert calm_elapsed < budget_per_run
    assert calm_summary["pairs_processed"] == N_FRAMES - 1
    assert calm_summary["rash_frames"] == 0
    assert calm_summary["events_by_type"]["rash_verdict"] == 0

    rash_dir = build_scene(tmp_path, "rash", rash=True)
    start = time.perf_counter()
    rash_summary, out1 = run_scene(rash_dir, "events1.jsonl")
    rash_elapsed = time.perf_counter() - start
    assert rash_elapsed < budget_per_run
    assert rash_summary["events_by_type"]["rash_verdict"] >= 1

    events = [json.loads(line) for line in out1.read_text().splitlines()]
    kinds = {e["type"] for e in events}
    assert "proximity" in kinds
    assert "lane_change" in kinds

    _, out2 = run_scene(rash_dir, "events2.jsonl")
    assert out1.read_bytes() == out2.read_bytes()

    report(
        f"end-to-end discrimination (calm 0, rash {rash_summary['rash_frames']} rash frames)",
        calm_elapsed + 2 * rash_elapsed,
        3 * budget_per_run,
    )


def test_monotonicity_suite():
    budget = 1.0
    start = time.perf_counter()
    rng = np.random.default_rng(777)
    th = Thresholds()
    for _ in range(1000):
        feats = random_features(rng)
        before = classify_rash(feats, th)
        after = classify_rash(perturb_monotone(rng, feats), th)
        assert set(before.triggered_rules) <= set(after.triggered_rules)
        if before.rash:
            assert after.rash
    elapsed = time.perf_counter() - start
    assert elapsed < budget
    report("monotonicity (1000 perturbed feature vectors)", elapsed, budget)
