"""Acceptance gate. Each test is one criterion; ``conftest.py`` prints a
PASS/FAIL line per criterion at the end of the run."""

import math
import random
import time

import numpy as np
import pytest

from pass_v2x.evaluation import detection_accuracy, rmse_location, rmse_velocity, ttc_oracle
from pass_v2x.evaluation.loopback import crowd_detections, run_loopback
from pass_v2x.evaluation.scenario import (
    IMAGE_QUAD,
    TOP_QUAD,
    PedestrianSpec,
    ScenarioConfig,
    run_scenario,
    synthetic_calibration,
)
from pass_v2x.geometry import (
    GeoPosition,
    PixelPoint,
    apply_homography,
    haversine_distance,
    heading,
    homography_from_correspondences,
    pixel_to_geo,
)
from pass_v2x.messages import PsmConfig, build_psm, decode, encode
from pass_v2x.perception import nms
from pass_v2x.pipeline import Pipeline
from pass_v2x.pscw import KinematicState, stopping_distance, to_local, ttc
from pass_v2x.tracking import PedestrianTrack

from test_evaluation import destination
from test_geometry import BOUNDS
from test_messages import TABLE3_TS, random_message, table3_track
from test_perception import brute_force_nms, random_boxes
from test_pscw import random_pair

ANCHOR = GeoPosition(34.679183, -82.847414)


def note(record, **values):
    record("detail", " ".join(f"{k}={v}" for k, v in values.items()))


@pytest.mark.criterion(1, "head-on TTC is 7.3 s, under 1 ms per solve")
def test_c1_head_on_ttc(record_property):
    ped = KinematicState((0.0, 0.0), (0.0, 0.0))
    veh = KinematicState((-75.5, 0.0), (10.0, 0.0))
    n = 10_000
    t0 = time.perf_counter()
    for _ in range(n):
        r = ttc(ped, veh, 2.5)
    per_solve_ms = (time.perf_counter() - t0) * 1000 / n
    note(record_property, ttc_s=f"{r.ttc_s:.9f}", per_solve_ms=f"{per_solve_ms:.4f}")
    assert abs(r.ttc_s - 7.3) <= 1e-6
    assert per_solve_ms < 1.0


@pytest.mark.criterion(2, "46 m stopping distance at 3.35 m/s^2, scenario vehicle halts short")
def test_c2_stopping(record_property):
    d = stopping_distance(math.sqrt(2 * 3.35 * 46), 3.35)
    rep = run_scenario(ScenarioConfig())
    note(record_property, stop_m=f"{d:.6f}", scenario_margin_m=f"{rep.margin_m:.3f}",
         halted_short=rep.halted_short)
    assert abs(d - 46.0) <= 0.1
    assert rep.first_alert_t_ms is not None
    assert rep.halted_short and rep.margin_m > 0
    assert rep.vehicle_final_speed_mps == 0.0


@pytest.mark.criterion(3, "analytic TTC agrees with the 1 ms sampling oracle on 1000 pairs")
def test_c3_ttc_vs_oracle(record_property):
    rng = random.Random(20181130)
    t0 = time.perf_counter()
    presence_miss = 0
    worst = 0.0
    present = 0
    for _ in range(1000):
        ped, veh, eps = random_pair(rng)
        a, o = ttc(ped, veh, eps), ttc_oracle(ped, veh, eps)
        if a.present != o.present:
            presence_miss += 1
        elif a.present:
            present += 1
            worst = max(worst, abs(a.ttc_s - o.ttc_s))
    elapsed = time.perf_counter() - t0
    note(record_property, presence_mismatches=presence_miss, with_ttc=present,
         max_diff_ms=f"{worst * 1000:.3f}", runtime_s=f"{elapsed:.2f}")
    assert presence_miss == 0
    assert present > 0
    assert worst <= 0.002
    assert elapsed < 30.0


@pytest.mark.criterion(4, "codec round trip, quantization bounds and the published packet")
def test_c4_codec(record_property):
    rng = random.Random(4)
    for _ in range(10_000):
        m = random_message(rng)
        assert decode(encode(m)) == m

    nrng = np.random.default_rng(4)
    worst = dict(latlon=0.0, speed=0.0, elev=0.0, heading=0.0)
    for lat, lon, speed, elev, h in zip(
        nrng.uniform(-90, 90, 10_000),
        nrng.uniform(-180, 180, 10_000),
        nrng.uniform(0, 163.8, 10_000),
        nrng.uniform(-409.5, 6143.9, 10_000),
        nrng.uniform(-math.pi, math.pi, 10_000),
    ):
        track = PedestrianTrack(7, GeoPosition(lat, lon), 0, velocity_mps=speed, heading_rad=h)
        psm = decode(encode(build_psm(track, 0, PsmConfig(elevation_m=elev))))
        worst["latlon"] = max(worst["latlon"], abs(psm.position.lat - lat), abs(psm.position.lon - lon))
        worst["speed"] = max(worst["speed"], abs(psm.speed_mps - speed))
        worst["elev"] = max(worst["elev"], abs(psm.elevation_m - elev))
        err = abs(psm.heading_deg - (90.0 - math.degrees(h)) % 360.0) % 360.0
        worst["heading"] = max(worst["heading"], min(err, 360.0 - err))

    pkt = decode(encode(build_psm(table3_track(), TABLE3_TS)))
    note(record_property, **{k: f"{v:.3g}" for k, v in worst.items()},
         packet1=f"{pkt.position.lat},{pkt.position.lon},{pkt.elevation_m},{pkt.pos_accuracy_m},{pkt.speed_mps}")
    slack = 1e-12  # float64 representation of inputs near a rounding tie
    assert worst["latlon"] <= 5e-8 + slack
    assert worst["speed"] <= 0.01 + slack
    assert worst["elev"] <= 0.05 + slack
    assert worst["heading"] <= 0.00625 + slack
    assert pkt.position == GeoPosition(34.679183, -82.847414)
    assert pkt.elevation_m == 201.0
    assert pkt.pos_accuracy_m == 0.54
    assert abs(pkt.speed_mps - 0.040266) <= 0.01


@pytest.mark.criterion(5, "greedy NMS equals brute-force suppression on 500 sets")
def test_c5_nms(record_property):
    rng = random.Random(500)
    kept = 0
    for trial in range(500):
        dets = random_boxes(rng, rng.randint(0, 10))
        got = nms(dets, 0.5)
        assert got == brute_force_nms(dets, 0.5), f"trial {trial}"
        kept += len(got)
    note(record_property, trials=500, boxes_kept=kept)


@pytest.mark.criterion(6, "geometry fixtures")
def test_c6_geometry(record_property):
    arc = haversine_distance(GeoPosition(0, 0), GeoPosition(0, 1))
    assert abs(arc - 111_194.93) <= 0.01

    rng = random.Random(6)
    quads = [list(IMAGE_QUAD)]
    for _ in range(50):
        quads.append([PixelPoint(x + rng.uniform(-0.2, 0.2), y + rng.uniform(-0.2, 0.2))
                      for x, y in ((0, 0), (1, 0), (1, 1), (0, 1))])
    worst = 0.0
    for src in quads:
        h = homography_from_correspondences(src, TOP_QUAD)
        for s, d in zip(src, TOP_QUAD):
            q = apply_homography(h, s)
            worst = max(worst, abs(q.px - d.px), abs(q.py - d.py))
    assert worst < 1e-9

    corners = {
        (0, 0): (BOUNDS.w1.lat, BOUNDS.w1.lon),
        (1, 0): (BOUNDS.w1.lat, BOUNDS.w2.lon),
        (1, 1): (BOUNDS.w4.lat, BOUNDS.w2.lon),
        (0, 1): (BOUNDS.w4.lat, BOUNDS.w1.lon),
    }
    for (x, y), want in corners.items():
        g = pixel_to_geo(BOUNDS, PixelPoint(x, y))
        assert (g.lat, g.lon) == want

    p = GeoPosition(34.0, -82.0)
    assert heading(p, GeoPosition(34.001, -82.0)) == math.pi / 2
    assert heading(p, GeoPosition(34.0, -81.999)) == 0.0
    note(record_property, equator_arc_m=f"{arc:.4f}", max_corner_residual=f"{worst:.2e}")


@pytest.mark.criterion(7, "accuracy and RMSE fixtures, 0.25 m and 0.39 m/s by construction")
def test_c7_metrics(record_property):
    assert detection_accuracy(98, 2) == 0.98

    origin = GeoPosition(0.0, 0.0)
    est = [destination(origin, 3.0, 0.0), destination(origin, 4.0, 0.0)]
    assert abs(rmse_location([origin, origin], est) - math.sqrt(12.5)) <= 1e-12
    assert abs(rmse_velocity([1.0, 1.0], [1.3, 0.6]) - math.sqrt(0.125)) <= 1e-12

    truth = [destination(ANCHOR, 2.0 * i, 17.0 * i) for i in range(100)]
    shifted = [destination(g, 0.25, 37.0 * i) for i, g in enumerate(truth)]
    loc = rmse_location(truth, shifted)
    v_true = [1.0 + 0.01 * i for i in range(100)]
    v_est = [v + (0.39 if i % 2 else -0.39) for i, v in enumerate(v_true)]
    vel = rmse_velocity(v_true, v_est)
    note(record_property, accuracy=detection_accuracy(98, 2), rmse_location_m=f"{loc:.6f}",
         rmse_velocity_mps=f"{vel:.6f}")
    assert abs(loc - 0.25) <= 1e-6
    assert abs(vel - 0.39) <= 1e-12


@pytest.mark.slow
@pytest.mark.criterion(8, "100 ms PSM cadence without drift, p99 end-to-end under 100 ms")
def test_c8_cadence_and_latency(record_property):
    details = {}
    for delay in (0.0, 51.0):
        res = run_loopback(n_tracks=10, duration_s=30.0, detector_delay_ms=delay)
        tag = f"delay{int(delay)}"
        details[f"{tag}_period_ms"] = f"{res.mean_period_ms():.3f}"
        details[f"{tag}_drift_ms_per_tick"] = f"{res.drift_ms_per_tick():.5f}"
        details[f"{tag}_p99_ms"] = f"{res.p99_end_to_end_ms():.2f}"
        details[f"{tag}_psms"] = len(res.psm_records())
        note(record_property, **details)
        assert abs(res.mean_period_ms() - 100.0) <= 1.0
        # over 300 ticks a 1 ms total walk is 0.0033 ms per tick
        assert abs(res.drift_ms_per_tick()) < 1.0 / 300
        assert res.unmatched == 0 and res.decode_errors == 0
        assert len(res.psm_records()) >= 0.95 * 10 * 300
        assert res.p99_end_to_end_ms() < 100.0


@pytest.mark.criterion(9, "synthetic localization error after PSM quantization within 0.02 m")
def test_c9_localization(record_property):
    rep = run_scenario(ScenarioConfig())
    moving = run_scenario(ScenarioConfig(pedestrian=PedestrianSpec((-15.0, 4.0), 1.4, 100.0), duration_s=8.0))

    cal = synthetic_calibration(ANCHOR, 40.0)
    rng = np.random.default_rng(9)
    pts = [tuple(p) for p in rng.uniform(-19.5, 19.5, (200, 2))]
    worst_grid = 0.0
    # one pedestrian per frame, so overlapping boxes never reach NMS
    for e, n in pts:
        (psm,) = Pipeline(cal).process(1000, crowd_detections(cal, [(e, n)], 1000)).psms
        ge, gn = to_local(ANCHOR, decode(encode(psm)).position).pos_m
        worst_grid = max(worst_grid, math.hypot(e - ge, n - gn))
    note(record_property, scenario_max_m=f"{rep.max_localization_error_m:.5f}",
         moving_max_m=f"{moving.max_localization_error_m:.5f}", grid_max_m=f"{worst_grid:.5f}")
    assert rep.max_localization_error_m <= 0.02
    assert moving.max_localization_error_m <= 0.02
    assert worst_grid <= 0.02
