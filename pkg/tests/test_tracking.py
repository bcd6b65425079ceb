import math
from itertools import permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pass_v2x.errors import NonMonotonicTimestamp
from pass_v2x.geometry import EARTH_RADIUS_M, CardinalHeading, GeoPosition, haversine_distance
from pass_v2x.tracking import (
    FrameObservation,
    PedestrianTrack,
    Tracker,
    TrackerConfig,
    associate,
)

ORIGIN = GeoPosition(34.679183, -82.847414)
# float64 degrees near 35N resolve ~1e-9 m; over a 100 ms frame that is ~1e-8 m/s
FLOAT_DEG_TOL = 1e-7


def offset(east, north, p=ORIGIN):
    dlat = math.degrees(north / EARTH_RADIUS_M)
    dlon = math.degrees(east / (EARTH_RADIUS_M * math.cos(math.radians(p.lat))))
    return GeoPosition(p.lat + dlat, p.lon + dlon)


def track_at(pos, tid=1, ts=0):
    return PedestrianTrack(temp_id=tid, position=pos, last_ts=ts)


def obs_at(pos, ts=100):
    return FrameObservation(pos, ts)


def min_total_assignment(tracks, obs, gate):
    """Exhaustive assignment minimizing total distance (2x2 and similar)."""
    best, best_cost = None, math.inf
    for perm in permutations(range(len(obs)), len(tracks)):
        pairs = [(ti, oi) for ti, oi in enumerate(perm)]
        dists = [haversine_distance(tracks[ti].position, obs[oi].position) for ti, oi in pairs]
        if any(d > gate for d in dists):
            continue
        if sum(dists) < best_cost:
            best, best_cost = pairs, sum(dists)
    return sorted(best)


def test_associate_single_pair():
    m, ut, uo = associate([track_at(ORIGIN)], [obs_at(offset(0.1, 0))], 1.0)
    assert m == [(0, 0)] and ut == [] and uo == []


def test_associate_gate_rejection():
    m, ut, uo = associate([track_at(ORIGIN)], [obs_at(offset(5, 0))], 1.0)
    assert m == [] and ut == [0] and uo == [0]


@pytest.mark.parametrize(
    "tracks_xy, obs_xy",
    [
        # two walkers passing each other on a crosswalk
        ([(0.0, 0.0), (1.0, 0.0)], [(0.85, 0.05), (0.15, -0.05)]),
        ([(0.0, 0.0), (0.6, 0.0)], [(0.45, 0.1), (0.1, 0.1)]),
        ([(0.0, 0.0), (0.0, 0.8)], [(0.1, 0.75), (0.05, 0.1)]),
    ],
)
def test_associate_matches_brute_force_assignment(tracks_xy, obs_xy):
    tracks = [track_at(offset(*xy), tid=i) for i, xy in enumerate(tracks_xy)]
    obs = [obs_at(offset(*xy)) for xy in obs_xy]
    m, _, _ = associate(tracks, obs, 1.0)
    assert sorted(m) == min_total_assignment(tracks, obs, 1.0)


pts = st.tuples(st.floats(-3, 3), st.floats(-3, 3))


@given(st.lists(pts, max_size=6), st.lists(pts, max_size=6), st.floats(0.1, 2.0))
def test_associate_invariants(txy, oxy, gate):
    tracks = [track_at(offset(*xy), tid=i) for i, xy in enumerate(txy)]
    obs = [obs_at(offset(*xy)) for xy in oxy]
    m, ut, uo = associate(tracks, obs, gate)
    assert len({ti for ti, _ in m}) == len(m) == len({oi for _, oi in m})
    assert all(haversine_distance(tracks[ti].position, obs[oi].position) <= gate for ti, oi in m)
    assert sorted([ti for ti, _ in m] + ut) == list(range(len(tracks)))
    assert sorted([oi for _, oi in m] + uo) == list(range(len(obs)))


def test_cold_start():
    tr = Tracker(TrackerConfig(seed=1))
    out = tr.step([obs_at(ORIGIN, 0)], 0)
    assert len(out) == 1
    assert out[0].velocity_mps == 0.0
    assert out[0].cardinal == CardinalHeading.NS
    assert out[0].msg_count == 0


def test_velocity_from_two_frames():
    tr = Tracker(TrackerConfig(seed=1))
    tr.step([obs_at(ORIGIN, 1000)], 1000)
    (t,) = tr.step([obs_at(offset(0, -0.15), 1100)], 1100)
    assert t.velocity_mps == pytest.approx(1.5, abs=FLOAT_DEG_TOL)
    assert t.cardinal == CardinalHeading.NS
    assert t.heading_rad == pytest.approx(-math.pi / 2)
    assert t.msg_count == 1


def test_retirement_after_max_misses():
    cfg = TrackerConfig(max_misses=5, seed=3)
    tr = Tracker(cfg)
    (first,) = tr.step([obs_at(ORIGIN, 0)], 0)
    ts = 0
    for k in range(cfg.max_misses):
        ts += 100
        assert tr.step([], ts) == []
        assert [t.temp_id for t in tr.live_tracks] == [first.temp_id]
    ts += 100
    tr.step([], ts)
    assert tr.live_tracks == []
    ts += 100
    (reborn,) = tr.step([obs_at(ORIGIN, ts)], ts)
    assert reborn.temp_id != first.temp_id


def test_reassociation_within_miss_budget():
    tr = Tracker(TrackerConfig(seed=3))
    (first,) = tr.step([obs_at(ORIGIN, 0)], 0)
    tr.step([], 100)
    (again,) = tr.step([obs_at(offset(0.2, 0), 200)], 200)
    assert again.temp_id == first.temp_id
    assert again.velocity_mps == pytest.approx(1.0, abs=FLOAT_DEG_TOL)


def test_non_monotonic_timestamp():
    tr = Tracker()
    tr.step([], 100)
    with pytest.raises(NonMonotonicTimestamp):
        tr.step([], 100)


def test_straight_walker_velocity_exact():
    speed, period = 1.37, 100
    tr = Tracker(TrackerConfig(seed=0))
    for k in range(20):
        pos = offset(speed * k * period / 1000, 0.0)
        (t,) = tr.step([obs_at(pos, k * period)], k * period)
        if k >= 1:
            assert t.velocity_mps == pytest.approx(speed, abs=FLOAT_DEG_TOL)
            assert t.cardinal == CardinalHeading.WE


def test_smoothing_option():
    tr = Tracker(TrackerConfig(seed=0, smoothing=0.5))
    tr.step([obs_at(ORIGIN, 0)], 0)
    (t,) = tr.step([obs_at(offset(0.2, 0), 100)], 100)
    assert t.velocity_mps == pytest.approx(1.0, abs=FLOAT_DEG_TOL)


def test_msg_count_wraps():
    tr = Tracker(TrackerConfig(seed=0))
    counts = []
    for k in range(130):
        (t,) = tr.step([obs_at(ORIGIN, k * 100)], k * 100)
        counts.append(t.msg_count)
    assert counts[127] == 127 and counts[128] == 0 and counts[129] == 1


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), max_size=5),
        min_size=1,
        max_size=12,
    ),
    st.integers(0, 2**16),
)
def test_step_invariants(frames, seed):
    tr = Tracker(TrackerConfig(seed=seed))
    retired: set[int] = set()
    for k, frame in enumerate(frames):
        ts = (k + 1) * 100
        before = {t.temp_id for t in tr.live_tracks}
        out = tr.step([obs_at(offset(*xy), ts) for xy in frame], ts)
        live = [t.temp_id for t in tr.live_tracks]
        assert len(live) == len(set(live))
        assert len(out) == len(frame)  # every observation is matched or spawns
        assert all(t.velocity_mps >= 0 for t in out)
        assert all(t.misses <= tr.config.max_misses for t in tr.live_tracks)
        assert not (set(live) & retired)
        retired |= before - set(live)
