"""Telemetry store: bucket aggregation, two-tier retention, persistence.

Every aggregation assertion is checked against a brute-force pass over the
original points, so the store never gets to grade its own arithmetic.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetops.tsstore import (
    DAY_S,
    DEFAULT_POLICY,
    InvalidRange,
    InvalidResolution,
    OutOfRetention,
    RetentionPolicy,
    RetentionTier,
    StoreError,
    TimeSeriesStore,
    series_key,
)

KEY = series_key("t_fpga0", system="s03")


def brute_buckets(ts, vs, span, res):
    """floor(t/res) grouping over points inside [span), as plain dict."""
    t0, t1 = span
    out = {}
    for t, v in zip(ts, vs):
        if not (t0 <= t < t1):
            continue
        b = math.floor(t / res) * res
        cur = out.get(b)
        if cur is None:
            out[b] = [1, v, v, v]
        else:
            cur[0] += 1
            cur[1] += v
            cur[2] = min(cur[2], v)
            cur[3] = max(cur[3], v)
    return out


def assert_matches_brute(buckets, ts, vs, span, res):
    want = brute_buckets(ts, vs, span, res)
    assert [b.t for b in buckets] == sorted(want)
    for b in buckets:
        n, total, mn, mx = want[b.t]
        assert b.count == n
        assert b.mean == pytest.approx(total / n, rel=1e-12)
        assert b.min == mn and b.max == mx


def day_of_samples(n=86400, t0=0.0, seed=7):
    rng = np.random.default_rng(seed)
    ts = t0 + np.arange(n, dtype=np.float64)
    vs = 40.0 + 5.0 * np.sin(ts / 900.0) + rng.normal(0.0, 0.3, n)
    return ts, vs


def test_series_key_sorts_tags():
    assert series_key("i12_in", system="s03", drawer="r0d1") == (
        "i12_in,drawer=r0d1,system=s03"
    )
    assert series_key("fan_rpm") == "fan_rpm"


def test_hour_of_points_buckets_match_brute_force():
    store = TimeSeriesStore()
    rng = np.random.default_rng(3)
    ts = np.sort(rng.uniform(0.0, 3600.0, 3600))
    vs = rng.normal(12.0, 2.0, 3600)
    for t, v in zip(ts, vs):
        store.ingest(KEY, t, v)
    got = store.query(KEY, (0.0, 3600.0), 60.0)
    assert_matches_brute(got, ts, vs, (0.0, 3600.0), 60.0)
    assert store.count(KEY, (0.0, 3600.0)) == 3600


@settings(max_examples=40, deadline=None)
@given(
    points=st.lists(
        st.tuples(
            st.floats(0.0, 7200.0, allow_nan=False),
            st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
        ),
        max_size=200,
    ),
    res=st.sampled_from([7.0, 30.0, 60.0]),
)
def test_raw_tier_query_equals_brute_force(points, res):
    store = TimeSeriesStore()
    points.sort()
    for t, v in points:
        store.ingest("m", t, v)
    span = (600.0, 6600.0)
    got = store.query("m", span, res)
    ts = np.array([p[0] for p in points])
    vs = np.array([p[1] for p in points])
    assert_matches_brute(got, ts, vs, span, res)
    assert store.count("m", span) == int(np.sum((ts >= span[0]) & (ts < span[1])))


def test_ingest_rejects_backwards_time():
    store = TimeSeriesStore()
    store.ingest("m", 10.0, 1.0)
    with pytest.raises(InvalidRange):
        store.ingest("m", 9.0, 2.0)
    with pytest.raises(InvalidRange):
        store.ingest_regular("m", 5.0, 1.0, np.ones(4))


def test_regular_chunks_and_singles_store_identically():
    vs = np.random.default_rng(11).normal(0.0, 1.0, 7200)
    whole = TimeSeriesStore()
    whole.ingest_regular("m", 0.0, 1.0, vs)
    chunked = TimeSeriesStore()
    for i in range(0, 7200, 1800):
        chunked.ingest_regular("m", float(i), 1.0, vs[i : i + 1800])
    singles = TimeSeriesStore()
    for i, v in enumerate(vs):
        singles.ingest("m", float(i), float(v))
    assert whole.digest("m") == chunked.digest("m") == singles.digest("m")
    assert whole.raw_count("m") == 7200


def test_day_past_fine_horizon_downsamples_to_1440_rows():
    store = TimeSeriesStore()
    ts, vs = day_of_samples()
    store.ingest_regular(KEY, 0.0, 1.0, vs)
    now = 90 * DAY_S + 86400.0
    moved, expired = store.enforce_retention(now)
    assert moved == 86400 and expired == 0
    assert store.raw_count(KEY) == 0

    buckets = store.query(KEY, (0.0, 86400.0), 60.0)
    assert len(buckets) == 1440
    assert all(b.count == 60 for b in buckets)
    assert_matches_brute(buckets, ts, vs, (0.0, 86400.0), 60.0)

    # Same instant again: nothing left to move, nothing expires, bytes equal.
    digest = store.digest(KEY)
    assert store.enforce_retention(now) == (0, 0)
    assert store.digest(KEY) == digest


def test_query_spanning_tier_boundary_is_exact():
    store = TimeSeriesStore()
    ts, vs = day_of_samples(n=93600)
    store.ingest_regular(KEY, 0.0, 1.0, vs)
    store.enforce_retention(90 * DAY_S + 86400.0)
    assert store.raw_count(KEY) == 7200  # the two hours past the cutoff

    span = (82800.0, 90000.0)
    buckets = store.query(KEY, span, 60.0)
    assert len(buckets) == 120
    assert_matches_brute(buckets, ts, vs, span, 60.0)
    assert store.count(KEY, span) == 7200

    # Raw-only spans keep free-form resolutions even after downsampling.
    odd = store.query(KEY, (86460.0, 86600.0), 7.0)
    assert_matches_brute(odd, ts, vs, (86460.0, 86600.0), 7.0)


def test_downsampled_spans_demand_aligned_queries():
    store = TimeSeriesStore()
    store.ingest_regular("m", 0.0, 1.0, np.ones(3600))
    store.enforce_retention(90 * DAY_S + 3600.0)
    with pytest.raises(InvalidResolution):
        store.query("m", (0.0, 3600.0), 90.0)
    with pytest.raises(InvalidResolution):
        store.query("m", (30.0, 3630.0), 60.0)


def test_bad_spans_and_resolutions_rejected():
    store = TimeSeriesStore()
    store.ingest("m", 0.0, 1.0)
    with pytest.raises(InvalidRange):
        store.query("m", (10.0, 10.0), 60.0)
    with pytest.raises(InvalidRange):
        store.query("m", (0.0, 60.0), -1.0)
    with pytest.raises(InvalidRange):
        store.read("m", (5.0, 5.0))


def test_queries_past_coarse_horizon_refused_and_rows_expire():
    store = TimeSeriesStore()
    store.ingest_regular("m", 0.0, 1.0, np.ones(3600))
    store.enforce_retention(90 * DAY_S + 3600.0)
    moved, expired = store.enforce_retention(400 * DAY_S + 3600.0 + 60.0)
    assert moved == 0 and expired == 60
    with pytest.raises(OutOfRetention):
        store.query("m", (0.0, 3600.0), 60.0)


def test_unknown_series_reads_empty():
    store = TimeSeriesStore()
    assert store.query("nope", (0.0, 60.0), 60.0) == []
    ts, vs = store.read("nope", (0.0, 60.0))
    assert len(ts) == 0 and len(vs) == 0


def test_save_load_roundtrip_preserves_everything(tmp_path):
    store = TimeSeriesStore()
    ts, vs = day_of_samples(n=93600, seed=23)
    store.ingest_regular(KEY, 0.0, 1.0, vs)
    store.ingest("extra,system=s00", 100.0, 1.5)
    store.enforce_retention(90 * DAY_S + 86400.0)

    path = tmp_path / "metrics.fots"
    store.save(path)
    back = TimeSeriesStore.load(path)

    assert back.keys() == store.keys()
    assert back.now == store.now
    for key in store.keys():
        assert back.digest(key) == store.digest(key)
    span = (82800.0, 90000.0)
    assert back.query(KEY, span, 60.0) == store.query(KEY, span, 60.0)


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"definitely not a snapshot")
    with pytest.raises(StoreError):
        TimeSeriesStore.load(path)


def test_export_lines_roundtrip_values():
    store = TimeSeriesStore()
    rng = np.random.default_rng(5)
    keys = [series_key("v12_in", system=f"s{i:02d}") for i in range(3)]
    for k in keys:
        store.ingest_regular(k, 0.0, 1.0, rng.normal(12.0, 0.1, 50))
    lines = list(store.export_lines())
    assert len(lines) == 150
    for line in lines:
        key, value, t = line.rsplit(",", 2)
        assert key in keys
        float(value), float(t)  # repr round-trips
    only = list(store.export_lines(keys=[keys[1]]))
    assert len(only) == 50 and all(l.startswith(keys[1]) for l in only)


@pytest.mark.parametrize(
    "tiers",
    [
        ((1.0, 10 * DAY_S), (60.0, 400 * DAY_S)),  # fine horizon too short
        ((1.0, 90 * DAY_S), (1.0, 400 * DAY_S)),  # resolutions must increase
        ((1.0, 90 * DAY_S), (90.5, 400 * DAY_S)),  # coarse not a multiple
        ((1.0, 90 * DAY_S), (60.0, 30 * DAY_S)),  # horizons must increase
    ],
)
def test_policy_validation(tiers):
    with pytest.raises(ValueError):
        RetentionPolicy(tuple(RetentionTier(*t) for t in tiers))


def test_default_policy_is_second_resolution_for_90_days():
    fine, coarse = DEFAULT_POLICY.tiers
    assert (fine.resolution_s, fine.horizon_s) == (1.0, 90 * DAY_S)
    assert (coarse.resolution_s, coarse.horizon_s) == (60.0, 400 * DAY_S)
