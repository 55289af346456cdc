"""Tiered time-series store for telemetry and probe metrics.

Raw points live in the finest tier (1 s resolution, 90 day horizon).
Points that age past that horizon are replaced by one-minute aggregates
carrying mean, min, max and count jointly, kept for 400 days. Queries
bucket on an epoch-aligned grid and answer exactly with respect to the
retained points, so a query spanning the tier boundary equals a
recomputation from the raw history.

Series keys are "metric,tag=value" strings; the same string prefixes the
line export format "metric,tags,value,timestamp".
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

DAY_S = 86400.0

MAGIC = b"FOTS\x01\x00\x00\x00"


class StoreError(Exception):
    pass


class OutOfRetention(StoreError):
    """The whole query range is older than every retention horizon."""


class InvalidResolution(StoreError):
    """Requested buckets cannot be answered exactly from the covering tier."""


class InvalidRange(StoreError):
    pass


@dataclass(frozen=True)
class RetentionTier:
    resolution_s: float
    horizon_s: float


@dataclass(frozen=True)
class RetentionPolicy:
    tiers: tuple[RetentionTier, RetentionTier]

    def __post_init__(self) -> None:
        fine, coarse = self.tiers
        if fine.horizon_s < 90 * DAY_S:
            raise ValueError("finest tier must retain at least 90 days")
        if not (coarse.resolution_s > fine.resolution_s > 0):
            raise ValueError("tiers must have increasing resolutions")
        if not (coarse.horizon_s > fine.horizon_s):
            raise ValueError("tiers must have increasing horizons")
        if coarse.resolution_s % fine.resolution_s != 0:
            raise ValueError("coarse resolution must be a multiple of the fine one")


DEFAULT_POLICY = RetentionPolicy(
    (RetentionTier(1.0, 90 * DAY_S), RetentionTier(60.0, 400 * DAY_S))
)


def series_key(metric: str, **tags) -> str:
    parts = [metric] + [f"{k}={tags[k]}" for k in sorted(tags)]
    return ",".join(parts)


@dataclass
class Bucket:
    t: float
    count: int
    mean: float
    min: float
    max: float


class _Buf:
    """Growable float64 buffer with amortized O(1) appends."""

    __slots__ = ("a", "n")

    def __init__(self, cap: int = 16):
        self.a = np.empty(cap, dtype=np.float64)
        self.n = 0

    def _grow(self, need: int) -> None:
        cap = len(self.a)
        if self.n + need > cap:
            new = max(cap * 2, self.n + need)
            a = np.empty(new, dtype=np.float64)
            a[: self.n] = self.a[: self.n]
            self.a = a

    def append(self, v: float) -> None:
        self._grow(1)
        self.a[self.n] = v
        self.n += 1

    def extend(self, arr: np.ndarray) -> None:
        self._grow(len(arr))
        self.a[self.n : self.n + len(arr)] = arr
        self.n += len(arr)

    def view(self) -> np.ndarray:
        return self.a[: self.n]


class _RegularPage:
    """Samples at t0, t0+dt, ... with values in a growable buffer."""

    __slots__ = ("t0", "dt", "vals")

    def __init__(self, t0: float, dt: float):
        self.t0 = t0
        self.dt = dt
        self.vals = _Buf(64)

    @property
    def n(self) -> int:
        return self.vals.n

    @property
    def t_last(self) -> float:
        return self.t0 + (self.vals.n - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.vals.n)

    def values(self) -> np.ndarray:
        return self.vals.view()

    def index_range(self, t0: float, t1: float) -> tuple[int, int]:
        lo = max(0, int(np.ceil((t0 - self.t0) / self.dt - 1e-9)))
        hi = min(self.n, int(np.ceil((t1 - self.t0) / self.dt - 1e-9)))
        return lo, max(lo, hi)


class _IrregularPage:
    __slots__ = ("ts", "vals")

    def __init__(self):
        self.ts = _Buf(16)
        self.vals = _Buf(16)

    @property
    def n(self) -> int:
        return self.ts.n

    @property
    def t0(self) -> float:
        return self.ts.view()[0]

    @property
    def t_last(self) -> float:
        return self.ts.view()[-1]

    def times(self) -> np.ndarray:
        return self.ts.view()

    def values(self) -> np.ndarray:
        return self.vals.view()

    def index_range(self, t0: float, t1: float) -> tuple[int, int]:
        ts = self.ts.view()
        return int(np.searchsorted(ts, t0, "left")), int(np.searchsorted(ts, t1, "left"))


class _Series:
    __slots__ = ("key", "pages", "agg_t", "agg_sum", "agg_min", "agg_max", "agg_n", "downsampled_upto")

    def __init__(self, key: str):
        self.key = key
        self.pages: list = []
        self.agg_t = _Buf()
        self.agg_sum = _Buf()
        self.agg_min = _Buf()
        self.agg_max = _Buf()
        self.agg_n = _Buf()
        self.downsampled_upto = 0.0

    @property
    def last_t(self) -> float:
        return self.pages[-1].t_last if self.pages else -np.inf

    def raw_count(self) -> int:
        return sum(p.n for p in self.pages)

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.pages:
            h.update(np.ascontiguousarray(p.times()).tobytes())
            h.update(np.ascontiguousarray(p.values()).tobytes())
        for buf in (self.agg_t, self.agg_sum, self.agg_min, self.agg_max, self.agg_n):
            h.update(np.ascontiguousarray(buf.view()).tobytes())
        return h.hexdigest()


class TimeSeriesStore:
    def __init__(self, policy: RetentionPolicy = DEFAULT_POLICY):
        self.policy = policy
        self.series: dict[str, _Series] = {}
        self.now = 0.0

    def _series(self, key: str) -> _Series:
        s = self.series.get(key)
        if s is None:
            s = self.series[key] = _Series(key)
        return s

    # -- ingest ---------------------------------------------------------------

    def ingest(self, key: str, t: float, value: float) -> None:
        s = self._series(key)
        if t < s.last_t:
            raise InvalidRange(f"{key}: timestamps must be non-decreasing")
        page = s.pages[-1] if s.pages else None
        if not isinstance(page, _IrregularPage):
            page = _IrregularPage()
            s.pages.append(page)
        page.ts.append(t)
        page.vals.append(value)
        self.now = max(self.now, t)

    def ingest_regular(self, key: str, t0: float, dt: float, values: np.ndarray) -> None:
        """Append an evenly spaced run of samples in one shot."""
        if len(values) == 0:
            return
        s = self._series(key)
        if t0 < s.last_t:
            raise InvalidRange(f"{key}: timestamps must be non-decreasing")
        page = s.pages[-1] if s.pages else None
        if (
            isinstance(page, _RegularPage)
            and page.dt == dt
            and abs(page.t0 + page.n * dt - t0) < 1e-9
        ):
            page.vals.extend(np.asarray(values, dtype=np.float64))
        else:
            page = _RegularPage(t0, dt)
            page.vals.extend(np.asarray(values, dtype=np.float64))
            s.pages.append(page)
        self.now = max(self.now, page.t_last)

    # -- queries -----------------------------------------------------------------

    def query(self, key: str, span: tuple[float, float], resolution: float) -> list[Bucket]:
        """Aggregate buckets on the epoch-aligned grid over [span).

        Buckets are clipped to the span; empty buckets are omitted. When
        the span reaches into the downsampled tier, the resolution and
        span must align with the coarse tier grid so every stored
        aggregate row maps into exactly one result bucket.
        """
        t0, t1 = span
        if t1 <= t0:
            raise InvalidRange("span must have positive width")
        if resolution <= 0:
            raise InvalidRange("resolution must be positive")
        coarse = self.policy.tiers[1]
        if t1 <= self.now - coarse.horizon_s:
            raise OutOfRetention(f"{span} is older than every retention horizon")
        s = self.series.get(key)
        if s is None:
            return []
        acc: dict[float, list] = {}
        if t0 < s.downsampled_upto:
            res2 = coarse.resolution_s
            if resolution % res2 != 0 or t0 % res2 != 0 or t1 % res2 != 0:
                raise InvalidResolution(
                    "query reaching the downsampled tier must align to "
                    f"{res2:.0f} s buckets"
                )
            self._merge_agg(s, t0, t1, resolution, acc)
        for page in s.pages:
            if page.n == 0 or page.t_last < t0 or page.t0 >= t1:
                continue
            self._merge_raw(page, t0, t1, resolution, acc)
        out = []
        for b in sorted(acc):
            n, total, mn, mx = acc[b]
            if n:
                out.append(Bucket(b, int(n), total / n, mn, mx))
        return out

    @staticmethod
    def _bucket_edges(lo_t: float, hi_t: float, res: float) -> np.ndarray:
        first = np.floor(lo_t / res) * res
        return np.arange(first, hi_t, res)

    def _merge_raw(self, page, t0, t1, res, acc) -> None:
        lo, hi = page.index_range(t0, t1)
        if hi <= lo:
            return
        vals = page.values()[lo:hi]
        times = page.times()[lo:hi]
        edges = self._bucket_edges(times[0], times[-1] + 1e-9, res)
        if isinstance(page, _RegularPage):
            starts = np.ceil((edges - (page.t0 + lo * page.dt)) / page.dt - 1e-9).astype(np.int64)
            starts = np.clip(starts, 0, len(vals))
        else:
            starts = np.searchsorted(times, edges, "left")
        counts = np.diff(np.append(starts, len(vals)))
        keep = counts > 0
        idx = starts[keep]
        sums = np.add.reduceat(vals, idx)[: keep.sum()] if len(idx) else []
        mins = np.minimum.reduceat(vals, idx)[: keep.sum()] if len(idx) else []
        maxs = np.maximum.reduceat(vals, idx)[: keep.sum()] if len(idx) else []
        for b, n, sm, mn, mx in zip(edges[keep], counts[keep], sums, mins, maxs):
            cur = acc.get(b)
            if cur is None:
                acc[b] = [int(n), float(sm), float(mn), float(mx)]
            else:
                cur[0] += int(n)
                cur[1] += float(sm)
                cur[2] = min(cur[2], float(mn))
                cur[3] = max(cur[3], float(mx))

    def _merge_agg(self, s: _Series, t0, t1, res, acc) -> None:
        ats = s.agg_t.view()
        lo = int(np.searchsorted(ats, t0, "left"))
        hi = int(np.searchsorted(ats, t1, "left"))
        sums, mins, maxs, ns = (
            s.agg_sum.view(),
            s.agg_min.view(),
            s.agg_max.view(),
            s.agg_n.view(),
        )
        for i in range(lo, hi):
            b = np.floor(ats[i] / res) * res
            cur = acc.get(b)
            if cur is None:
                acc[b] = [int(ns[i]), float(sums[i]), float(mins[i]), float(maxs[i])]
            else:
                cur[0] += int(ns[i])
                cur[1] += float(sums[i])
                cur[2] = min(cur[2], float(mins[i]))
                cur[3] = max(cur[3], float(maxs[i]))

    def count(self, key: str, span: tuple[float, float]) -> int:
        return sum(b.count for b in self.query(key, span, span[1] - span[0]))

    def read(self, key: str, span: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
        """Raw (times, values) still held at native resolution over [span)."""
        t0, t1 = span
        if t1 <= t0:
            raise InvalidRange("span must have positive width")
        s = self.series.get(key)
        if s is None:
            return np.empty(0), np.empty(0)
        ts, vs = [], []
        for page in s.pages:
            if page.n == 0 or page.t_last < t0 or page.t0 >= t1:
                continue
            lo, hi = page.index_range(t0, t1)
            if hi > lo:
                ts.append(page.times()[lo:hi])
                vs.append(page.values()[lo:hi])
        if not ts:
            return np.empty(0), np.empty(0)
        return np.concatenate(ts), np.concatenate(vs)

    # -- retention ----------------------------------------------------------------

    def enforce_retention(self, now: float) -> tuple[int, int]:
        """Downsample raws past the fine horizon; expire the coarse tier.

        Raw points only move in whole coarse buckets, so the boundary
        between tiers always falls on the coarse grid and spanning
        queries stay exact. Returns (points downsampled, rows expired).
        Idempotent for a fixed `now`.
        """
        self.now = max(self.now, now)
        fine, coarse = self.policy.tiers
        res2 = coarse.resolution_s
        cutoff = np.floor((now - fine.horizon_s) / res2) * res2
        moved = 0
        expired = 0
        for s in self.series.values():
            if cutoff > s.downsampled_upto:
                moved += self._downsample(s, cutoff, res2)
            expired += self._expire(s, now - coarse.horizon_s, res2)
        return moved, expired

    def _downsample(self, s: _Series, cutoff: float, res2: float) -> int:
        acc: dict[float, list] = {}
        keep_pages = []
        moved = 0
        for page in s.pages:
            if page.n == 0:
                continue
            if page.t0 >= cutoff:
                keep_pages.append(page)
                continue
            lo, hi = page.index_range(page.t0, cutoff)
            moved += hi - lo
            self._merge_raw(page, page.t0, cutoff, res2, acc)
            if hi < page.n:
                keep_pages.append(_slice_page(page, hi))
        for b in sorted(acc):
            n, total, mn, mx = acc[b]
            s.agg_t.append(b)
            s.agg_sum.append(total)
            s.agg_min.append(mn)
            s.agg_max.append(mx)
            s.agg_n.append(n)
        s.pages = keep_pages
        s.downsampled_upto = cutoff
        return moved

    @staticmethod
    def _expire(s: _Series, cutoff: float, res2: float) -> int:
        ats = s.agg_t.view()
        drop = int(np.searchsorted(ats, cutoff - res2, "right"))
        if drop <= 0:
            return 0
        for buf in (s.agg_t, s.agg_sum, s.agg_min, s.agg_max, s.agg_n):
            kept = buf.view()[drop:].copy()
            buf.n = 0
            buf.extend(kept)
        return drop

    # -- introspection / export ------------------------------------------------------

    def keys(self) -> list[str]:
        return sorted(self.series)

    def raw_count(self, key: str) -> int:
        s = self.series.get(key)
        return s.raw_count() if s else 0

    def digest(self, key: str) -> str:
        s = self.series.get(key)
        return s.digest() if s else hashlib.sha256(b"").hexdigest()

    def export_lines(self, keys: list[str] | None = None):
        """Yield "metric,tags,value,timestamp" lines for raw points."""
        for key in keys if keys is not None else self.keys():
            s = self.series.get(key)
            if s is None:
                continue
            for page in s.pages:
                times = page.times()
                vals = page.values()
                for i in range(page.n):
                    yield f"{key},{float(vals[i])!r},{float(times[i])!r}"

    # -- persistence --------------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            header = {
                "version": 1,
                "now": self.now,
                "policy": [
                    [t.resolution_s, t.horizon_s] for t in self.policy.tiers
                ],
                "series": self.keys(),
                "downsampled_upto": {
                    k: self.series[k].downsampled_upto for k in self.keys()
                },
            }
            hb = json.dumps(header).encode("utf-8")
            fh.write(len(hb).to_bytes(8, "big"))
            fh.write(hb)
            for key in self.keys():
                s = self.series[key]
                times = (
                    np.concatenate([p.times() for p in s.pages])
                    if s.pages
                    else np.empty(0)
                )
                vals = (
                    np.concatenate([p.values() for p in s.pages])
                    if s.pages
                    else np.empty(0)
                )
                np.save(fh, times)
                np.save(fh, vals)
                for buf in (s.agg_t, s.agg_sum, s.agg_min, s.agg_max, s.agg_n):
                    np.save(fh, buf.view())

    @classmethod
    def load(cls, path) -> "TimeSeriesStore":
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise StoreError(f"{path}: not a metrics store snapshot")
            hlen = int.from_bytes(fh.read(8), "big")
            header = json.loads(fh.read(hlen).decode("utf-8"))
            tiers = tuple(RetentionTier(r, h) for r, h in header["policy"])
            store = cls(RetentionPolicy(tiers))  # type: ignore[arg-type]
            store.now = header["now"]
            for key in header["series"]:
                s = store._series(key)
                times = np.load(fh)
                vals = np.load(fh)
                if len(times):
                    page = _IrregularPage()
                    page.ts.extend(times)
                    page.vals.extend(vals)
                    s.pages.append(page)
                for buf in (s.agg_t, s.agg_sum, s.agg_min, s.agg_max, s.agg_n):
                    buf.extend(np.load(fh))
                s.downsampled_upto = header["downsampled_upto"][key]
        return store


def _slice_page(page, start: int):
    if isinstance(page, _RegularPage):
        out = _RegularPage(page.t0 + start * page.dt, page.dt)
        out.vals.extend(page.values()[start:].copy())
        return out
    out = _IrregularPage()
    out.ts.extend(page.times()[start:].copy())
    out.vals.extend(page.values()[start:].copy())
    return out
