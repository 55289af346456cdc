"""Central fleet monitoring.

One monitor host watches every system: it captures the 29-channel
telemetry stream, probes FPGA reachability each minute, health-checks
idle systems every other hour, launches a nightly calibration run
through the allocator, and turns the collected series into alerts with
exact transition times. Operators hang annotations off the same
timeline.

Telemetry values are a pure function of (seed, system, channel, second),
so samples can be materialized lazily in large vectorized chunks. The
monitor keeps a per-system watermark and flushes channels referenced by
alert rules at every evaluation tick; everything else is flushed when a
power or controller transition closes a regime, and at the end of the
run. The resulting store content is identical to sampling second by
second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .allocman import (
    ANY_PRODUCTIVE,
    AllocState,
    AllocationManager,
    AllocationRequest,
    OpState,
)
from .devices import CHANNEL_BY_NAME, CHANNELS, DeviceFleet
from .engine import EventLoop
from .netsim import NetworkSim
from .topology import NodeKind, Topology
from .tsstore import TimeSeriesStore, series_key

PROBE_KINDS = ("icmp", "arp")

ANNOTATION_CATEGORIES = ("power_outage", "maintenance", "other")


class MonitorError(Exception):
    pass


class SystemNotFree(MonitorError):
    pass


class UnknownAnnotation(MonitorError):
    pass


@dataclass(frozen=True)
class AlertRule:
    """Threshold over a series, sustained for a duration, per system.

    metric is "telemetry.<channel>", "probe.ok", or the pseudo-metric
    "telemetry.gap" which watches for the sample stream going quiet.
    """

    name: str
    metric: str
    op: str  # "lt" | "gt" | "eq"
    threshold: float
    for_duration_s: float
    severity: str = "warning"


DEFAULT_RULES = (
    AlertRule("analog_power_lost", "telemetry.flag_asic_power_good", "eq", 0.0, 120.0, "critical"),
    AlertRule("analog_undervolt", "telemetry.v6_in", "lt", 5.0, 120.0),
    AlertRule("fpga0_overtemp", "telemetry.t_fpga0", "gt", 85.0, 300.0, "critical"),
    AlertRule("fpga1_overtemp", "telemetry.t_fpga1", "gt", 85.0, 300.0, "critical"),
    AlertRule("fan_stall", "telemetry.fan_rpm", "lt", 3000.0, 300.0),
    AlertRule("telemetry_gap", "telemetry.gap", "lt", 1.0, 180.0),
    AlertRule("probe_loss", "probe.ok", "lt", 1.0, 180.0),
)


@dataclass
class AlertEvent:
    t: float
    rule: str
    system: str
    transition: str  # "firing" | "resolved"
    severity: str
    value: float


@dataclass
class HealthCheck:
    t: float
    system: str
    ok: bool
    flags: dict


@dataclass
class FidelityRun:
    night: int
    t: float
    system: str
    accuracy: float
    degraded: bool


@dataclass
class Annotation:
    id: str
    t_start: float
    t_end: float | None
    category: str
    text: str
    systems: tuple[str, ...] = ()


@dataclass
class MonitorConfig:
    probe_interval_s: float = 60.0
    probe_vlan: int = 4
    eval_interval_s: float = 60.0
    health_interval_s: float = 7200.0
    fidelity_interval_s: float = 86400.0
    fidelity_job_s: float = 600.0
    fidelity_walltime_s: float = 900.0
    # Materialize every channel at each eval tick instead of deferring
    # the ones no alert rule reads. Batch runs leave this off; the HTTP
    # service turns it on so metric queries are never more than one
    # tick stale.
    eager_flush: bool = False


class _RuleState:
    __slots__ = ("breach_start", "firing")

    def __init__(self):
        self.breach_start: float | None = None
        self.firing = False


_OPS = {
    "lt": lambda v, th: v < th,
    "gt": lambda v, th: v > th,
    "eq": lambda v, th: v == th,
}


class Monitor:
    def __init__(
        self,
        topo: Topology,
        loop: EventLoop,
        net: NetworkSim,
        fleet: DeviceFleet,
        alloc: AllocationManager,
        store: TimeSeriesStore,
        config: MonitorConfig | None = None,
        rules: tuple[AlertRule, ...] = DEFAULT_RULES,
    ):
        self.topo = topo
        self.loop = loop
        self.net = net
        self.fleet = fleet
        self.alloc = alloc
        self.store = store
        self.cfg = config or MonitorConfig()
        self.rules = rules
        hosts = topo.nodes_of_kind(NodeKind.MONITOR_HOST)
        if not hosts:
            raise MonitorError("fleet has no monitor host")
        self.host = hosts[0].id
        self.systems = sorted(topo.systems)
        self.duration: float | None = None

        fast_names = set()
        for r in rules:
            if r.op not in _OPS:
                raise ValueError(f"rule {r.name}: unknown op {r.op!r}")
            if r.metric.startswith("telemetry.") and r.metric != "telemetry.gap":
                ch = r.metric.split(".", 1)[1]
                if ch not in CHANNEL_BY_NAME:
                    raise ValueError(f"rule {r.name}: unknown channel {ch!r}")
                fast_names.add(ch)
        self._fast = tuple(c for c in CHANNELS if c.name in fast_names)
        self._slow = tuple(c for c in CHANNELS if c.name not in fast_names)
        self._keys = {
            (sid, c.name): series_key(f"telemetry.{c.name}", system=sid)
            for sid in self.systems
            for c in CHANNELS
        }
        self._next_fast = {sid: 0 for sid in self.systems}
        self._next_slow = {sid: 0 for sid in self.systems}
        self._last_report = {sid: -1 for sid in self.systems}
        self._gap_open = {sid: False for sid in self.systems}
        self._gap_resume: dict[str, float | None] = {sid: None for sid in self.systems}
        self._rule_state = {
            (r.name, sid): _RuleState() for r in rules for sid in self.systems
        }
        self._last_eval_hi = 0

        self.alerts: list[AlertEvent] = []
        self.health_log: list[HealthCheck] = []
        self.fidelity_log: list[FidelityRun] = []
        # sid -> (t_finalized, answered fraction, mean rtt of the answered)
        self.last_probe: dict[str, tuple[float, float, float | None]] = {}
        self.annotations: dict[str, Annotation] = {}
        self._ann_seq = 0
        self.counters = {
            "probe_cycles": 0,
            "probes_sent": 0,
            "probes_answered": 0,
            "probes_lost": 0,
            "health_checks": 0,
            "fidelity_runs": 0,
            "evals": 0,
            "alerts_fired": 0,
            "alerts_resolved": 0,
        }

    # -- lifecycle -----------------------------------------------------------------

    def start(self, duration: float) -> None:
        """Schedule all cadences from t=0. Call once per run."""
        self.duration = duration
        # Health before the nightly launch so the t=0 check still sees a
        # fully free fleet.
        self.loop.schedule(0.0, self._eval_tick, None)
        self.loop.schedule(0.0, self._probe_cycle, None)
        self.loop.schedule(0.0, self._health_tick, None)
        self.loop.schedule(0.0, self._fidelity_tick, 0)

    def finish(self) -> None:
        """Flush remaining telemetry and run a last alert pass."""
        self.sync()
        self._evaluate(self._clip_hi())

    # -- telemetry materialization ------------------------------------------------------

    def _clip_hi(self) -> int:
        hi = int(math.ceil(self.loop.now))
        if self.duration is not None:
            hi = min(hi, int(self.duration))
        return hi

    def _flush(self, sid: str, hi: int, chans, next_map) -> None:
        lo = next_map[sid]
        if hi <= lo:
            return
        next_map[sid] = hi
        reporting, analog_ok = self.fleet.telemetry_mode(sid)
        track = next_map is self._next_fast
        if not reporting:
            if track:
                self._gap_open[sid] = True
            return
        secs = np.arange(lo, hi, dtype=np.uint64)
        for ch in chans:
            vals = self.fleet.sample_channel(sid, ch, secs, analog_ok)
            self.store.ingest_regular(self._keys[(sid, ch.name)], float(lo), 1.0, vals)
        if track:
            if self._gap_open[sid]:
                self._gap_resume[sid] = float(lo)
                self._gap_open[sid] = False
            self._last_report[sid] = hi - 1

    def sync(self) -> None:
        """Materialize every channel up to the current instant.

        Fault handlers call this before a power or controller state
        change so the closed regime's samples are generated under the
        regime that actually held.
        """
        hi = self._clip_hi()
        for sid in self.systems:
            self._flush(sid, hi, self._fast, self._next_fast)
            self._flush(sid, hi, self._slow, self._next_slow)

    # -- alert evaluation ---------------------------------------------------------------

    def _eval_tick(self, _arg) -> None:
        t = self.loop.now
        hi = self._clip_hi()
        for sid in self.systems:
            self._flush(sid, hi, self._fast, self._next_fast)
            if self.cfg.eager_flush:
                self._flush(sid, hi, self._slow, self._next_slow)
        self._evaluate(hi)
        self.counters["evals"] += 1
        nxt = t + self.cfg.eval_interval_s
        if self.duration is not None and nxt < self.duration:
            self.loop.schedule(nxt, self._eval_tick, None)

    def _evaluate(self, hi: int) -> None:
        lo = self._last_eval_hi
        if hi <= lo:
            return
        self._last_eval_hi = hi
        for rule in self.rules:
            if rule.metric == "telemetry.gap":
                self._eval_gap(rule, hi)
                continue
            for sid in self.systems:
                if rule.metric == "probe.ok":
                    key = series_key("probe.ok", system=sid)
                else:
                    key = self._keys[(sid, rule.metric.split(".", 1)[1])]
                st = self._rule_state[(rule.name, sid)]
                ts, vs = self.store.read(key, (float(lo), float(hi)))
                if len(vs) == 0:
                    continue
                op = _OPS[rule.op]
                mask = op(vs, rule.threshold)
                if st.breach_start is None and not st.firing and not mask.any():
                    continue
                self._walk(rule, sid, st, ts, vs, mask)

    def _walk(self, rule: AlertRule, sid: str, st: _RuleState, ts, vs, mask) -> None:
        for t, v, breach in zip(ts, vs, mask):
            if breach:
                if st.breach_start is None:
                    st.breach_start = float(t)
                fire_t = st.breach_start + rule.for_duration_s
                if not st.firing and t >= fire_t:
                    st.firing = True
                    self._transition(fire_t, rule, sid, "firing", float(v))
            else:
                if st.firing:
                    self._transition(float(t), rule, sid, "resolved", float(v))
                st.firing = False
                st.breach_start = None

    def _eval_gap(self, rule: AlertRule, hi: int) -> None:
        for sid in self.systems:
            st = self._rule_state[(rule.name, sid)]
            resume = self._gap_resume[sid]
            if resume is not None:
                if st.firing:
                    self._transition(resume, rule, sid, "resolved", 0.0)
                st.firing = False
                st.breach_start = None
                self._gap_resume[sid] = None
            gap_start = self._last_report[sid] + 1
            if not st.firing and hi - gap_start >= rule.for_duration_s and hi > gap_start:
                st.firing = True
                st.breach_start = float(gap_start)
                self._transition(
                    gap_start + rule.for_duration_s, rule, sid, "firing", rule.for_duration_s
                )

    def _transition(self, t: float, rule: AlertRule, sid: str, kind: str, value: float) -> None:
        self.alerts.append(AlertEvent(t, rule.name, sid, kind, rule.severity, value))
        self.counters["alerts_fired" if kind == "firing" else "alerts_resolved"] += 1

    def active_alerts(self) -> list[AlertEvent]:
        """Latest firing transition per (rule, system) not yet resolved."""
        live: dict[tuple[str, str], AlertEvent] = {}
        for ev in self.alerts:
            if ev.transition == "firing":
                live[(ev.rule, ev.system)] = ev
            else:
                live.pop((ev.rule, ev.system), None)
        return sorted(live.values(), key=lambda e: (e.t, e.rule, e.system))

    # -- probe cycles --------------------------------------------------------------

    def _probe_cycle(self, _arg) -> None:
        t = self.loop.now
        results: dict[str, list] = {}
        issued: dict[str, int] = {}
        for sid in self.systems:
            if self.alloc.op_state(sid).op is OpState.DRAINED:
                continue
            sysd = self.topo.systems[sid]
            for fi, fpga in enumerate(sysd.fpgas):
                for kind in PROBE_KINDS:
                    self.net.issue_probe(
                        self.host, fpga, self.cfg.probe_vlan,
                        self._probe_cb(results, sid, fi, kind), kind,
                    )
                    self.counters["probes_sent"] += 1
                    issued[sid] = issued.get(sid, 0) + 1
        self.counters["probe_cycles"] += 1
        self.loop.schedule(t + self.net.probe_timeout, self._probe_finalize, (results, issued))
        nxt = t + self.cfg.probe_interval_s
        if self.duration is not None and nxt < self.duration:
            self.loop.schedule(nxt, self._probe_cycle, None)

    @staticmethod
    def _probe_cb(results: dict, sid: str, fi: int, kind: str):
        def cb(rtt):
            results.setdefault(sid, []).append((fi, kind, rtt))

        return cb

    def _probe_finalize(self, arg) -> None:
        results, issued = arg
        tf = self.loop.now
        for sid in sorted(issued):
            got = results.get(sid, [])
            rtts = [rtt for _, _, rtt in got if rtt is not None]
            answered = len(rtts)
            self.counters["probes_answered"] += answered
            self.counters["probes_lost"] += issued[sid] - answered
            self.store.ingest(series_key("probe.ok", system=sid), tf, answered / issued[sid])
            self.last_probe[sid] = (
                tf,
                answered / issued[sid],
                sum(rtts) / answered if answered else None,
            )
            for fi, kind, rtt in got:
                if rtt is not None:
                    self.store.ingest(
                        series_key("probe.rtt", fpga=fi, kind=kind, system=sid), tf, rtt
                    )

    # -- health checks ---------------------------------------------------------------

    def _health_tick(self, _arg) -> None:
        t = self.loop.now
        for sid in self.systems:
            if self.alloc.op_state(sid).op is not OpState.FREE:
                continue
            self._run_health(sid, t)
        nxt = t + self.cfg.health_interval_s
        if self.duration is not None and nxt < self.duration:
            self.loop.schedule(nxt, self._health_tick, None)

    def _run_health(self, sid: str, t: float) -> HealthCheck:
        if self.fleet.controller_reporting(sid):
            flags = self.fleet.health_flags(sid)
            ok = all(flags.values())
        else:
            flags = {"controller_unreachable": True}
            ok = False
        check = HealthCheck(t, sid, ok, flags)
        self.health_log.append(check)
        self.store.ingest(series_key("health.ok", system=sid), t, 1.0 if ok else 0.0)
        self.counters["health_checks"] += 1
        return check

    def trigger_health_check(self, sid: str) -> HealthCheck:
        """Run one health check now; the system must be unallocated."""
        if self.alloc.op_state(sid).op is not OpState.FREE:
            raise SystemNotFree(sid)
        return self._run_health(sid, self.loop.now)

    # -- nightly calibration ---------------------------------------------------------

    def _fidelity_tick(self, night: int) -> None:
        t = self.loop.now
        req = AllocationRequest("monitor", self.host, ANY_PRODUCTIVE, self.cfg.fidelity_walltime_s)
        alloc = self.alloc.submit_request(req)
        if alloc.state is AllocState.ACTIVE:
            self.loop.schedule(t + self.cfg.fidelity_job_s, self._fidelity_done, (alloc, night))
        else:
            def when_active(a, n=night):
                self.loop.schedule(
                    self.loop.now + self.cfg.fidelity_job_s, self._fidelity_done, (a, n)
                )

            self.alloc.on_activate[alloc.id] = when_active
        nxt = t + self.cfg.fidelity_interval_s
        if self.duration is not None and nxt < self.duration:
            self.loop.schedule(nxt, self._fidelity_tick, night + 1)

    def _fidelity_done(self, arg) -> None:
        alloc, night = arg
        if alloc.state is not AllocState.ACTIVE:
            return
        sid = alloc.system
        accuracy = self.fleet.fidelity_accuracy(sid, night)
        t = self.loop.now
        self.fidelity_log.append(FidelityRun(night, t, sid, accuracy, accuracy < 0.90))
        self.store.ingest(series_key("fidelity.accuracy", system=sid), t, accuracy)
        self.counters["fidelity_runs"] += 1
        self.alloc.release(alloc.id)

    # -- annotations --------------------------------------------------------------------

    def add_annotation(
        self,
        t_start: float,
        category: str,
        text: str,
        t_end: float | None = None,
        systems: tuple[str, ...] = (),
    ) -> Annotation:
        if category not in ANNOTATION_CATEGORIES:
            raise ValueError(
                f"category must be one of {ANNOTATION_CATEGORIES}, got {category!r}"
            )
        if t_end is not None and t_end < t_start:
            raise ValueError("annotation cannot end before it starts")
        for sid in systems:
            if sid not in self.topo.systems:
                raise ValueError(f"unknown system {sid!r}")
        self._ann_seq += 1
        ann = Annotation(f"n{self._ann_seq:04d}", t_start, t_end, category, text, tuple(systems))
        self.annotations[ann.id] = ann
        return ann

    def close_annotation(self, ann_id: str, t_end: float) -> Annotation:
        ann = self.annotations.get(ann_id)
        if ann is None:
            raise UnknownAnnotation(ann_id)
        if t_end < ann.t_start:
            raise ValueError("annotation cannot end before it starts")
        ann.t_end = t_end
        return ann

    def list_annotations(self, span: tuple[float, float] | None = None) -> list[Annotation]:
        out = sorted(self.annotations.values(), key=lambda a: (a.t_start, a.id))
        if span is None:
            return out
        t0, t1 = span
        return [
            a
            for a in out
            if a.t_start < t1 and (a.t_end is None or a.t_end >= t0)
        ]
