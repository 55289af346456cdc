"""Fault scenarios: what breaks, when, and what it takes down with it.

A scenario file is a JSON description of a run: duration, workload
flows, allocations, pipelines, extra probe schedules, faults and the
named checks to evaluate afterwards. Fault kinds cover the failure
domains that matter operationally: a flooding traffic source, loss of a
drawer's 12 V feed, loss of one system's analog 6 V feed, a dead link, a
hung controller, and a full site outage with staggered recovery.

Every fault is applied and reverted through the same injector so the
apply/revert pair restores the exact pre-fault behaviour.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import rng
from .netsim import MAX_FRAME, MIN_FRAME, FlowSpec, NetworkSim
from .topology import Topology

FAULT_KINDS = (
    "dos_flood",
    "drawer_power_fail",
    "analog_power_fail",
    "link_down",
    "controller_hang",
    "site_outage",
)

SITE_RECOVERY_MAX_S = 60.0


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class FaultEvent:
    kind: str
    t: float
    duration_s: float | None = None  # None means it never reverts
    target: str | None = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScheduledAllocation:
    t: float
    user: str
    node: str
    selector: str
    walltime_s: float


@dataclass(frozen=True)
class ScheduledProbe:
    t: float
    src: str
    dst: str
    vlan: int
    count: int = 1
    interval_s: float = 1.0
    kind: str = "icmp"


@dataclass(frozen=True)
class CicdOp:
    t: float
    op: str  # "submit" | "approve"
    kind: str | None = None
    revision: str | None = None
    pipeline: str | None = None
    outcomes: dict = field(default_factory=dict)
    base_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    seed: int = 0
    description: str = ""
    monitoring: bool = True
    record_deliveries: bool = False
    grace_s: float = 1.5
    flows: tuple[FlowSpec, ...] = ()
    allocations: tuple[ScheduledAllocation, ...] = ()
    faults: tuple[FaultEvent, ...] = ()
    cicd: tuple[CicdOp, ...] = ()
    probes: tuple[ScheduledProbe, ...] = ()
    checks: tuple[dict, ...] = ()


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def _time_in(t: float, duration: float, what: str) -> None:
    _require(0 <= t <= duration, f"{what}: t={t} outside [0, {duration}]")


def load_scenario(source, topo: Topology | None = None) -> Scenario:
    """Parse and validate a scenario from a dict, path, or packaged name."""
    if isinstance(source, dict):
        raw = source
        label = raw.get("name", "<dict>")
    else:
        path = Path(source)
        if not path.exists():
            packaged = scenario_path(str(source))
            if packaged is None:
                raise ScenarioError(f"no scenario file or packaged scenario {source!r}")
            path = packaged
        label = str(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ScenarioError(f"{label}: not valid JSON ({e})") from e

    _require(isinstance(raw, dict), f"{label}: top level must be an object")
    for key in ("name", "duration_s"):
        _require(key in raw, f"{label}: missing required field {key!r}")
    duration = float(raw["duration_s"])
    _require(duration > 0, f"{label}: duration must be positive")

    known = {
        "name", "description", "seed", "duration_s", "monitoring",
        "record_deliveries", "grace_s", "flows", "allocations", "faults",
        "cicd", "probes", "checks",
    }
    unknown = set(raw) - known
    _require(not unknown, f"{label}: unknown fields {sorted(unknown)}")

    def node_ok(n: str) -> bool:
        return topo is None or n in topo.nodes

    flows = []
    for i, f in enumerate(raw.get("flows", ())):
        where = f"{label}: flows[{i}]"
        try:
            spec = FlowSpec(
                id=f["id"],
                src=f["src"],
                dst=f["dst"],
                vlan=int(f["vlan"]),
                mode=f.get("mode", "constant"),
                rate_bps=float(f.get("rate_bps", 0.0)),
                frame_size=int(f.get("frame_size", 1500)),
                start=float(f.get("start", 0.0)),
                stop=float(f.get("stop", duration)),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ScenarioError(f"{where}: {e}") from e
        _require(1 <= spec.vlan <= 4, f"{where}: vlan {spec.vlan} outside 1..4")
        _require(node_ok(spec.src), f"{where}: unknown src node {spec.src!r}")
        _require(node_ok(spec.dst), f"{where}: unknown dst node {spec.dst!r}")
        _time_in(spec.start, duration, where)
        flows.append(spec)
    _require(
        len({f.id for f in flows}) == len(flows), f"{label}: duplicate flow ids"
    )

    allocations = []
    for i, a in enumerate(raw.get("allocations", ())):
        where = f"{label}: allocations[{i}]"
        try:
            op = ScheduledAllocation(
                float(a["t"]), a["user"], a["node"], a["selector"], float(a["walltime_s"])
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ScenarioError(f"{where}: {e}") from e
        _time_in(op.t, duration, where)
        _require(op.walltime_s > 0, f"{where}: walltime must be positive")
        _require(node_ok(op.node), f"{where}: unknown node {op.node!r}")
        if topo is not None and op.selector != "any_productive":
            _require(op.selector in topo.systems, f"{where}: unknown system {op.selector!r}")
        allocations.append(op)

    faults = []
    for i, f in enumerate(raw.get("faults", ())):
        where = f"{label}: faults[{i}]"
        kind = f.get("kind")
        _require(kind in FAULT_KINDS, f"{where}: unknown fault kind {kind!r}")
        try:
            ev = FaultEvent(
                kind,
                float(f["t"]),
                None if f.get("duration_s") is None else float(f["duration_s"]),
                f.get("target"),
                dict(f.get("params", {})),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ScenarioError(f"{where}: {e}") from e
        _time_in(ev.t, duration, where)
        if ev.duration_s is not None:
            _require(ev.duration_s > 0, f"{where}: duration must be positive")
        if topo is not None:
            if kind == "drawer_power_fail":
                _require(ev.target in topo.drawers, f"{where}: unknown drawer {ev.target!r}")
            elif kind in ("analog_power_fail", "controller_hang"):
                _require(ev.target in topo.systems, f"{where}: unknown system {ev.target!r}")
            elif kind == "link_down":
                _require(ev.target in topo.links, f"{where}: unknown link {ev.target!r}")
            elif kind == "dos_flood":
                for k in ("src", "dst"):
                    _require(k in ev.params, f"{where}: dos_flood needs params.{k}")
                    _require(node_ok(ev.params[k]), f"{where}: unknown node {ev.params[k]!r}")
                fs = int(ev.params.get("frame_size", 1500))
                _require(MIN_FRAME <= fs <= MAX_FRAME, f"{where}: bad frame size {fs}")
        faults.append(ev)

    cicd = []
    for i, c in enumerate(raw.get("cicd", ())):
        where = f"{label}: cicd[{i}]"
        op = c.get("op")
        _require(op in ("submit", "approve"), f"{where}: unknown op {op!r}")
        if op == "submit":
            _require(c.get("kind") in ("bitfile", "software"), f"{where}: bad pipeline kind")
            _require(bool(c.get("revision")), f"{where}: submit needs a revision")
        else:
            _require(bool(c.get("pipeline")), f"{where}: approve needs a pipeline id")
        try:
            cop = CicdOp(
                float(c["t"]), op, c.get("kind"), c.get("revision"),
                c.get("pipeline"), dict(c.get("outcomes", {})),
                dict(c.get("base_overrides", {})),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ScenarioError(f"{where}: {e}") from e
        _time_in(cop.t, duration, where)
        cicd.append(cop)

    probes = []
    for i, p in enumerate(raw.get("probes", ())):
        where = f"{label}: probes[{i}]"
        try:
            pr = ScheduledProbe(
                float(p["t"]), p["src"], p["dst"], int(p["vlan"]),
                int(p.get("count", 1)), float(p.get("interval_s", 1.0)),
                p.get("kind", "icmp"),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ScenarioError(f"{where}: {e}") from e
        _time_in(pr.t, duration, where)
        _require(pr.count >= 1, f"{where}: count must be >= 1")
        _require(node_ok(pr.src), f"{where}: unknown src {pr.src!r}")
        _require(node_ok(pr.dst), f"{where}: unknown dst {pr.dst!r}")
        probes.append(pr)

    from .checks import REGISTRY

    checks = []
    for i, c in enumerate(raw.get("checks", ())):
        where = f"{label}: checks[{i}]"
        _require(isinstance(c, dict) and "name" in c, f"{where}: checks need a name")
        _require(c["name"] in REGISTRY, f"{where}: unknown check {c['name']!r}")
        checks.append(dict(c))

    return Scenario(
        name=raw["name"],
        duration_s=duration,
        seed=int(raw.get("seed", 0)),
        description=raw.get("description", ""),
        monitoring=bool(raw.get("monitoring", True)),
        record_deliveries=bool(raw.get("record_deliveries", False)),
        grace_s=float(raw.get("grace_s", 1.5)),
        flows=tuple(flows),
        allocations=tuple(allocations),
        faults=tuple(faults),
        cicd=tuple(cicd),
        probes=tuple(probes),
        checks=tuple(checks),
    )


def scenario_path(name: str) -> Path | None:
    base = resources.files("fleetops") / "scenarios" / f"{name}.json"
    p = Path(str(base))
    return p if p.exists() else None


def list_scenarios() -> list[str]:
    base = Path(str(resources.files("fleetops") / "scenarios"))
    return sorted(p.stem for p in base.glob("*.json"))


# -- power propagation ----------------------------------------------------------------


def power_propagate(
    topo: Topology,
    dc12_failed: set[str] = frozenset(),
    ac6_failed: set[str] = frozenset(),
    site_outage: bool = False,
) -> frozenset[str]:
    """Components left dark by the given feed failures.

    A drawer feed powers the FPGAs and controllers of both systems in
    the drawer (six components); the leaf switch above them has its own
    feed and stays up. An analog feed failure darkens just that system's
    ASIC, written as "<system>:asic". A site outage takes everything.
    """
    if site_outage:
        dark = set(topo.nodes)
        dark.update(f"{sid}:asic" for sid in topo.systems)
        return frozenset(dark)
    dark: set[str] = set()
    for did in dc12_failed:
        drawer = topo.drawers[did]
        for sid in drawer.systems:
            sysd = topo.systems[sid]
            dark.add(sysd.controller)
            dark.update(sysd.fpgas)
    for sid in ac6_failed:
        dark.add(f"{sid}:asic")
    return frozenset(dark)


# -- injection ---------------------------------------------------------------------------


class FaultInjector:
    """Applies scenario faults to the live simulation and reverts them.

    Telemetry is flushed through the monitor before any device state
    changes so samples preceding the fault are generated under the
    regime that actually held.
    """

    def __init__(self, topo, loop, net: NetworkSim, fleet, monitor=None, seed: int = 0):
        self.topo = topo
        self.loop = loop
        self.net = net
        self.fleet = fleet
        self.monitor = monitor
        self.seed = seed
        self.log: list[dict] = []
        self._dos_seq = 0
        self._dos_flows: dict[int, str] = {}

    def schedule(self, faults) -> None:
        for idx, ev in enumerate(faults):
            self.loop.schedule(ev.t, self._apply, (idx, ev))
            if ev.duration_s is not None:
                self.loop.schedule(ev.t + ev.duration_s, self._revert, (idx, ev))

    def _sync(self) -> None:
        if self.monitor is not None:
            self.monitor.sync()

    def _note(self, phase: str, ev: FaultEvent, target=None) -> None:
        self.log.append(
            {
                "t": self.loop.now,
                "kind": ev.kind,
                "target": target if target is not None else ev.target,
                "phase": phase,
            }
        )

    # apply / revert pairs

    def _apply(self, arg) -> None:
        idx, ev = arg
        getattr(self, f"_apply_{ev.kind}")(idx, ev)
        self._note("apply", ev)

    def _revert(self, arg) -> None:
        idx, ev = arg
        getattr(self, f"_revert_{ev.kind}")(idx, ev)
        self._note("revert", ev)

    def _apply_dos_flood(self, idx: int, ev: FaultEvent) -> None:
        self._dos_seq += 1
        fid = f"dos{self._dos_seq:02d}"
        self._dos_flows[idx] = fid
        p = ev.params
        stop = ev.t + ev.duration_s if ev.duration_s is not None else float("inf")
        self.net.add_flow(
            FlowSpec(
                id=fid,
                src=p["src"],
                dst=p["dst"],
                vlan=int(p.get("vlan", 4)),
                mode=p.get("mode", "backlogged"),
                rate_bps=float(p.get("rate_bps", 0.0)),
                frame_size=int(p.get("frame_size", 1500)),
                start=ev.t,
                stop=stop,
            )
        )

    def _revert_dos_flood(self, idx: int, ev: FaultEvent) -> None:
        fid = self._dos_flows.pop(idx, None)
        if fid is not None:
            self.net.stop_flow(fid)

    def _apply_drawer_power_fail(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.dc12_failed.add(ev.target)
        for node in sorted(power_propagate(self.topo, {ev.target})):
            self.net.set_node_power(node, False)

    def _revert_drawer_power_fail(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.dc12_failed.discard(ev.target)
        for node in sorted(power_propagate(self.topo, {ev.target})):
            self.net.set_node_power(node, True)
        self.net.rekick_backlogged()

    def _apply_analog_power_fail(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.ac6_failed.add(ev.target)

    def _revert_analog_power_fail(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.ac6_failed.discard(ev.target)

    def _apply_controller_hang(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.hung.add(ev.target)

    def _revert_controller_hang(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.hung.discard(ev.target)

    def _apply_link_down(self, idx: int, ev: FaultEvent) -> None:
        self.net.set_link_down(ev.target, True)

    def _revert_link_down(self, idx: int, ev: FaultEvent) -> None:
        self.net.set_link_down(ev.target, False)
        self.net.rekick_backlogged()

    def _apply_site_outage(self, idx: int, ev: FaultEvent) -> None:
        self._sync()
        self.fleet.site_outage = True
        dark = power_propagate(self.topo, site_outage=True)
        self.fleet.dark_nodes.update(dark)
        for node in sorted(n for n in dark if ":asic" not in n):
            self.net.set_node_power(node, False)

    def _revert_site_outage(self, idx: int, ev: FaultEvent) -> None:
        # Feeds come back over a staggered window, component by component.
        self.fleet.site_outage = False
        for comp in sorted(self.fleet.dark_nodes):
            delay = rng.uniform(0.0, SITE_RECOVERY_MAX_S, self.seed, "recovery", comp)
            self.loop.schedule(self.loop.now + delay, self._recover_component, (ev, comp))

    def _recover_component(self, arg) -> None:
        ev, comp = arg
        if comp not in self.fleet.dark_nodes:
            return
        self._sync()
        self.fleet.dark_nodes.discard(comp)
        if ":asic" not in comp:
            self.net.set_node_power(comp, True)
        self.net.rekick_backlogged()
        self._note("recovered", ev, target=comp)
