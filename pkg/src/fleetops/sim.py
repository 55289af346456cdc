"""One object that wires the whole fleet together and runs a scenario.

The Simulation owns the event loop, network, device fleet, allocator,
monitor, delivery pipelines and fault injector, schedules everything a
scenario asks for, and runs to the scenario horizon plus a short drain
window for frames still in flight. Identical (topology, scenario, seed)
inputs produce byte-identical logs and therefore an identical trace
hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time

from .allocman import AllocationManager, AllocationRequest
from .cicd import CiCd, NotVotedPositive
from .devices import DeviceFleet
from .engine import EventLoop
from .faults import FaultInjector, Scenario
from .monitor import Monitor
from .netsim import NetworkSim
from .topology import NodeKind, Topology, load_default_fleet
from .tsstore import TimeSeriesStore


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


@dataclasses.dataclass
class RunReport:
    scenario: str
    seed: int
    duration_s: float
    wall_s: float
    events: int
    trace_hash: str
    counters: dict


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        topo: Topology | None = None,
        seed: int | None = None,
        monitor_config=None,
    ):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.topo = topo if topo is not None else load_default_fleet()
        self.loop = EventLoop()
        self.store = TimeSeriesStore()
        self.net = NetworkSim(
            self.topo, self.loop, record_deliveries=scenario.record_deliveries
        )
        self.fleet = DeviceFleet(self.topo, self.seed)
        self.alloc = AllocationManager(self.topo, self.loop)
        self.net.permit = self.alloc.permit_frame
        self.net.node_powered = self.fleet.node_powered
        self.monitor = (
            Monitor(
                self.topo, self.loop, self.net, self.fleet, self.alloc, self.store,
                config=monitor_config,
            )
            if scenario.monitoring
            else None
        )
        self.cicd = CiCd(self.loop, self.alloc, self.fleet, self.seed)
        self.injector = FaultInjector(
            self.topo, self.loop, self.net, self.fleet, self.monitor, self.seed
        )
        self.probe_log: list[dict] = []
        self._started = False
        self._finished = False

    # -- scheduling ------------------------------------------------------------------

    def _schedule_scenario(self) -> None:
        sc = self.scenario
        if self.monitor is not None:
            self.monitor.start(sc.duration_s)
        for spec in sc.flows:
            self.net.add_flow(spec)
        for a in sc.allocations:
            self.loop.schedule(a.t, self._submit_allocation, a)
        self.injector.schedule(sc.faults)
        for op in sc.cicd:
            if op.op == "submit":
                self.loop.schedule(op.t, self._submit_pipeline, op)
            else:
                self.loop.schedule(op.t, self._approve_pipeline, op)
        for pr in sc.probes:
            for i in range(pr.count):
                self.loop.schedule(pr.t + i * pr.interval_s, self._issue_probe, pr)

    def _submit_allocation(self, a) -> None:
        self.alloc.submit_request(
            AllocationRequest(a.user, a.node, a.selector, a.walltime_s)
        )

    def _submit_pipeline(self, op) -> None:
        self.cicd.submit(op.kind, op.revision, op.outcomes, op.base_overrides)

    def _approve_pipeline(self, op) -> None:
        try:
            self.cicd.approve(op.pipeline)
        except NotVotedPositive:
            # An operator approving a pipeline that already failed its
            # vote is a legal no-op; the gate simply rejects it.
            pass

    def _issue_probe(self, pr) -> None:
        t_sent = self.loop.now

        def done(rtt, pr=pr, t_sent=t_sent):
            self.probe_log.append(
                {
                    "t": t_sent,
                    "src": pr.src,
                    "dst": pr.dst,
                    "vlan": pr.vlan,
                    "kind": pr.kind,
                    "rtt": rtt,
                }
            )

        self.net.issue_probe(pr.src, pr.dst, pr.vlan, done, pr.kind)

    # -- run -------------------------------------------------------------------------

    def prepare(self) -> None:
        """Schedule the scenario; the caller drives the loop afterwards."""
        assert not self._started, "a Simulation instance runs once"
        self._started = True
        self._schedule_scenario()

    def finalize(self) -> None:
        """Flush monitoring, drain in-flight frames, audit conservation."""
        if self._finished:
            return
        sc = self.scenario
        if self.monitor is not None:
            self.monitor.finish()
        self.loop.run_until(sc.duration_s + sc.grace_s)
        self.net.audit_conservation()
        self._finished = True

    def run(self) -> RunReport:
        t0 = time.perf_counter()
        self.prepare()
        sc = self.scenario
        self.loop.run_until(sc.duration_s)
        self.finalize()
        wall = time.perf_counter() - t0
        return RunReport(
            scenario=sc.name,
            seed=self.seed,
            duration_s=sc.duration_s,
            wall_s=wall,
            events=self.loop.processed,
            trace_hash=self.trace_hash(),
            counters=self.counters(),
        )

    def counters(self) -> dict:
        net = self.net
        out = {
            "events": self.loop.processed,
            "net": {
                "offered_frames": net.offered_frames,
                "offered_bytes": net.offered_bytes,
                "delivered_frames": net.delivered_frames,
                "delivered_bytes": net.delivered_bytes,
                "dropped_frames": net.dropped_frames,
                "dropped_bytes": net.dropped_bytes,
                "drops": dict(sorted(net.drops.items())),
            },
            "alloc": {
                "generation": self.alloc.generation,
                "log_entries": len(self.alloc.log),
            },
            "cicd": {
                "pipelines": len(self.cicd.pipelines),
                "log_entries": len(self.cicd.log),
            },
        }
        if self.monitor is not None:
            out["monitor"] = dict(self.monitor.counters)
        return out

    def trace_dict(self) -> dict:
        """Everything the offline replay oracles consume, JSON-serializable.

        `fleetops run --out` dumps this as trace.json; `fleetops replay`
        loads it back and re-runs the firewall and CI gate oracles
        without the simulation objects.
        """
        return {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "duration_s": self.scenario.duration_s,
            "exempt_nodes": sorted(
                n.id
                for n in self.topo.nodes.values()
                if n.kind is NodeKind.MONITOR_HOST
            ),
            "system_of_endpoint": dict(self.topo.system_of_endpoint),
            "alloc_log": self.alloc.log,
            "allocations": [
                {"id": a.id, "user": a.user, "state": a.state.value}
                for a in self.alloc.allocations.values()
            ],
            "deliveries": self.net.delivery_log,
            "firewall_drops": self.net.firewall_drop_log,
            "cicd_log": self.cicd.log,
            "pipelines": [
                {
                    "id": p.id,
                    "kind": p.kind,
                    "order": list(p.order),
                    "state": p.state.value,
                    "vote": p.vote,
                    "approved": p.approved,
                    "artifact": p.artifact,
                    "artifact_verified": (
                        self.cicd.staging.verify(p.artifact) if p.artifact else None
                    ),
                }
                for _pid, p in sorted(self.cicd.pipelines.items())
            ],
            "probe_log": self.probe_log,
        }

    # -- hashing -----------------------------------------------------------------------

    def trace_hash(self) -> str:
        """Digest of everything observable a run produced.

        Two runs of the same (topology, scenario, seed) triple must
        produce the same value; anything order- or time-dependent that
        sneaks into the logs shows up here first.
        """
        h = hashlib.sha256()
        h.update(_canonical(self.alloc.log).encode())
        h.update(_canonical(self.cicd.log).encode())
        h.update(_canonical(self.injector.log).encode())
        h.update(_canonical(self.probe_log).encode())
        h.update(_canonical(self.counters()).encode())
        h.update(_canonical(self.net.firewall_drop_log).encode())
        flows = {
            fid: {
                "offered": st.offered_frames,
                "delivered": st.delivered_frames,
                "drops": dict(sorted(st.drops.items())),
            }
            for fid, st in sorted(self.net.flow_stats.items())
        }
        h.update(_canonical(flows).encode())
        link_bytes = {
            f"{l}|{n}|{v}": b
            for (l, n, v), b in sorted(self.net.link_vlan_bytes().items())
        }
        h.update(_canonical(link_bytes).encode())
        if self.monitor is not None:
            mon = self.monitor
            h.update(_canonical([dataclasses.astuple(a) for a in mon.alerts]).encode())
            h.update(
                _canonical(
                    [(c.t, c.system, c.ok, sorted(c.flags.items())) for c in mon.health_log]
                ).encode()
            )
            h.update(
                _canonical([dataclasses.astuple(f) for f in mon.fidelity_log]).encode()
            )
            h.update(
                _canonical(
                    [dataclasses.astuple(a) for a in mon.list_annotations()]
                ).encode()
            )
        for key in self.store.keys():
            h.update(key.encode())
            h.update(self.store.digest(key).encode())
        return h.hexdigest()

    def state_hash(self) -> str:
        """Digest of live mutable state; read-only API calls must not move it."""
        h = hashlib.sha256()
        h.update(_canonical(
            {
                "now": self.loop.now,
                "pending": self.loop.pending(),
                "generation": self.alloc.generation,
                "slots": {
                    sid: (s.op.value, s.pending_drain, s.alloc_id)
                    for sid, s in sorted(self.alloc.slots.items())
                },
                "queue": list(self.alloc.queue),
                "pipelines": {
                    pid: p.state.value for pid, p in sorted(self.cicd.pipelines.items())
                },
                "counters": self.counters(),
            }
        ).encode())
        return h.hexdigest()
