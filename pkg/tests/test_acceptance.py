"""Acceptance suite: one test and one printed verdict line per criterion.

Run with -s (or read the -rA summary) to see the PASS lines; any failure
prints the FAIL line for its criterion and surfaces the assertion.
"""

import itertools
import random
import time

import numpy as np
import pytest

from fleetops.allocman import ANY_PRODUCTIVE, AllocationManager, AllocationRequest
from fleetops.checks import cicd_violations, fluid_rate, replay_firewall, run_checks
from fleetops.cicd import CiCd, JOB_CHAIN, NotVotedPositive, PipelineState
from fleetops.devices import CHANNELS, FEED_AC6, DeviceFleet
from fleetops.engine import EventLoop
from fleetops.faults import (
    FaultEvent,
    FaultInjector,
    Scenario,
    ScheduledAllocation,
    list_scenarios,
    load_scenario,
    power_propagate,
    scenario_path,
)
from fleetops.monitor import Monitor
from fleetops.netsim import FlowSpec, NetworkSim, measure_flow
from fleetops.sim import Simulation
from fleetops.topology import FlowDemand, aggregate_demand, load_default_fleet
from fleetops.tsstore import DAY_S, TimeSeriesStore, series_key

TOPO = load_default_fleet()
GBE = 1_000_000_000.0


def _verdict(n: int, title: str, fn):
    try:
        detail = fn()
    except BaseException:
        print(f"FAIL criterion {n}: {title}")
        raise
    print(f"PASS criterion {n}: {title}" + (f" [{detail}]" if detail else ""))


class MonitoredStack:
    """Loop, network, fleet, allocator, store and monitor, hand-wired."""

    def __init__(self, seed: int):
        self.loop = EventLoop()
        self.net = NetworkSim(TOPO, self.loop)
        self.fleet = DeviceFleet(TOPO, seed)
        self.alloc = AllocationManager(TOPO, self.loop)
        self.store = TimeSeriesStore()
        self.net.permit = self.alloc.permit_frame
        self.net.node_powered = self.fleet.node_powered
        self.mon = Monitor(
            TOPO, self.loop, self.net, self.fleet, self.alloc, self.store
        )
        self.injector = FaultInjector(
            TOPO, self.loop, self.net, self.fleet, self.mon, seed
        )

    def run(self, duration: float):
        self.mon.start(duration)
        self.loop.run_until(duration + 2.0)
        self.mon.finish()


def test_criterion_1_dos_resilience():
    def go():
        sc = load_scenario(scenario_path("dos_resilience"), TOPO)
        sim = Simulation(sc, topo=TOPO)
        t0 = time.perf_counter()
        sim.run()
        wall = time.perf_counter() - t0

        results = run_checks(sim)
        assert all(r.passed for r in results), [r.line() for r in results]

        mgmt = sim.net.flow_stats["mgmt1"]
        ratio = mgmt.delivered_frames / mgmt.offered_frames
        assert ratio >= 0.99

        probes = [p for p in sim.probe_log if p["vlan"] == 3]
        assert len(probes) == 8
        assert all(p["rtt"] is not None and p["rtt"] < 0.010 for p in probes)

        flood = measure_flow(sim.net, "dos01", (2.0, 9.0)).throughput_bps
        expect = fluid_rate(sim, "dos01")
        assert abs(flood - expect) <= 0.05 * expect

        assert wall < 30.0
        return (
            f"mgmt {ratio:.4f}, worst rtt {max(p['rtt'] for p in probes)*1e3:.3f} ms, "
            f"flood {flood/1e6:.0f}/{expect/1e6:.0f} Mb/s, {wall:.1f} s wall"
        )

    _verdict(1, "management traffic survives a VLAN 4 flood", go)


def test_criterion_2_line_speed_concurrency():
    def go():
        sc = load_scenario(scenario_path("line_speed"), TOPO)
        sim = Simulation(sc, topo=TOPO)
        t0 = time.perf_counter()
        sim.run()
        wall = time.perf_counter() - t0

        results = run_checks(sim)
        assert all(r.passed for r in results), [r.line() for r in results]

        rates = [
            measure_flow(sim.net, f.id, (0.5, 4.5)).throughput_bps for f in sc.flows
        ]
        assert len(rates) == 32
        assert all(r >= 0.98 * GBE for r in rates)

        demands = [
            FlowDemand(f.src, f.dst, f.vlan, f.rate_bps)
            for f in sc.flows
            if f.mode == "constant"
        ]
        assert aggregate_demand(TOPO, demands).oversubscribed == []

        assert wall < 60.0
        return f"min flow {min(rates)/1e6:.0f} Mb/s of 1000, {wall:.1f} s wall"

    _verdict(2, "all 32 experiment flows hold line rate concurrently", go)


def _random_allocation_scenario(seed: int) -> Scenario:
    rr = random.Random(seed)
    allocations = [
        # three pinned pairs carry the experiment-data flows below
        ScheduledAllocation(0.0, "flows", "cn20", "s10", 3100.0),
        ScheduledAllocation(0.0, "flows", "cn21", "s11", 3100.0),
        ScheduledAllocation(0.0, "flows", "cn22", "s12", 3100.0),
    ]
    for i in range(500):
        allocations.append(
            ScheduledAllocation(
                round(rr.uniform(0.0, 2400.0), 3),
                f"rand{i:03d}",
                rr.choice([f"cn{j:02d}" for j in range(10)]),
                ANY_PRODUCTIVE,
                round(rr.uniform(30.0, 60.0), 3),
            )
        )
    flows = (
        FlowSpec("fx0", "cn20", "s10-fpga0", 4, "constant",
                 rate_bps=1e7, frame_size=9000, start=10.0, stop=610.0),
        FlowSpec("fx1", "cn21", "s11-fpga1", 4, "constant",
                 rate_bps=1e7, frame_size=9000, start=600.0, stop=1200.0),
        FlowSpec("fx2", "cn22", "s12-fpga0", 4, "constant",
                 rate_bps=1e7, frame_size=9000, start=1500.0, stop=2100.0),
        # wrong node for s12: every frame must die at the firewall
        FlowSpec("fdeny", "cn19", "s12-fpga1", 4, "constant",
                 rate_bps=1e7, frame_size=9000, start=0.5, stop=5.5),
    )
    return Scenario(
        name=f"firewall-prop-{seed}",
        duration_s=3000.0,
        seed=seed,
        monitoring=False,
        record_deliveries=True,
        flows=flows,
        allocations=tuple(allocations),
    )


def test_criterion_3_firewall_soundness_and_completeness():
    def go():
        seeds = (11, 12, 13, 14, 15)
        for seed in seeds:
            sim = Simulation(_random_allocation_scenario(seed))
            sim.run()
            sound, complete = replay_firewall(sim.trace_dict())
            assert sound == [], (seed, sound[:3])
            assert complete == [], (seed, complete[:3])

            ops = [
                (e["op"], e["user"]) for e in sim.alloc.log
                if e["user"].startswith("rand")
            ]
            assert sum(op == "activate" for op, _ in ops) == 500
            assert sum(op == "expire" for op, _ in ops) == 500

            assert sim.net.drops.get("firewall", 0) > 0  # deny path exercised
            assert len(sim.net.delivery_log) > 0
        return f"{len(seeds)} seeds, 500 activations + 500 expiries each, 0 violations"

    _verdict(3, "replayed firewall intervals show no stray deliveries or drops", go)


def test_criterion_4_monitoring_cadence_48h():
    def go():
        duration = 172_800.0
        stack = MonitoredStack(seed=4)
        # composed before monitor start so the t=0 health sweep already
        # sees the system allocated
        stack.alloc.submit_request(
            AllocationRequest("perma", "cn00", "s03", duration + 600.0)
        )
        t0 = time.perf_counter()
        stack.run(duration)
        wall = time.perf_counter() - t0

        for sid in TOPO.systems:
            for ch in CHANNELS:
                key = series_key(f"telemetry.{ch.name}", system=sid)
                assert stack.store.count(key, (0.0, duration)) == 172_800, (sid, ch.name)

        c = stack.mon.counters
        assert c["probe_cycles"] == 2880
        assert c["probes_sent"] == 2880 * len(TOPO.systems) * 4
        assert c["probes_lost"] == 0
        assert c["fidelity_runs"] == 2
        assert [f.system for f in stack.mon.fidelity_log] == ["s00", "s00"]

        per_system = {sid: 0 for sid in TOPO.systems}
        for check in stack.mon.health_log:
            per_system[check.system] += 1
        assert per_system.pop("s03") == 0  # allocated for the whole run
        # the nightly fidelity run holds s00 while the 86400 s sweep passes
        assert per_system.pop("s00") == 23
        assert set(per_system.values()) == {24}

        assert stack.mon.alerts == []
        assert wall < 120.0
        return f"172800 samples x {len(TOPO.systems) * len(CHANNELS)} series, {wall:.1f} s wall"

    _verdict(4, "48 h run hits every monitoring cadence exactly", go)


def test_criterion_5_retention_downsampling():
    def go():
        store = TimeSeriesStore()
        key = series_key("telemetry.t_board", system="s09")
        rng = np.random.default_rng(5)
        two_days = 2 * 86_400
        vals = 35.0 + np.sin(np.arange(two_days) / 900.0) + rng.normal(0.0, 0.3, two_days)
        for lo in range(0, two_days, 4096):
            chunk = vals[lo:lo + 4096]
            store.ingest_regular(key, float(lo), 1.0, chunk)

        now = 90 * DAY_S + 86_400.0
        moved, expired = store.enforce_retention(now)
        assert (moved, expired) == (86_400, 0)  # day one, whole
        assert store.enforce_retention(now) == (0, 0)  # idempotent

        aggregated = store.query(key, (0.0, 86_400.0), 60.0)
        assert len(aggregated) == 1440
        assert all(b.count == 60 for b in aggregated)

        span = (86_400.0 - 1800.0, 86_400.0 + 1800.0)
        buckets = store.query(key, span, 60.0)
        assert len(buckets) == 60
        for b in buckets:
            lo, hi = int(b.t), int(b.t) + 60
            window = vals[lo:hi]
            assert b.count == 60
            assert b.min == window.min()
            assert b.max == window.max()
            assert b.mean == pytest.approx(window.mean(), rel=1e-12)
        return "1440 one-minute aggregates, 60 boundary buckets equal brute force"

    _verdict(5, "a day of 1 Hz data ages into exact one-minute aggregates", go)


def test_criterion_6_cicd_gate_lattice():
    def go():
        job_names = ("rtl_sim", "bitfile_build", "sw_build", "hw_test")
        pipelines_checked = 0
        for seed in range(100):
            for bits in itertools.product([True, False], repeat=4):
                want = dict(zip(job_names, bits))
                loop = EventLoop()
                alloc = AllocationManager(TOPO, loop)
                fleet = DeviceFleet(TOPO, seed)
                ci = CiCd(loop, alloc, fleet, seed)
                subs = [
                    ci.submit("bitfile", f"bit-{seed}", outcomes=want),
                    ci.submit("software", f"sw-{seed}", outcomes=want),
                ]
                loop.run_until(100_000.0)
                for p in subs:
                    try:
                        ci.approve(p.id)
                    except NotVotedPositive:
                        pass
                loop.run_until(120_000.0)

                for p in subs:
                    all_pass = all(want[j] for j in JOB_CHAIN[p.kind])
                    assert p.vote == (1 if all_pass else -1), (seed, bits, p.kind)
                    assert (p.state is PipelineState.RELEASED) == all_pass
                    if p.kind == "bitfile" and want["rtl_sim"] and want["bitfile_build"]:
                        jobs = {j.name: j for j in p.job_list()}
                        assert jobs["hw_test"].t_start >= jobs["bitfile_build"].t_end

                trace = {
                    "cicd_log": ci.log,
                    "pipelines": [
                        {
                            "id": p.id,
                            "order": list(p.order),
                            "vote": p.vote,
                            "artifact_verified": (
                                ci.staging.verify(p.artifact) if p.artifact else None
                            ),
                        }
                        for p in subs
                    ],
                    "allocations": [
                        {"id": a.id, "user": a.user, "state": a.state.value}
                        for a in alloc.allocations.values()
                    ],
                }
                assert cicd_violations(trace) == [], (seed, bits)
                pipelines_checked += len(subs)
        return f"{pipelines_checked} pipelines across 100 seeds, 0 gate violations"

    _verdict(6, "vote, approval and staging gates hold over the outcome lattice", go)


def test_criterion_7_fault_independence():
    def go():
        def digests(with_fault: bool) -> dict[str, str]:
            stack = MonitoredStack(seed=11)
            if with_fault:
                stack.injector.schedule(
                    (FaultEvent("analog_power_fail", 400.0, None, "s05"),)
                )
            # long enough that the 7200 s health sweep sees the fault
            stack.run(7500.0)
            return {k: stack.store.digest(k) for k in stack.store.keys()}

        base = digests(False)
        faulted = digests(True)
        assert base.keys() == faulted.keys()
        differing = {k for k in base if base[k] != faulted[k]}
        ac6_channels = {c.name for c in CHANNELS if c.feed == FEED_AC6}
        expected = {
            series_key(f"telemetry.{name}", system="s05") for name in ac6_channels
        } | {series_key("health.ok", system="s05")}
        assert differing == expected, differing ^ expected

        drawer = TOPO.systems["s04"].drawer
        dark = power_propagate(TOPO, {drawer})
        assert len(dark) == 6  # two controllers, four FPGAs, leaf stays up
        touched_systems = {TOPO.system_of_endpoint[n] for n in dark}
        assert touched_systems == set(TOPO.drawers[drawer].systems) == {"s04", "s05"}
        return (
            f"{len(base) - len(differing)} series byte-identical, "
            f"only s05 analog rails moved"
        )

    _verdict(7, "faults stay confined to the failed system and its drawer", go)


def test_criterion_8_shipped_scenarios_are_deterministic():
    def go():
        names = list_scenarios()
        assert len(names) == 7
        for name in names:
            sc = load_scenario(scenario_path(name), TOPO)
            h1 = Simulation(sc, topo=TOPO).run().trace_hash
            h2 = Simulation(
                load_scenario(scenario_path(name), TOPO), topo=TOPO
            ).run().trace_hash
            assert h1 == h2, name
        return f"{len(names)} scenarios, double-run hashes equal"

    _verdict(8, "every shipped scenario reruns to an identical trace hash", go)
