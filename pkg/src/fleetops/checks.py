"""Named post-run checks and the replay oracles behind them.

Scenarios declare checks by name with parameters; after a run each check
re-derives its expectation from inputs or logs that did not pass through
the code path under test. The allocation replay oracle, for instance,
rebuilds permit intervals from the allocation log alone and sweeps the
recorded deliveries and firewall drops against them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .netsim import DEFAULT_QUANTA, UnknownFlow, measure_flow
from .topology import FlowDemand, NoPath, aggregate_demand


class CheckError(Exception):
    pass


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def run_checks(sim) -> list[CheckResult]:
    out = []
    for params in sim.scenario.checks:
        params = dict(params)
        name = params.pop("name")
        fn = REGISTRY.get(name)
        if fn is None:
            raise CheckError(f"unknown check {name!r}")
        out.append(fn(sim, **params))
    return out


# -- traffic ------------------------------------------------------------------------


def check_delivery_ratio(sim, flow: str, min_ratio: float) -> CheckResult:
    st = sim.net.flow_stats.get(flow)
    if st is None:
        return CheckResult("delivery_ratio", False, f"no such flow {flow!r}")
    ratio = st.delivered_frames / st.offered_frames if st.offered_frames else 0.0
    return CheckResult(
        "delivery_ratio",
        ratio >= min_ratio,
        f"{flow}: {st.delivered_frames}/{st.offered_frames} = {ratio:.4f} "
        f"(needs >= {min_ratio})",
    )


def check_flow_rate(
    sim,
    flow: str,
    t0: float,
    t1: float,
    min_bps: float | None = None,
    expect_bps: float | None = None,
    tol_frac: float = 0.05,
) -> CheckResult:
    try:
        rep = measure_flow(sim.net, flow, (t0, t1))
    except UnknownFlow:
        return CheckResult("flow_rate", False, f"no such flow {flow!r}")
    got = rep.throughput_bps
    if expect_bps is not None:
        lo, hi = expect_bps * (1 - tol_frac), expect_bps * (1 + tol_frac)
        ok = lo <= got <= hi
        want = f"{expect_bps/1e6:.1f} Mb/s +-{tol_frac:.0%}"
    else:
        ok = got >= float(min_bps)
        want = f">= {float(min_bps)/1e6:.1f} Mb/s"
    return CheckResult(
        "flow_rate", ok, f"{flow}: {got/1e6:.1f} Mb/s over [{t0}, {t1}) (needs {want})"
    )


def check_fluid_share(
    sim, flow: str, t0: float, t1: float, tol_frac: float = 0.05
) -> CheckResult:
    """Measured throughput of a backlogged flow vs. the fluid prediction.

    The prediction walks the flow's route: each egress port grants the
    flow's VLAN its quantum share of whatever capacity constant-rate
    traffic leaves behind; the route minimum is the attainable rate.
    """
    expect = fluid_rate(sim, flow)
    try:
        rep = measure_flow(sim.net, flow, (t0, t1))
    except UnknownFlow:
        return CheckResult("fluid_share", False, f"no such flow {flow!r}")
    got = rep.throughput_bps
    ok = abs(got - expect) <= tol_frac * expect
    return CheckResult(
        "fluid_share",
        ok,
        f"{flow}: {got/1e6:.1f} Mb/s vs fluid {expect/1e6:.1f} Mb/s "
        f"(tolerance {tol_frac:.0%})",
    )


def fluid_rate(sim, flow_id: str) -> float:
    """Fluid-model rate for one backlogged flow against the others."""
    flows = {fid: st.spec for fid, st in sim.net.flows.items()}
    spec = flows[flow_id]
    routes = {}
    for fid, fs in flows.items():
        try:
            ports, _ = sim.net.route(fs.src, fs.dst, fs.vlan)
        except NoPath:
            continue
        routes[fid] = ports
    best = float("inf")
    for port in routes[flow_id]:
        const = 0.0
        backlogged_vlans = {spec.vlan}
        for fid, fs in flows.items():
            if fid == flow_id or fid not in routes:
                continue
            if port not in routes[fid]:
                continue
            if fs.mode == "backlogged":
                backlogged_vlans.add(fs.vlan)
            else:
                const += fs.rate_bps
        quanta = sim.net.quanta
        share = quanta[spec.vlan] / sum(quanta[v] for v in sorted(backlogged_vlans))
        best = min(best, (port.capacity - const) * share)
    return best


def check_no_oversubscription(sim) -> CheckResult:
    demands = [
        FlowDemand(f.src, f.dst, f.vlan, f.rate_bps)
        for f in sim.scenario.flows
        if f.mode == "constant"
    ]
    rep = aggregate_demand(sim.topo, demands)
    return CheckResult(
        "no_oversubscription",
        not rep.oversubscribed,
        f"{len(rep.oversubscribed)} oversubscribed link directions"
        + (f": {rep.oversubscribed[:4]}" if rep.oversubscribed else ""),
    )


def check_rtt_max(sim, max_ms: float, vlan: int | None = None) -> CheckResult:
    probes = [p for p in sim.probe_log if vlan is None or p["vlan"] == vlan]
    if not probes:
        return CheckResult("rtt_max", False, "no probes recorded")
    lost = [p for p in probes if p["rtt"] is None]
    worst = max((p["rtt"] for p in probes if p["rtt"] is not None), default=0.0)
    ok = not lost and worst * 1e3 <= max_ms
    return CheckResult(
        "rtt_max",
        ok,
        f"{len(probes)} probes, {len(lost)} lost, worst {worst*1e3:.3f} ms "
        f"(limit {max_ms} ms)",
    )


def check_conservation(sim) -> CheckResult:
    sim.net.audit_conservation()
    return CheckResult(
        "conservation",
        True,
        f"{sim.net.offered_frames} offered == "
        f"{sim.net.delivered_frames} delivered + {sim.net.dropped_frames} dropped "
        f"+ {sim.net.in_flight_frames} in flight",
    )


# -- allocation / firewall replay -------------------------------------------------------


def alloc_intervals(log) -> dict[tuple[str, str], list[tuple[float, float]]]:
    """(node, system) -> closed activity intervals, replayed from the log."""
    opens: dict[str, tuple[str, str, float]] = {}
    out: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for e in log:
        if e["op"] == "activate":
            opens[e["alloc_id"]] = (e["node"], e["system"], e["t"])
        elif e["op"] in ("release", "expire", "cancel") and e["alloc_id"] in opens:
            node, system, t0 = opens.pop(e["alloc_id"])
            out.setdefault((node, system), []).append((t0, e["t"]))
    for alloc_id, (node, system, t0) in opens.items():
        out.setdefault((node, system), []).append((t0, float("inf")))
    return out


def replay_firewall(trace) -> tuple[list[str], list[str]]:
    """Returns (soundness violations, completeness violations).

    Soundness: no experiment-data frame delivered between a cluster node
    and a system outside an allocation's activity interval.
    Completeness: no frame between an actively allocated pair dropped by
    the firewall strictly inside the interval.

    `trace` is the mapping Simulation.trace_dict() produces, either live
    or round-tripped through trace.json.
    """
    exempt = set(trace["exempt_nodes"])
    endpoint_sys = trace["system_of_endpoint"]
    intervals = alloc_intervals(trace["alloc_log"])

    def pair_of(src: str, dst: str):
        s_sys = endpoint_sys.get(src)
        d_sys = endpoint_sys.get(dst)
        if (s_sys is None) == (d_sys is None):
            return None  # node<->node or endpoint<->endpoint
        if s_sys is None:
            return (src, d_sys)
        return (dst, s_sys)

    sound: list[str] = []
    complete: list[str] = []
    for t_hop, _t_del, src, dst, vlan, _size in trace["deliveries"]:
        if vlan != 4 or src in exempt or dst in exempt:
            continue
        s_sys = endpoint_sys.get(src)
        d_sys = endpoint_sys.get(dst)
        if s_sys is not None and d_sys is not None:
            sound.append(f"t={t_hop:.6f} {src}->{dst}: system-to-system delivered")
            continue
        pair = pair_of(src, dst)
        if pair is None:
            continue
        if not any(a <= t_hop <= b for a, b in intervals.get(pair, ())):
            sound.append(
                f"t={t_hop:.6f} {src}->{dst}: delivered outside allocation of {pair}"
            )
    for t, src, dst, _vlan, _flow in trace["firewall_drops"]:
        if src in exempt or dst in exempt:
            continue
        pair = pair_of(src, dst)
        if pair is None:
            continue
        if any(a < t < b for a, b in intervals.get(pair, ())):
            complete.append(
                f"t={t:.6f} {src}->{dst}: dropped inside allocation of {pair}"
            )
    return sound, complete


def check_alloc_replay(sim) -> CheckResult:
    if not sim.scenario.record_deliveries:
        return CheckResult(
            "alloc_replay", False, "scenario must set record_deliveries"
        )
    sound, complete = replay_firewall(sim.trace_dict())
    bad = sound + complete
    return CheckResult(
        "alloc_replay",
        not bad,
        f"{len(sound)} soundness / {len(complete)} completeness violations"
        + (f"; first: {bad[0]}" if bad else ""),
    )


# -- ci/cd invariants --------------------------------------------------------------------


def cicd_violations(trace) -> list[str]:
    """Gate invariants replayed from the pipeline log (see trace_dict)."""
    bad: list[str] = []
    log = trace["cicd_log"]
    for p in trace["pipelines"]:
        pid = p["id"]
        chain = p["order"]
        entries = [e for e in log if e["pipeline"] == pid]
        votes = [e for e in entries if e["transition"] == "voted"]
        if len(votes) != 1:
            bad.append(f"{pid}: {len(votes)} votes")
            continue
        ends = {
            e["job"]: e["outcome"]
            for e in entries
            if e["transition"] == "job_end" and e["job"] != "release"
        }
        all_pass = all(ends.get(name) == "pass" for name in chain)
        want = "+1" if all_pass else "-1"
        if votes[0]["outcome"] != want:
            bad.append(f"{pid}: vote {votes[0]['outcome']} but jobs say {want}")
        approved = any(e["transition"] == "approved" for e in entries)
        released = any(e["transition"] == "released" for e in entries)
        if released != (all_pass and approved and p["vote"] == 1):
            bad.append(
                f"{pid}: released={released} with all_pass={all_pass} approved={approved}"
            )
        if released and p["artifact_verified"] is not True:
            bad.append(f"{pid}: released artifact fails verification")
        starts = [e for e in entries if e["transition"] == "job_start"]
        order = {name: i for i, name in enumerate(chain)}
        started = [e["job"] for e in starts if e["job"] in order]
        if started != sorted(started, key=order.get):
            bad.append(f"{pid}: jobs started out of order {started}")
        span: dict[str, list[float]] = {}
        for e in entries:
            if e["transition"] == "job_start":
                span.setdefault(e["job"], [e["t"], None])[0] = e["t"]
            elif e["transition"] == "job_end":
                span.setdefault(e["job"], [None, e["t"]])[1] = e["t"]
        for i, name in enumerate(chain[:-1]):
            nxt = chain[i + 1]
            if name in span and nxt in span and span[nxt][0] is not None:
                if span[name][1] is None or span[nxt][0] < span[name][1]:
                    bad.append(f"{pid}: {nxt} started before {name} ended")
    # pool concurrency from the global log
    for pool in ("hardened_eda", "hardware_test"):
        events = []
        for e in log:
            if e["pool"] != pool:
                continue
            if e["transition"] == "job_start":
                events.append((e["t"], 1))
            elif e["transition"] == "job_end":
                events.append((e["t"], -1))
        events.sort(key=lambda x: (x[0], x[1]))
        depth = 0
        for _t, d in events:
            depth += d
            if depth > 2:
                bad.append(f"{pool}: concurrency {depth} exceeds 2")
                break
    # allocation hygiene: every ci allocation ends released or expired
    for a in trace["allocations"]:
        if a["user"] == "ci" and a["state"] == "active":
            bad.append(f"{a['id']}: ci allocation still active after run")
    return bad


def check_cicd_gates(sim) -> CheckResult:
    trace = sim.trace_dict()
    bad = cicd_violations(trace)
    return CheckResult(
        "cicd_gates",
        not bad,
        f"{len(trace['pipelines'])} pipelines, {len(bad)} violations"
        + (f"; first: {bad[0]}" if bad else ""),
    )


def check_pipeline_state(sim, pipeline: str, state: str) -> CheckResult:
    p = sim.cicd.pipelines.get(pipeline)
    got = p.state.value if p else "<missing>"
    return CheckResult(
        "pipeline_state", got == state, f"{pipeline}: {got} (wanted {state})"
    )


# -- monitoring ----------------------------------------------------------------------


def check_alert_fired(
    sim,
    rule: str,
    system: str | None = None,
    min_count: int = 1,
    max_count: int | None = None,
) -> CheckResult:
    if sim.monitor is None:
        return CheckResult("alert_fired", False, "monitoring disabled")
    hits = [
        a
        for a in sim.monitor.alerts
        if a.transition == "firing"
        and a.rule == rule
        and (system is None or a.system == system)
    ]
    ok = len(hits) >= min_count and (max_count is None or len(hits) <= max_count)
    scope = f" on {system}" if system else ""
    return CheckResult(
        "alert_fired", ok, f"{rule}{scope}: fired {len(hits)} time(s), "
        f"wanted [{min_count}, {max_count if max_count is not None else 'inf'}]"
    )


def check_probe_loss_max(sim, max_lost: int) -> CheckResult:
    if sim.monitor is None:
        return CheckResult("probe_loss_max", False, "monitoring disabled")
    lost = sim.monitor.counters["probes_lost"]
    return CheckResult(
        "probe_loss_max", lost <= max_lost, f"{lost} probes lost (limit {max_lost})"
    )


def check_all_recovered(sim) -> CheckResult:
    f = sim.fleet
    down_ports = [k for k, p in sim.net.ports.items() if p.down]
    leftovers = []
    if f.dark_nodes:
        leftovers.append(f"{len(f.dark_nodes)} dark nodes")
    if f.dc12_failed:
        leftovers.append(f"dc12 failed: {sorted(f.dc12_failed)}")
    if f.ac6_failed:
        leftovers.append(f"ac6 failed: {sorted(f.ac6_failed)}")
    if f.hung:
        leftovers.append(f"hung: {sorted(f.hung)}")
    if down_ports:
        leftovers.append(f"{len(down_ports)} ports down")
    return CheckResult(
        "all_recovered", not leftovers, "; ".join(leftovers) or "everything back up"
    )


def check_counter_max(
    sim, counter: str, max_value: float, min_value: float | None = None
) -> CheckResult:
    cur = sim.counters()
    for part in counter.split("."):
        cur = cur[part]
    ok = cur <= max_value and (min_value is None or cur >= min_value)
    lo = "" if min_value is None else f" >= {min_value},"
    return CheckResult(
        "counter_max", ok, f"{counter} = {cur} (wanted{lo} <= {max_value})"
    )


REGISTRY = {
    "delivery_ratio": check_delivery_ratio,
    "flow_rate": check_flow_rate,
    "fluid_share": check_fluid_share,
    "no_oversubscription": check_no_oversubscription,
    "rtt_max": check_rtt_max,
    "conservation": check_conservation,
    "alloc_replay": check_alloc_replay,
    "cicd_gates": check_cicd_gates,
    "pipeline_state": check_pipeline_state,
    "alert_fired": check_alert_fired,
    "probe_loss_max": check_probe_loss_max,
    "all_recovered": check_all_recovered,
    "counter_max": check_counter_max,
}
