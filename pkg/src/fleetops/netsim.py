"""Frame-level network simulator with per-port deficit-round-robin.

Every link direction has its own egress port holding one FIFO queue per
carried VLAN, scheduled by classic deficit round robin: queues are
visited in round order, a visit adds the queue's quantum to its deficit,
and head frames are sent while the deficit covers them. The deficit of a
queue that runs empty resets to zero. Quanta default to an 80% share for
the experiment-data VLAN and the remaining 20% split across the three
management VLANs, which is what keeps management traffic responsive when
an experiment device floods its uplink.

Frames are store-and-forward: serialization (size / capacity) at every
hop plus a fixed per-link propagation delay. VLAN 4 frames pass a
firewall callback at their first routed hop; denied frames drop there
and are counted.
"""

from __future__ import annotations

import bisect
from array import array
from collections import deque
from dataclasses import dataclass, field

from .engine import EventLoop
from .topology import Link, NoPath, Topology, Vlan, resolve_path

MIN_FRAME = 64
MAX_FRAME = 9000
DEFAULT_FRAME = 1500
PROBE_FRAME = 64
PROBE_TIMEOUT_S = 1.0
QUEUE_BYTE_LIMIT = 512 * 1024

#: Default DRR quanta in bytes. Shares are quantum / sum(quanta) across
#: the backlogged queues: 18000/22500 = 80% for experiment data, the
#: management VLANs splitting the remaining 20%.
DEFAULT_QUANTA = {1: 1500, 2: 1500, 3: 1500, 4: 18000}

DROP_QUEUE_FULL = "queue_full"
DROP_FIREWALL = "firewall"
DROP_LINK_DOWN = "link_down"
DROP_NODE_DOWN = "node_down"
DROP_NO_PATH = "no_path"


class UnknownFlow(Exception):
    pass


class Frame:
    __slots__ = (
        "flow",
        "src",
        "dst",
        "vlan",
        "size",
        "t_emit",
        "t_first_hop",
        "ports",
        "nodes",
        "hop",
        "probe",
    )

    def __init__(self, flow, src, dst, vlan, size, t_emit, ports, nodes):
        self.flow = flow
        self.src = src
        self.dst = dst
        self.vlan = vlan
        self.size = size
        self.t_emit = t_emit
        self.t_first_hop = -1.0
        self.ports = ports  # egress port per hop
        self.nodes = nodes  # arrival node per hop
        self.hop = 0
        self.probe = None  # (probe_id, is_reply) for probe frames


class EgressPort:
    """One link direction: per-VLAN queues plus the DRR scheduler state."""

    __slots__ = (
        "link_id",
        "from_node",
        "to_node",
        "capacity",
        "delay",
        "byte_limit",
        "queues",
        "qbytes",
        "deficits",
        "quanta",
        "active",
        "visiting",
        "busy",
        "down",
        "tx_frame",
        "tx_bytes_vlan",
    )

    def __init__(self, link_id, from_node, to_node, capacity, delay, vlans, quanta, byte_limit):
        self.link_id = link_id
        self.from_node = from_node
        self.to_node = to_node
        self.capacity = capacity
        self.delay = delay
        self.byte_limit = byte_limit
        self.queues = {v: deque() for v in sorted(vlans)}
        self.qbytes = {v: 0 for v in sorted(vlans)}
        self.deficits = {v: 0 for v in sorted(vlans)}
        self.quanta = {v: quanta.get(v, DEFAULT_QUANTA.get(v, 1500)) for v in sorted(vlans)}
        self.active: list[int] = []  # round order of backlogged VLANs
        self.visiting: int | None = None
        self.busy = False
        self.down = False
        self.tx_frame: Frame | None = None
        self.tx_bytes_vlan = {v: 0 for v in sorted(vlans)}
        for v, q in self.quanta.items():
            if q < 1:
                raise ValueError(f"quantum for vlan {v} must be >= 1 byte")

    def select(self) -> Frame | None:
        """Dequeue the next frame per deficit round robin, or None if idle.

        A fresh visit of a queue adds its quantum to its deficit; frames
        are taken while the deficit covers the head frame. Emptied queues
        leave the round with their deficit reset to zero.
        """
        active = self.active
        if not active:
            return None
        deficits = self.deficits
        queues = self.queues
        v = self.visiting
        if v is None:
            v = active[0]
            deficits[v] += self.quanta[v]
            self.visiting = v
        while True:
            q = queues[v]
            head = q[0]
            if deficits[v] >= head.size:
                q.popleft()
                self.qbytes[v] -= head.size
                if q:
                    deficits[v] -= head.size
                else:
                    deficits[v] = 0
                    active.pop(0)
                    self.visiting = None
                return head
            active.append(active.pop(0))
            v = active[0]
            deficits[v] += self.quanta[v]
            self.visiting = v


@dataclass
class FlowSpec:
    """Workload flow: constant-rate or backlogged (always has a frame ready)."""

    id: str
    src: str
    dst: str
    vlan: int
    mode: str = "constant"  # "constant" | "backlogged"
    rate_bps: float = 0.0
    frame_size: int = DEFAULT_FRAME
    start: float = 0.0
    stop: float = float("inf")

    def __post_init__(self) -> None:
        if not MIN_FRAME <= self.frame_size <= MAX_FRAME:
            raise ValueError(
                f"flow {self.id}: frame size {self.frame_size} outside "
                f"[{MIN_FRAME}, {MAX_FRAME}]"
            )
        if self.mode not in ("constant", "backlogged"):
            raise ValueError(f"flow {self.id}: unknown mode {self.mode}")
        if self.mode == "constant" and self.rate_bps <= 0:
            raise ValueError(f"flow {self.id}: constant flows need a positive rate")


class FlowState:
    __slots__ = ("spec", "ports", "nodes", "interval", "stopped", "route_epoch")

    def __init__(self, spec: FlowSpec):
        self.spec = spec
        self.ports: tuple[EgressPort, ...] | None = None
        self.nodes: tuple[str, ...] | None = None
        self.interval = (
            spec.frame_size * 8.0 / spec.rate_bps if spec.mode == "constant" else 0.0
        )
        self.stopped = False
        self.route_epoch = -1


@dataclass
class FlowStats:
    offered_frames: int = 0
    offered_bytes: int = 0
    delivered_frames: int = 0
    delivered_bytes: int = 0
    drops: dict[str, int] = field(default_factory=dict)
    deliver_t: array = field(default_factory=lambda: array("d"))
    latency: array = field(default_factory=lambda: array("d"))


@dataclass
class ThroughputReport:
    flow: str
    window: tuple[float, float]
    delivered_bytes: int
    delivered_frames: int
    throughput_bps: float
    latency_mean: float
    latency_p50: float
    latency_p95: float
    latency_p99: float


def _percentile(sorted_vals: list[float], frac: float) -> float:
    if not sorted_vals:
        return 0.0
    idx = max(0, min(len(sorted_vals) - 1, int(round(frac * len(sorted_vals) + 0.5)) - 1))
    return sorted_vals[idx]


class NetworkSim:
    """Event-driven frame forwarding over a Topology.

    The caller owns the EventLoop; monitoring, faults and the rest of the
    stack schedule onto the same loop, which is what keeps a scenario's
    whole event sequence deterministic.
    """

    def __init__(
        self,
        topo: Topology,
        loop: EventLoop | None = None,
        quanta: dict[int, int] | None = None,
        queue_byte_limit: int = QUEUE_BYTE_LIMIT,
        probe_timeout: float = PROBE_TIMEOUT_S,
        record_deliveries: bool = False,
    ):
        self.topo = topo
        self.loop = loop or EventLoop()
        self.quanta = dict(DEFAULT_QUANTA)
        if quanta:
            self.quanta.update({int(k): int(v) for k, v in quanta.items()})
        self.queue_byte_limit = queue_byte_limit
        self.probe_timeout = probe_timeout
        self.record_deliveries = record_deliveries

        self.ports: dict[tuple[str, str], EgressPort] = {}
        for link in topo.links.values():
            self._add_port(link, link.a, link.b)
            self._add_port(link, link.b, link.a)

        self.flows: dict[str, FlowState] = {}
        self.flow_stats: dict[str, FlowStats] = {}
        self.route_epoch = 0
        self._route_cache: dict[tuple[str, str, int], tuple] = {}

        # Hooks injected by the orchestration layer.
        self.permit = lambda frame: True
        self.node_powered = lambda node: True

        self.offered_frames = 0
        self.offered_bytes = 0
        self.delivered_frames = 0
        self.delivered_bytes = 0
        self.in_flight_frames = 0
        self.in_flight_bytes = 0
        self.drops: dict[str, int] = {}
        self.dropped_frames = 0
        self.dropped_bytes = 0
        self.firewall_drop_log: list[tuple[float, str, str, int, str]] = []
        self.delivery_log: list[tuple[float, float, str, str, int, int]] = []

        self._probes: dict[int, list] = {}
        self._probe_seq = 0
        self._node_down: set[str] = set()

    def _add_port(self, link: Link, frm: tuple[str, str], to: tuple[str, str]) -> None:
        vlans = self.topo.port_modes[frm].vlans & self.topo.port_modes[to].vlans
        self.ports[(link.id, to[0])] = EgressPort(
            link.id,
            frm[0],
            to[0],
            link.capacity_bps,
            link.delay_s,
            vlans,
            self.quanta,
            self.queue_byte_limit,
        )

    # -- routing -----------------------------------------------------------

    def route(self, src: str, dst: str, vlan: int) -> tuple[tuple[EgressPort, ...], tuple[str, ...]]:
        key = (src, dst, vlan)
        cached = self._route_cache.get(key)
        if cached is not None and cached[0] == self.route_epoch:
            if cached[1] is None:
                raise NoPath(src, dst, vlan)
            return cached[1], cached[2]
        try:
            hops = resolve_path(self.topo, src, dst, vlan)
        except NoPath:
            self._route_cache[key] = (self.route_epoch, None, None)
            raise
        ports = []
        nodes = []
        node = src
        ok = True
        for link in hops:
            toward = link.other_end(node)
            port = self.ports[(link.id, toward)]
            if port.down:
                ok = False
                break
            ports.append(port)
            nodes.append(toward)
            node = toward
        if not ok:
            self._route_cache[key] = (self.route_epoch, None, None)
            raise NoPath(src, dst, vlan)
        entry = (self.route_epoch, tuple(ports), tuple(nodes))
        self._route_cache[key] = entry
        return entry[1], entry[2]

    def invalidate_routes(self) -> None:
        self.route_epoch += 1

    # -- flows --------------------------------------------------------------

    def add_flow(self, spec: FlowSpec) -> None:
        if spec.id in self.flows:
            raise ValueError(f"duplicate flow id {spec.id}")
        state = FlowState(spec)
        self.flows[spec.id] = state
        self.flow_stats[spec.id] = FlowStats()
        self.loop.schedule(max(spec.start, self.loop.now), self._flow_start, state)

    def stop_flow(self, flow_id: str) -> None:
        self.flows[flow_id].stopped = True

    def _flow_start(self, state: FlowState) -> None:
        if state.spec.mode == "constant":
            self._emit_constant(state)
        else:
            # Keep two frames enqueued so the source queue never runs dry.
            self._emit_backlogged(state)
            self._emit_backlogged(state)

    def _flow_route(self, state: FlowState):
        if state.route_epoch != self.route_epoch or state.ports is None:
            spec = state.spec
            try:
                state.ports, state.nodes = self.route(spec.src, spec.dst, spec.vlan)
            except NoPath:
                state.ports, state.nodes = None, None
            state.route_epoch = self.route_epoch
        return state.ports

    def _emit_constant(self, state: FlowState) -> None:
        now = self.loop.now
        spec = state.spec
        if state.stopped or now >= spec.stop:
            return
        self.loop.schedule(now + state.interval, self._emit_constant, state)
        if not self.node_powered(spec.src):
            return
        stats = self.flow_stats[spec.id]
        if self._flow_route(state) is None:
            stats.offered_frames += 1
            stats.offered_bytes += spec.frame_size
            self.offered_frames += 1
            self.offered_bytes += spec.frame_size
            self._count_drop(stats, DROP_NO_PATH, spec.frame_size)
            return
        frame = Frame(
            spec.id, spec.src, spec.dst, spec.vlan, spec.frame_size, now,
            state.ports, state.nodes,
        )
        self._emit(frame, stats)

    def _emit_backlogged(self, state: FlowState) -> None:
        now = self.loop.now
        spec = state.spec
        if state.stopped or now >= spec.stop:
            return
        if not self.node_powered(spec.src) or self._flow_route(state) is None:
            return
        stats = self.flow_stats[spec.id]
        frame = Frame(
            spec.id, spec.src, spec.dst, spec.vlan, spec.frame_size, now,
            state.ports, state.nodes,
        )
        self._emit(frame, stats)

    def _emit(self, frame: Frame, stats: FlowStats) -> None:
        stats.offered_frames += 1
        stats.offered_bytes += frame.size
        self.offered_frames += 1
        self.offered_bytes += frame.size
        self.in_flight_frames += 1
        self.in_flight_bytes += frame.size
        self._enqueue(frame.ports[0], frame)

    # -- port machinery ------------------------------------------------------

    def _enqueue(self, port: EgressPort, frame: Frame) -> None:
        if port.down:
            self._drop(frame, DROP_LINK_DOWN)
            return
        v = frame.vlan
        q = port.queues.get(v)
        if q is None:
            self._drop(frame, DROP_NO_PATH)
            return
        if port.qbytes[v] + frame.size > port.byte_limit:
            self._drop(frame, DROP_QUEUE_FULL)
            return
        q.append(frame)
        port.qbytes[v] += frame.size
        if len(q) == 1 and v not in port.active:
            port.active.append(v)
        if not port.busy:
            self._start_tx(port)

    def _start_tx(self, port: EgressPort) -> None:
        frame = port.select()
        if frame is None:
            port.busy = False
            port.tx_frame = None
            return
        port.busy = True
        port.tx_frame = frame
        self.loop.schedule(
            self.loop.now + frame.size * 8.0 / port.capacity, self._tx_done, port
        )

    def _tx_done(self, port: EgressPort) -> None:
        frame = port.tx_frame
        port.tx_frame = None
        if frame is None:
            port.busy = False
            return
        if port.down or port.from_node in self._node_down:
            self._drop(frame, DROP_LINK_DOWN if port.down else DROP_NODE_DOWN)
            port.busy = False
            return
        port.tx_bytes_vlan[frame.vlan] += frame.size
        self.loop.schedule(self.loop.now + port.delay, self._arrive, frame)
        flow = frame.flow
        if flow is not None and frame.hop == 0:
            state = self.flows.get(flow)
            if state is not None and state.spec.mode == "backlogged":
                self._emit_backlogged(state)
        self._start_tx(port)

    def _arrive(self, frame: Frame) -> None:
        node = frame.nodes[frame.hop]
        if node in self._node_down or frame.ports[frame.hop].down:
            self._drop(frame, DROP_NODE_DOWN if node in self._node_down else DROP_LINK_DOWN)
            return
        if frame.hop == 0 and frame.t_first_hop < 0.0 and node != frame.dst:
            # First routed hop: the firewall sees the frame here, against
            # whatever rule generation is current right now.
            frame.t_first_hop = self.loop.now
            if frame.vlan == Vlan.EXPERIMENT_DATA and not self.permit(frame):
                self._drop(frame, DROP_FIREWALL)
                return
        if node == frame.dst:
            self._deliver(frame)
            return
        frame.hop += 1
        self._enqueue(frame.ports[frame.hop], frame)

    def _deliver(self, frame: Frame) -> None:
        now = self.loop.now
        self.in_flight_frames -= 1
        self.in_flight_bytes -= frame.size
        self.delivered_frames += 1
        self.delivered_bytes += frame.size
        if frame.flow is not None:
            stats = self.flow_stats.get(frame.flow)
            if stats is not None:
                stats.delivered_frames += 1
                stats.delivered_bytes += frame.size
                stats.deliver_t.append(now)
                stats.latency.append(now - frame.t_emit)
        if self.record_deliveries and frame.vlan == Vlan.EXPERIMENT_DATA:
            self.delivery_log.append(
                (frame.t_first_hop, now, frame.src, frame.dst, frame.vlan, frame.size)
            )
        if frame.probe is not None:
            self._probe_delivered(frame)

    def _count_drop(self, stats: FlowStats | None, reason: str, size: int) -> None:
        self.drops[reason] = self.drops.get(reason, 0) + 1
        self.dropped_frames += 1
        self.dropped_bytes += size
        if stats is not None:
            stats.drops[reason] = stats.drops.get(reason, 0) + 1

    def _drop(self, frame: Frame, reason: str) -> None:
        self.in_flight_frames -= 1
        self.in_flight_bytes -= frame.size
        stats = self.flow_stats.get(frame.flow) if frame.flow is not None else None
        self._count_drop(stats, reason, frame.size)
        if reason == DROP_FIREWALL:
            self.firewall_drop_log.append(
                (self.loop.now, frame.src, frame.dst, frame.vlan, frame.flow or "")
            )

    # -- probes ---------------------------------------------------------------

    def issue_probe(self, src: str, dst: str, vlan: int, callback, kind: str = "icmp") -> int:
        """Send one 64-byte request and expect a 64-byte reply.

        callback(rtt_or_None) runs when the reply lands or the timeout
        expires, whichever comes first. The `kind` tag only distinguishes
        probe families in reports.
        """
        self._probe_seq += 1
        pid = self._probe_seq
        now = self.loop.now
        record = [callback, now, False, kind]
        self._probes[pid] = record
        self.loop.schedule(now + self.probe_timeout, self._probe_timeout, pid)
        try:
            ports, nodes = self.route(src, dst, vlan)
        except NoPath:
            return pid
        if not ports or not self.node_powered(src):
            return pid
        frame = Frame(None, src, dst, vlan, PROBE_FRAME, now, ports, nodes)
        frame.probe = (pid, False)
        self.in_flight_frames += 1
        self.in_flight_bytes += frame.size
        self.offered_frames += 1
        self.offered_bytes += frame.size
        self._enqueue(ports[0], frame)
        return pid

    def _probe_delivered(self, frame: Frame) -> None:
        pid, is_reply = frame.probe
        record = self._probes.get(pid)
        if record is None or record[2]:
            return
        if is_reply:
            record[2] = True
            record[0](self.loop.now - record[1])
            return
        # Request landed; turn it around if the endpoint can answer.
        try:
            ports, nodes = self.route(frame.dst, frame.src, frame.vlan)
        except NoPath:
            return
        reply = Frame(None, frame.dst, frame.src, frame.vlan, PROBE_FRAME, self.loop.now, ports, nodes)
        reply.probe = (pid, True)
        self.in_flight_frames += 1
        self.in_flight_bytes += frame.size
        self.offered_frames += 1
        self.offered_bytes += frame.size
        self._enqueue(ports[0], reply)

    def _probe_timeout(self, pid: int) -> None:
        record = self._probes.pop(pid, None)
        if record is None or record[2]:
            return
        record[2] = True
        record[0](None)

    # -- faults -----------------------------------------------------------------

    def set_link_down(self, link_id: str, down: bool) -> None:
        for key, port in self.ports.items():
            if key[0] != link_id:
                continue
            port.down = down
            if down:
                self._purge_port(port)
        self.invalidate_routes()

    def set_node_power(self, node: str, powered: bool) -> None:
        if powered:
            self._node_down.discard(node)
        else:
            self._node_down.add(node)
            for port in self.ports.values():
                if port.from_node == node:
                    self._purge_port(port)

    def _purge_port(self, port: EgressPort) -> None:
        for v in sorted(port.queues):
            q = port.queues[v]
            while q:
                self._drop(q.popleft(), DROP_LINK_DOWN if port.down else DROP_NODE_DOWN)
            port.qbytes[v] = 0
            port.deficits[v] = 0
        port.active.clear()
        port.visiting = None

    def rekick_backlogged(self) -> None:
        """Re-prime backlogged sources after a fault revert purged their queues."""
        for state in self.flows.values():
            spec = state.spec
            if spec.mode == "backlogged" and not state.stopped and self.loop.now < spec.stop:
                state.ports = None  # force route refresh
                self._emit_backlogged(state)
                self._emit_backlogged(state)

    # -- accounting ----------------------------------------------------------

    def audit_conservation(self) -> None:
        """Frames are conserved: offered == delivered + dropped + in flight."""
        assert (
            self.offered_frames
            == self.delivered_frames + self.dropped_frames + self.in_flight_frames
        ), "frame conservation violated"
        assert (
            self.offered_bytes
            == self.delivered_bytes + self.dropped_bytes + self.in_flight_bytes
        ), "byte conservation violated"

    def link_vlan_bytes(self) -> dict[tuple[str, str, int], int]:
        out = {}
        for (link_id, toward), port in self.ports.items():
            for v, b in port.tx_bytes_vlan.items():
                if b:
                    out[(link_id, toward, v)] = b
        return out


def run_until(sim: NetworkSim, t_end: float) -> NetworkSim:
    """Advance the simulation, processing every event at time <= t_end."""
    sim.loop.run_until(t_end)
    return sim


def drr_select(port: EgressPort) -> Frame | None:
    return port.select()


def measure_flow(sim: NetworkSim, flow_id: str, window: tuple[float, float]) -> ThroughputReport:
    """Delivered throughput and latency percentiles within a time window."""
    if flow_id not in sim.flow_stats:
        raise UnknownFlow(flow_id)
    stats = sim.flow_stats[flow_id]
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("window must have positive width")
    lo = bisect.bisect_left(stats.deliver_t, t0)
    hi = bisect.bisect_right(stats.deliver_t, t1)
    size = sim.flows[flow_id].spec.frame_size
    frames = hi - lo
    lat = sorted(stats.latency[lo:hi])
    return ThroughputReport(
        flow=flow_id,
        window=window,
        delivered_bytes=frames * size,
        delivered_frames=frames,
        throughput_bps=frames * size * 8.0 / (t1 - t0),
        latency_mean=(sum(lat) / len(lat)) if lat else 0.0,
        latency_p50=_percentile(lat, 0.50),
        latency_p95=_percentile(lat, 0.95),
        latency_p99=_percentile(lat, 0.99),
    )


def probe_rtt(sim: NetworkSim, src: str, dst: str, vlan: int) -> float | None:
    """Round-trip time of a single probe, or None on timeout.

    Advances the simulation until the probe resolves, so this is the
    standalone form; in-scenario probing goes through issue_probe.
    """
    result: list[float | None] = []
    sim.issue_probe(src, dst, vlan, result.append)
    deadline = sim.loop.now + sim.probe_timeout
    sim.loop.run_until(deadline)
    return result[0] if result else None
