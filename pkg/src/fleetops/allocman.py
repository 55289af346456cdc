"""Allocation management and the allocation-derived firewall.

Systems are allocated exclusively, first come first served, with a
first-fit-by-lowest-id placement for "any productive" requests. Every
allocation state change re-derives the experiment-VLAN firewall: without
an active allocation no experiment frame is routed between a cluster
node and a system. Rule generations increase strictly, and every
transition lands in an append-only event log that offline replay checks
consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .engine import EventLoop
from .topology import NodeKind, Topology, Vlan

ANY_PRODUCTIVE = "any_productive"


class AllocError(Exception):
    pass


class UnknownSystem(AllocError):
    pass


class SystemDrained(AllocError):
    pass


class NotActive(AllocError):
    pass


class NotDrained(AllocError):
    pass


class AllocState(str, Enum):
    QUEUED = "queued"
    ACTIVE = "active"
    COMPLETED = "completed"
    CANCELLED = "cancelled"


class OpState(str, Enum):
    FREE = "free"
    ALLOCATED = "allocated"
    DRAINED = "drained"


@dataclass
class AllocationRequest:
    user: str
    node: str  # cluster node the request is launched from
    selector: str  # specific system id or ANY_PRODUCTIVE
    walltime_s: float


@dataclass
class Allocation:
    id: str
    user: str
    node: str
    selector: str
    walltime_s: float
    state: AllocState
    system: str | None = None
    t_submit: float = 0.0
    t_activate: float | None = None
    t_release: float | None = None


@dataclass(frozen=True)
class FirewallRuleSet:
    """Derived permit rules for the experiment VLAN.

    `allow` holds (cluster node, system) pairs with an active allocation.
    Management VLANs 1-3 are unconditionally permitted. The central
    monitor host is exempt so the per-minute reachability probes keep
    working regardless of allocations.
    """

    generation: int
    allow: frozenset[tuple[str, str]]
    exempt_nodes: frozenset[str]


def permit(
    rules: FirewallRuleSet, src: str, dst: str, vlan: int, system_of: dict[str, str]
) -> bool:
    """First-hop permit decision for a frame between two endpoints."""
    if vlan != Vlan.EXPERIMENT_DATA:
        return True
    if src in rules.exempt_nodes or dst in rules.exempt_nodes:
        return True
    src_sys = system_of.get(src)
    dst_sys = system_of.get(dst)
    if src_sys is None and dst_sys is None:
        # Node-to-node experiment traffic never touches a system.
        return True
    if src_sys is not None and dst_sys is None:
        return (dst, src_sys) in rules.allow
    if dst_sys is not None and src_sys is None:
        return (src, dst_sys) in rules.allow
    return False


@dataclass
class SystemSlot:
    op: OpState = OpState.FREE
    pending_drain: bool = False
    alloc_id: str | None = None


class AllocationManager:
    """Exclusive system allocation with queueing, draining and expiry."""

    def __init__(self, topo: Topology, loop: EventLoop):
        self.topo = topo
        self.loop = loop
        self.slots: dict[str, SystemSlot] = {
            sid: SystemSlot() for sid in sorted(topo.systems)
        }
        self.allocations: dict[str, Allocation] = {}
        self.queue: list[str] = []
        self.generation = 0
        exempt = frozenset(
            n.id for n in topo.nodes_of_kind(NodeKind.MONITOR_HOST)
        )
        self._exempt = exempt
        self.rules = FirewallRuleSet(0, frozenset(), exempt)
        self.log: list[dict] = []
        self._counter = 0
        self.on_transition: list = []  # callbacks(record)
        self.on_activate: dict[str, object] = {}  # alloc_id -> callback

    # -- queries -------------------------------------------------------------

    def op_state(self, system: str) -> SystemSlot:
        if system not in self.slots:
            raise UnknownSystem(system)
        return self.slots[system]

    def active_allocation(self, system: str) -> Allocation | None:
        slot = self.op_state(system)
        return self.allocations[slot.alloc_id] if slot.alloc_id else None

    def permit_frame(self, frame) -> bool:
        return permit(
            self.rules, frame.src, frame.dst, frame.vlan, self.topo.system_of_endpoint
        )

    # -- logging ---------------------------------------------------------------

    def _record(self, op: str, alloc: Allocation | None, system: str | None) -> None:
        rec = {
            "t": self.loop.now,
            "op": op,
            "user": alloc.user if alloc else "",
            "node": alloc.node if alloc else "",
            "system": system or "",
            "alloc_id": alloc.id if alloc else "",
            "generation": self.generation,
        }
        self.log.append(rec)
        for cb in self.on_transition:
            cb(rec)

    def _derive(self) -> None:
        pairs = frozenset(
            (a.node, a.system)
            for a in self.allocations.values()
            if a.state is AllocState.ACTIVE and a.system
        )
        self.generation += 1
        self.rules = FirewallRuleSet(self.generation, pairs, self._exempt)

    # -- allocation lifecycle ----------------------------------------------------

    def submit_request(self, req: AllocationRequest) -> Allocation:
        """Queue or immediately activate a request (FCFS, first fit)."""
        if req.selector != ANY_PRODUCTIVE:
            slot = self.op_state(req.selector)  # raises UnknownSystem
            if slot.op is OpState.DRAINED:
                raise SystemDrained(req.selector)
        self._counter += 1
        alloc = Allocation(
            id=f"a{self._counter:04d}",
            user=req.user,
            node=req.node,
            selector=req.selector,
            walltime_s=req.walltime_s,
            state=AllocState.QUEUED,
            t_submit=self.loop.now,
        )
        self.allocations[alloc.id] = alloc
        self._record("submit", alloc, None)
        target = self._find_target(alloc)
        if target is None:
            self.queue.append(alloc.id)
            self._record("queue", alloc, None)
        else:
            self._activate(alloc, target)
        return alloc

    def _find_target(self, alloc: Allocation) -> str | None:
        if alloc.selector == ANY_PRODUCTIVE:
            for sid in sorted(self.slots):
                if (
                    self.slots[sid].op is OpState.FREE
                    and self.topo.systems[sid].productive
                ):
                    return sid
            return None
        slot = self.slots.get(alloc.selector)
        if slot is None:
            return None
        if slot.op is OpState.FREE:
            return alloc.selector
        return None

    def _activate(self, alloc: Allocation, system: str) -> None:
        slot = self.slots[system]
        assert slot.op is OpState.FREE, f"{system} not free"
        slot.op = OpState.ALLOCATED
        slot.alloc_id = alloc.id
        alloc.system = system
        alloc.state = AllocState.ACTIVE
        alloc.t_activate = self.loop.now
        self._derive()
        self._record("activate", alloc, system)
        self.loop.schedule(
            self.loop.now + alloc.walltime_s, self._expire, alloc.id
        )
        cb = self.on_activate.pop(alloc.id, None)
        if cb is not None:
            cb(alloc)

    def _expire(self, alloc_id: str) -> None:
        alloc = self.allocations[alloc_id]
        if alloc.state is AllocState.ACTIVE:
            self._finish(alloc, AllocState.COMPLETED, "expire")

    def release(self, alloc_id: str) -> Allocation:
        alloc = self.allocations.get(alloc_id)
        if alloc is None or alloc.state is not AllocState.ACTIVE:
            raise NotActive(alloc_id)
        self._finish(alloc, AllocState.COMPLETED, "release")
        return alloc

    def cancel(self, alloc_id: str) -> Allocation:
        alloc = self.allocations.get(alloc_id)
        if alloc is None:
            raise NotActive(alloc_id)
        if alloc.state is AllocState.QUEUED:
            self.queue.remove(alloc.id)
            alloc.state = AllocState.CANCELLED
            alloc.t_release = self.loop.now
            self._record("cancel", alloc, None)
            return alloc
        if alloc.state is AllocState.ACTIVE:
            self._finish(alloc, AllocState.CANCELLED, "cancel")
            return alloc
        raise NotActive(alloc_id)

    def _finish(self, alloc: Allocation, state: AllocState, op: str) -> None:
        system = alloc.system
        slot = self.slots[system]
        alloc.state = state
        alloc.t_release = self.loop.now
        slot.alloc_id = None
        if slot.pending_drain:
            slot.op = OpState.DRAINED
            slot.pending_drain = False
            self._derive()
            self._record(op, alloc, system)
            self._record("drain", None, system)
        else:
            slot.op = OpState.FREE
            self._derive()
            self._record(op, alloc, system)
        self._promote()

    def _promote(self) -> None:
        """Activate the first queued request the current state can satisfy."""
        for alloc_id in list(self.queue):
            alloc = self.allocations[alloc_id]
            target = self._find_target(alloc)
            if target is not None:
                self.queue.remove(alloc_id)
                self._activate(alloc, target)
                return

    # -- draining -----------------------------------------------------------------

    def drain(self, system: str) -> SystemSlot:
        slot = self.op_state(system)
        if slot.op is OpState.FREE:
            slot.op = OpState.DRAINED
            self._record("drain", None, system)
        elif slot.op is OpState.ALLOCATED and not slot.pending_drain:
            slot.pending_drain = True
            self._record("drain_pending", None, system)
        return slot

    def undrain(self, system: str) -> SystemSlot:
        slot = self.op_state(system)
        if slot.op is OpState.DRAINED:
            slot.op = OpState.FREE
            self._record("undrain", None, system)
            self._promote()
        elif slot.pending_drain:
            slot.pending_drain = False
            self._record("undrain", None, system)
        else:
            raise NotDrained(system)
        return slot
