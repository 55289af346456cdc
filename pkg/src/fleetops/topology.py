"""Fleet network topology: nodes, VLAN-segmented links, power composition.

The topology is a static description of the installation: a three-tier
switch tree (core / spine / leaf) with 802.1Q trunks between switches and
untagged access ports toward devices, plus the rack / drawer / system
composition and the two kinds of power feeds (one shared 12 V DC feed per
drawer, one 6 V analog feed per system).

Everything in here is immutable once loaded; runtime state (power, queue
occupancy, allocations) lives elsewhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path


class Vlan(IntEnum):
    """The four fixed VLANs. The id <-> role mapping never changes."""

    INFRA_MGMT = 1
    CLUSTER_IPMI = 2
    SYSTEM_MGMT = 3
    EXPERIMENT_DATA = 4


class NodeKind(str, Enum):
    CORE_SWITCH = "core_switch"
    SPINE_SWITCH = "spine_switch"
    LEAF_SWITCH = "leaf_switch"
    CLUSTER_NODE = "cluster_node"
    REMOTE_CLUSTER_NODE = "remote_cluster_node"
    SYSTEM_CONTROLLER = "system_controller"
    FPGA_ENDPOINT = "fpga_endpoint"
    PDU = "pdu"
    MONITOR_HOST = "monitor_host"


SWITCH_KINDS = frozenset(
    {NodeKind.CORE_SWITCH, NodeKind.SPINE_SWITCH, NodeKind.LEAF_SWITCH}
)

#: Node kinds that sit on a leaf access port inside a drawer.
DEVICE_KINDS = frozenset(
    {NodeKind.SYSTEM_CONTROLLER, NodeKind.FPGA_ENDPOINT, NodeKind.PDU}
)


class Location(str, Enum):
    SERVER_ROOM = "server_room"
    MACHINE_HALL = "machine_hall"
    LABORATORY = "laboratory"


# Capacities used by the installation, bits per second.
GBE = 1_000_000_000
TEN_GBE = 10 * GBE
FORTY_GBE = 40 * GBE
HUNDRED_GBE = 100 * GBE

DEFAULT_LINK_DELAY_S = 1e-6


class TopologyError(Exception):
    """Base class for topology loading / query errors."""


class ParseError(TopologyError):
    """The document is structurally invalid (missing or mistyped fields)."""


class DanglingReference(TopologyError):
    """The document references a node / feed / port that is not declared."""


class NoPath(TopologyError):
    """No VLAN-valid path exists between the requested endpoints."""

    def __init__(self, src: str, dst: str, vlan: int):
        super().__init__(f"no path {src} -> {dst} on vlan {vlan}")
        self.src = src
        self.dst = dst
        self.vlan = vlan


@dataclass(frozen=True)
class NetNode:
    id: str
    kind: NodeKind
    location: Location


@dataclass(frozen=True)
class PortMode:
    """802.1Q mode of one switch or host port.

    A trunk port carries a tagged set of VLANs; an access port carries
    exactly one, untagged.
    """

    mode: str  # "trunk" | "access"
    vlans: frozenset[int]

    @property
    def is_access(self) -> bool:
        return self.mode == "access"

    def carries(self, vlan: int) -> bool:
        return vlan in self.vlans

    @property
    def access_vlan(self) -> int:
        if not self.is_access:
            raise ValueError("not an access port")
        (v,) = self.vlans
        return v


@dataclass(frozen=True)
class Link:
    """Full-duplex point-to-point link between two (node, port) ends."""

    id: str
    a: tuple[str, str]
    b: tuple[str, str]
    capacity_bps: float
    delay_s: float = DEFAULT_LINK_DELAY_S

    def other_end(self, node: str) -> str:
        if node == self.a[0]:
            return self.b[0]
        if node == self.b[0]:
            return self.a[0]
        raise ValueError(f"{node} is not an end of link {self.id}")


@dataclass(frozen=True)
class System:
    id: str
    controller: str
    fpgas: tuple[str, str]
    ac6_feed: str
    productive: bool
    drawer: str

    @property
    def endpoints(self) -> tuple[str, ...]:
        return (self.controller,) + self.fpgas


@dataclass(frozen=True)
class Drawer:
    id: str
    rack: str
    leaf: str
    dc12_feed: str
    systems: tuple[str, ...]


@dataclass(frozen=True)
class Rack:
    id: str
    location: Location
    pdu: str | None
    drawers: tuple[str, ...]


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    message: str


@dataclass
class Topology:
    name: str
    nodes: dict[str, NetNode]
    links: dict[str, Link]
    port_modes: dict[tuple[str, str], PortMode]
    racks: dict[str, Rack]
    drawers: dict[str, Drawer]
    systems: dict[str, System]
    # Derived indices, filled by load_topology().
    adjacency: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    system_of_endpoint: dict[str, str] = field(default_factory=dict)
    link_of_node: dict[str, list[str]] = field(default_factory=dict)

    def port_mode(self, node: str, port: str) -> PortMode:
        return self.port_modes[(node, port)]

    def link_carries(self, link: Link, vlan: int) -> bool:
        return self.port_modes[link.a].carries(vlan) and self.port_modes[
            link.b
        ].carries(vlan)

    def nodes_of_kind(self, kind: NodeKind) -> list[NetNode]:
        return [n for n in self.nodes.values() if n.kind == kind]

    @property
    def core_switches(self) -> list[NetNode]:
        return self.nodes_of_kind(NodeKind.CORE_SWITCH)

    def productive_systems(self) -> list[System]:
        return [s for s in self.systems.values() if s.productive]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParseError(msg)


def load_topology(doc: dict | str | Path) -> Topology:
    """Parse a topology document into an indexed Topology.

    Accepts the document dict directly or a path to a JSON file. Raises
    ParseError for structural problems and DanglingReference when an id is
    used but never declared. Semantic rule checks (tiering, port modes,
    power composition) are the job of validate_topology().
    """
    if isinstance(doc, (str, Path)):
        with open(doc, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ParseError("topology document must be a JSON object")

    name = doc.get("name", "unnamed")
    nodes: dict[str, NetNode] = {}
    for nd in doc.get("nodes", []):
        try:
            node = NetNode(nd["id"], NodeKind(nd["kind"]), Location(nd["location"]))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad node entry {nd!r}: {exc}") from exc
        _require(node.id not in nodes, f"duplicate node id {node.id}")
        nodes[node.id] = node

    port_modes: dict[tuple[str, str], PortMode] = {}
    for pm in doc.get("port_modes", []):
        try:
            key = (pm["node"], pm["port"])
            if pm["mode"] == "access":
                mode = PortMode("access", frozenset({int(pm["vlan"])}))
            elif pm["mode"] == "trunk":
                vlans = frozenset(int(v) for v in pm["vlans"])
                _require(len(vlans) > 0, f"trunk with empty vlan set: {pm!r}")
                mode = PortMode("trunk", vlans)
            else:
                raise ParseError(f"unknown port mode {pm['mode']!r}")
        except KeyError as exc:
            raise ParseError(f"bad port mode entry {pm!r}: {exc}") from exc
        if key[0] not in nodes:
            raise DanglingReference(f"port mode references unknown node {key[0]}")
        _require(key not in port_modes, f"duplicate port mode for {key}")
        port_modes[key] = mode

    links: dict[str, Link] = {}
    for ld in doc.get("links", []):
        try:
            link = Link(
                id=ld["id"],
                a=(ld["a"][0], ld["a"][1]),
                b=(ld["b"][0], ld["b"][1]),
                capacity_bps=float(ld["capacity_bps"]),
                delay_s=float(ld.get("delay_s", DEFAULT_LINK_DELAY_S)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise ParseError(f"bad link entry {ld!r}: {exc}") from exc
        _require(link.capacity_bps > 0, f"link {link.id} has non-positive capacity")
        _require(link.id not in links, f"duplicate link id {link.id}")
        for end in (link.a, link.b):
            if end[0] not in nodes:
                raise DanglingReference(
                    f"link {link.id} references unknown node {end[0]}"
                )
            if end not in port_modes:
                raise DanglingReference(
                    f"link {link.id} references port {end} with no declared mode"
                )
        links[link.id] = link

    racks: dict[str, Rack] = {}
    drawers: dict[str, Drawer] = {}
    systems: dict[str, System] = {}
    for rd in doc.get("racks", []):
        try:
            rack_id = rd["id"]
            rack_drawers = []
            for dd in rd.get("drawers", []):
                drawer_id = dd["id"]
                drawer_systems = []
                for sd in dd.get("systems", []):
                    sysm = System(
                        id=sd["id"],
                        controller=sd["controller"],
                        fpgas=(sd["fpgas"][0], sd["fpgas"][1]),
                        ac6_feed=sd["ac6_feed"],
                        productive=bool(sd.get("productive", True)),
                        drawer=drawer_id,
                    )
                    _require(sysm.id not in systems, f"duplicate system {sysm.id}")
                    for ep in sysm.endpoints:
                        if ep not in nodes:
                            raise DanglingReference(
                                f"system {sysm.id} references unknown node {ep}"
                            )
                    systems[sysm.id] = sysm
                    drawer_systems.append(sysm.id)
                drawer = Drawer(
                    id=drawer_id,
                    rack=rack_id,
                    leaf=dd["leaf"],
                    dc12_feed=dd["dc12_feed"],
                    systems=tuple(drawer_systems),
                )
                if drawer.leaf not in nodes:
                    raise DanglingReference(
                        f"drawer {drawer.id} references unknown leaf {drawer.leaf}"
                    )
                _require(drawer.id not in drawers, f"duplicate drawer {drawer.id}")
                drawers[drawer.id] = drawer
                rack_drawers.append(drawer.id)
            pdu = rd.get("pdu")
            if pdu is not None and pdu not in nodes:
                raise DanglingReference(f"rack {rack_id} references unknown pdu {pdu}")
            rack = Rack(
                id=rack_id,
                location=Location(rd.get("location", "machine_hall")),
                pdu=pdu,
                drawers=tuple(rack_drawers),
            )
            _require(rack.id not in racks, f"duplicate rack {rack.id}")
            racks[rack.id] = rack
        except (KeyError, IndexError) as exc:
            raise ParseError(f"bad rack entry in {rd.get('id', '?')}: {exc}") from exc

    topo = Topology(
        name=name,
        nodes=nodes,
        links=links,
        port_modes=port_modes,
        racks=racks,
        drawers=drawers,
        systems=systems,
    )
    _build_indices(topo)
    return topo


def _build_indices(topo: Topology) -> None:
    adjacency: dict[str, list[tuple[str, str]]] = {n: [] for n in topo.nodes}
    link_of_node: dict[str, list[str]] = {n: [] for n in topo.nodes}
    for link in topo.links.values():
        adjacency[link.a[0]].append((link.b[0], link.id))
        adjacency[link.b[0]].append((link.a[0], link.id))
        link_of_node[link.a[0]].append(link.id)
        link_of_node[link.b[0]].append(link.id)
    # Sorted neighbour order makes the BFS tie-break deterministic.
    for entries in adjacency.values():
        entries.sort()
    topo.adjacency = adjacency
    topo.link_of_node = link_of_node
    topo.system_of_endpoint = {
        ep: s.id for s in topo.systems.values() for ep in s.endpoints
    }


def resolve_path(topo: Topology, src: str, dst: str, vlan: int) -> list[Link]:
    """Shortest VLAN-valid path from src to dst as a hop list of Links.

    A link is traversable for a VLAN when both of its end ports carry it
    (trunk membership, or matching untagged access VLAN). Ties between
    equal-length paths break toward lexicographically smaller node ids.
    Raises NoPath when the endpoints are not connected on that VLAN and
    DanglingReference for unknown endpoints.
    """
    for n in (src, dst):
        if n not in topo.nodes:
            raise DanglingReference(f"unknown node {n}")
    if src == dst:
        return []
    # BFS; neighbours are pre-sorted, so the first discovery of a node is
    # via the lexicographically smallest equal-length predecessor chain.
    parent: dict[str, tuple[str, str]] = {}
    seen = {src}
    frontier = [src]
    while frontier:
        nxt: list[str] = []
        for node in frontier:
            for neigh, link_id in topo.adjacency[node]:
                if neigh in seen:
                    continue
                link = topo.links[link_id]
                if not topo.link_carries(link, vlan):
                    continue
                seen.add(neigh)
                parent[neigh] = (node, link_id)
                if neigh == dst:
                    return _walk_back(topo, parent, src, dst)
                nxt.append(neigh)
        frontier = nxt
    raise NoPath(src, dst, vlan)


def _walk_back(
    topo: Topology, parent: dict[str, tuple[str, str]], src: str, dst: str
) -> list[Link]:
    hops: list[Link] = []
    node = dst
    while node != src:
        prev, link_id = parent[node]
        hops.append(topo.links[link_id])
        node = prev
    hops.reverse()
    return hops


@dataclass(frozen=True)
class FlowDemand:
    src: str
    dst: str
    vlan: int
    rate_bps: float


@dataclass
class DemandReport:
    """Directed per-link offered load for a static set of flows."""

    demand_bps: dict[tuple[str, str], float]
    oversubscribed: list[tuple[str, str]]

    def on(self, link_id: str, toward: str) -> float:
        return self.demand_bps.get((link_id, toward), 0.0)


def aggregate_demand(
    topo: Topology, demands: list[FlowDemand] | list[tuple[str, str, int, float]]
) -> DemandReport:
    """Sum per-directed-link demand for a flow set and flag oversubscription.

    The direction key is (link id, node the traffic flows toward). A link
    direction is oversubscribed when summed demand exceeds its capacity.
    """
    totals: dict[tuple[str, str], float] = {}
    for d in demands:
        if not isinstance(d, FlowDemand):
            d = FlowDemand(*d)
        node = d.src
        for link in resolve_path(topo, d.src, d.dst, d.vlan):
            toward = link.other_end(node)
            key = (link.id, toward)
            totals[key] = totals.get(key, 0.0) + d.rate_bps
            node = toward
    over = sorted(
        key for key, load in totals.items() if load > topo.links[key[0]].capacity_bps
    )
    return DemandReport(demand_bps=totals, oversubscribed=over)


# --- Validation -------------------------------------------------------------

_TIER_CAPACITY = {
    (NodeKind.CORE_SWITCH, NodeKind.SPINE_SWITCH): {HUNDRED_GBE, TEN_GBE},
    (NodeKind.SPINE_SWITCH, NodeKind.LEAF_SWITCH): {TEN_GBE},
}


def validate_topology(topo: Topology) -> list[Violation]:
    """Check the semantic rules of the installation; returns all violations.

    An empty list means the topology is sound: exactly one core switch,
    tier-appropriate link capacities, trunked inter-switch ports, untagged
    single-VLAN device ports, complete power composition, and VLAN
    provisioning for every system's management and experiment paths.
    """
    out: list[Violation] = []

    cores = topo.core_switches
    if len(cores) != 1:
        out.append(
            Violation(
                "missing_core",
                topo.name,
                f"expected exactly one core switch, found {len(cores)}",
            )
        )

    for link in sorted(topo.links.values(), key=lambda l: l.id):
        ka = topo.nodes[link.a[0]].kind
        kb = topo.nodes[link.b[0]].kind
        pair = tuple(sorted((ka, kb), key=lambda k: k.value))
        allowed = _TIER_CAPACITY.get((pair[0], pair[1])) or _TIER_CAPACITY.get(
            (pair[1], pair[0])
        )
        if {ka, kb} <= SWITCH_KINDS:
            for end in (link.a, link.b):
                if not topo.port_modes[end].mode == "trunk":
                    out.append(
                        Violation(
                            "port_mode",
                            link.id,
                            f"inter-switch port {end} must be a tagged trunk",
                        )
                    )
            if allowed and link.capacity_bps not in allowed:
                out.append(
                    Violation(
                        "tiering",
                        link.id,
                        f"{ka.value}<->{kb.value} link at {link.capacity_bps:.0f} bps "
                        f"not in allowed tier capacities",
                    )
                )
        if NodeKind.LEAF_SWITCH in (ka, kb) and (
            ka in DEVICE_KINDS or kb in DEVICE_KINDS
        ):
            if link.capacity_bps != GBE:
                out.append(
                    Violation(
                        "tiering",
                        link.id,
                        "leaf<->device links must run at 1 GbE",
                    )
                )
            for end in (link.a, link.b):
                mode = topo.port_modes[end]
                if not mode.is_access:
                    out.append(
                        Violation(
                            "port_mode",
                            link.id,
                            f"device-facing port {end} must be untagged access",
                        )
                    )

    for (node, port), mode in topo.port_modes.items():
        if mode.is_access and len(mode.vlans) != 1:
            out.append(
                Violation(
                    "access_vlan",
                    f"{node}:{port}",
                    "access ports carry exactly one untagged VLAN",
                )
            )

    seen_feeds: set[str] = set()
    for drawer in sorted(topo.drawers.values(), key=lambda d: d.id):
        if not drawer.dc12_feed:
            out.append(
                Violation("power", drawer.id, "drawer lacks its 12 V DC feed")
            )
        elif drawer.dc12_feed in seen_feeds:
            out.append(
                Violation("power", drawer.id, "12 V feed shared across drawers")
            )
        seen_feeds.add(drawer.dc12_feed)
        leaf = topo.nodes.get(drawer.leaf)
        if leaf is None or leaf.kind != NodeKind.LEAF_SWITCH:
            out.append(
                Violation("power", drawer.id, "drawer lacks exactly one leaf switch")
            )
        if not 1 <= len(drawer.systems) <= 2:
            out.append(
                Violation(
                    "composition",
                    drawer.id,
                    f"drawer holds {len(drawer.systems)} systems, expected 1-2",
                )
            )

    for system in sorted(topo.systems.values(), key=lambda s: s.id):
        out.extend(_validate_system(topo, system))

    return out


def _validate_system(topo: Topology, system: System) -> list[Violation]:
    out: list[Violation] = []
    if not system.ac6_feed:
        out.append(
            Violation("power", system.id, "system lacks its 6 V analog feed")
        )
    if len(system.fpgas) != 2 or not system.controller:
        out.append(
            Violation(
                "composition",
                system.id,
                "system must expose exactly two FPGA endpoints and one controller",
            )
        )
    leaf = topo.drawers[system.drawer].leaf
    expected = {
        system.controller: Vlan.SYSTEM_MGMT,
        system.fpgas[0]: Vlan.EXPERIMENT_DATA,
        system.fpgas[1]: Vlan.EXPERIMENT_DATA,
    }
    for endpoint, vlan in expected.items():
        links = [
            topo.links[lid]
            for lid in topo.link_of_node.get(endpoint, [])
        ]
        attached = [l for l in links if leaf in (l.a[0], l.b[0])]
        if len(links) != 1 or not attached:
            out.append(
                Violation(
                    "composition",
                    system.id,
                    f"{endpoint} must attach to drawer leaf {leaf} and nothing else",
                )
            )
            continue
        link = attached[0]
        for end in (link.a, link.b):
            mode = topo.port_modes[end]
            if not (mode.is_access and mode.carries(vlan)):
                out.append(
                    Violation(
                        "vlan_provisioning",
                        system.id,
                        f"port {end} must be untagged access on VLAN {int(vlan)}",
                    )
                )
                break
    # Management and experiment reachability from the operations side.
    monitors = topo.nodes_of_kind(NodeKind.MONITOR_HOST)
    cluster = topo.nodes_of_kind(NodeKind.CLUSTER_NODE)
    if monitors:
        try:
            resolve_path(topo, monitors[0].id, system.controller, Vlan.SYSTEM_MGMT)
            resolve_path(topo, monitors[0].id, system.fpgas[0], Vlan.EXPERIMENT_DATA)
        except NoPath as exc:
            out.append(
                Violation("vlan_provisioning", system.id, f"monitoring path: {exc}")
            )
    if cluster:
        try:
            resolve_path(
                topo, cluster[0].id, system.fpgas[0], Vlan.EXPERIMENT_DATA
            )
        except NoPath as exc:
            out.append(
                Violation("vlan_provisioning", system.id, f"experiment path: {exc}")
            )
    return out


# --- Canonical default fleet ------------------------------------------------

N_CLUSTER_NODES = 26
N_REMOTE_NODES = 2
N_RACKS = 2
DRAWERS_PER_RACK = 4
N_PRODUCTIVE = 13

ALL_VLANS = [1, 2, 3, 4]


def default_fleet() -> dict:
    """Build the canonical installation document.

    One core switch in the server room; one spine per area (machine hall,
    laboratories); two racks of four drawers each in the machine hall, two
    systems per drawer (16 systems, the first 13 productive); 26 cluster
    nodes and the central monitor host on the core; two remote lab nodes
    on the laboratory spine. Port counts per switch are an assumption of
    this document, chosen to fit the modeled hardware.
    """
    nodes: list[dict] = []
    links: list[dict] = []
    port_modes: list[dict] = []

    def add_node(nid: str, kind: NodeKind, loc: Location) -> None:
        nodes.append({"id": nid, "kind": kind.value, "location": loc.value})

    def trunk(node: str, port: str, vlans: list[int] | None = None) -> None:
        port_modes.append(
            {"node": node, "port": port, "mode": "trunk", "vlans": vlans or ALL_VLANS}
        )

    def access(node: str, port: str, vlan: int) -> None:
        port_modes.append({"node": node, "port": port, "mode": "access", "vlan": vlan})

    def link(
        a: tuple[str, str], b: tuple[str, str], capacity: float, delay: float = DEFAULT_LINK_DELAY_S
    ) -> None:
        links.append(
            {
                "id": f"{a[0]}~{b[0]}",
                "a": list(a),
                "b": list(b),
                "capacity_bps": capacity,
                "delay_s": delay,
            }
        )

    add_node("core", NodeKind.CORE_SWITCH, Location.SERVER_ROOM)
    add_node("spine-mh", NodeKind.SPINE_SWITCH, Location.MACHINE_HALL)
    add_node("spine-lab", NodeKind.SPINE_SWITCH, Location.LABORATORY)
    for spine, cport in (("spine-mh", "spine0"), ("spine-lab", "spine1")):
        trunk("core", cport)
        trunk(spine, "up0")
        link(("core", cport), (spine, "up0"), HUNDRED_GBE)

    add_node("monitor", NodeKind.MONITOR_HOST, Location.SERVER_ROOM)
    trunk("core", "mon0")
    trunk("monitor", "eth0")
    link(("core", "mon0"), ("monitor", "eth0"), TEN_GBE)

    for i in range(N_CLUSTER_NODES):
        cn = f"cn{i:02d}"
        add_node(cn, NodeKind.CLUSTER_NODE, Location.SERVER_ROOM)
        trunk("core", f"node{i:02d}")
        trunk(cn, "eth0")
        link(("core", f"node{i:02d}"), (cn, "eth0"), TEN_GBE)

    for i in range(N_REMOTE_NODES):
        rn = f"rcn{i}"
        add_node(rn, NodeKind.REMOTE_CLUSTER_NODE, Location.LABORATORY)
        trunk("spine-lab", f"node{i}")
        trunk(rn, "eth0")
        link(("spine-lab", f"node{i}"), (rn, "eth0"), TEN_GBE)

    racks: list[dict] = []
    sys_idx = 0
    for r in range(1, N_RACKS + 1):
        rack_id = f"r{r}"
        pdu = f"{rack_id}-pdu"
        add_node(pdu, NodeKind.PDU, Location.MACHINE_HALL)
        rack_drawers: list[dict] = []
        for d in range(1, DRAWERS_PER_RACK + 1):
            drawer_id = f"{rack_id}d{d}"
            leaf = f"{drawer_id}-leaf"
            add_node(leaf, NodeKind.LEAF_SWITCH, Location.MACHINE_HALL)
            # Each leaf hangs off one 10 GbE breakout leg of the spine.
            leg = (r - 1) * DRAWERS_PER_RACK + (d - 1)
            trunk("spine-mh", f"leg{leg}")
            trunk(leaf, "up0")
            link(("spine-mh", f"leg{leg}"), (leaf, "up0"), TEN_GBE)
            drawer_systems: list[dict] = []
            for s in range(2):
                sid = f"s{sys_idx:02d}"
                ctrl, fp0, fp1 = f"{sid}-ctrl", f"{sid}-fpga0", f"{sid}-fpga1"
                add_node(ctrl, NodeKind.SYSTEM_CONTROLLER, Location.MACHINE_HALL)
                add_node(fp0, NodeKind.FPGA_ENDPOINT, Location.MACHINE_HALL)
                add_node(fp1, NodeKind.FPGA_ENDPOINT, Location.MACHINE_HALL)
                base = s * 3
                for port, endpoint, vlan in (
                    (f"d{base}", ctrl, int(Vlan.SYSTEM_MGMT)),
                    (f"d{base + 1}", fp0, int(Vlan.EXPERIMENT_DATA)),
                    (f"d{base + 2}", fp1, int(Vlan.EXPERIMENT_DATA)),
                ):
                    access(leaf, port, vlan)
                    access(endpoint, "eth0", vlan)
                    link((leaf, port), (endpoint, "eth0"), GBE)
                drawer_systems.append(
                    {
                        "id": sid,
                        "controller": ctrl,
                        "fpgas": [fp0, fp1],
                        "ac6_feed": f"{sid}-ac6",
                        "productive": sys_idx < N_PRODUCTIVE,
                    }
                )
                sys_idx += 1
            rack_drawers.append(
                {
                    "id": drawer_id,
                    "leaf": leaf,
                    "dc12_feed": f"{drawer_id}-dc12",
                    "systems": drawer_systems,
                }
            )
        # Rack PDUs sit on the infrastructure management VLAN via the first
        # drawer leaf of the rack.
        first_leaf = rack_drawers[0]["leaf"]
        access(first_leaf, "pdu", int(Vlan.INFRA_MGMT))
        access(pdu, "eth0", int(Vlan.INFRA_MGMT))
        link((first_leaf, "pdu"), (pdu, "eth0"), GBE)
        racks.append(
            {
                "id": rack_id,
                "location": Location.MACHINE_HALL.value,
                "pdu": pdu,
                "drawers": rack_drawers,
            }
        )

    return {
        "name": "default_fleet",
        "nodes": nodes,
        "links": links,
        "port_modes": port_modes,
        "racks": racks,
    }


def default_fleet_path() -> Path:
    return Path(__file__).parent / "data" / "default_fleet.json"


def load_default_fleet() -> Topology:
    path = default_fleet_path()
    if path.exists():
        return load_topology(path)
    return load_topology(default_fleet())
