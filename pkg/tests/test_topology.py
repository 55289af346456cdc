"""Topology loading, routing, demand aggregation and design-rule validation."""

import copy
import json
from importlib import resources

import pytest

from fleetops.topology import (
    DanglingReference,
    NodeKind,
    ParseError,
    aggregate_demand,
    load_default_fleet,
    load_topology,
    resolve_path,
    validate_topology,
)


def default_doc() -> dict:
    text = (resources.files("fleetops") / "data" / "default_fleet.json").read_text()
    return json.loads(text)


# -- loading ------------------------------------------------------------------------


def test_default_fleet_shape(topo):
    assert len(topo.systems) == 16
    assert sum(s.productive for s in topo.systems.values()) == 13
    assert len(topo.racks) == 2
    assert len(topo.drawers) == 8
    assert len(topo.nodes) == 90
    assert len(topo.links) == 89
    assert [n.id for n in topo.nodes.values() if n.kind is NodeKind.CORE_SWITCH] == ["core"]


def test_default_fleet_validates_clean(topo):
    assert validate_topology(topo) == []


def test_endpoint_index(topo):
    assert topo.system_of_endpoint["s03-fpga0"] == "s03"
    assert topo.system_of_endpoint["s03-ctrl"] == "s03"
    assert "cn00" not in topo.system_of_endpoint
    sysd = topo.systems["s03"]
    assert sysd.endpoints == (sysd.controller,) + sysd.fpgas


def test_load_rejects_non_object():
    with pytest.raises(ParseError):
        load_topology(["not", "a", "topology"])


def test_load_rejects_dangling_reference():
    doc = default_doc()
    doc["links"][0]["a"][0] = "ghost-switch"
    with pytest.raises(DanglingReference):
        load_topology(doc)


# -- routing ----------------------------------------------------------------------


def bfs_oracle(topo, src: str, dst: str, vlan: int) -> list[str] | None:
    """Shortest VLAN-carrying path, found without the production helper."""
    from collections import deque

    prev: dict[str, tuple[str, str]] = {}
    seen = {src}
    q = deque([src])
    while q:
        node = q.popleft()
        if node == dst:
            hops = []
            while node != src:
                link_id, node = prev[node]
                hops.append(link_id)
            return hops[::-1]
        for neigh, link_id in sorted(topo.adjacency.get(node, [])):
            link = topo.links[link_id]
            if neigh in seen or not topo.link_carries(link, vlan):
                continue
            seen.add(neigh)
            prev[neigh] = (link_id, node)
            q.append(neigh)
    return None


def test_frozen_experiment_path(topo):
    hops = [l.id for l in resolve_path(topo, "cn00", "s03-fpga0", 4)]
    assert hops == [
        "core~cn00",
        "core~spine-mh",
        "spine-mh~r1d2-leaf",
        "r1d2-leaf~s03-fpga0",
    ]


def test_frozen_management_path(topo):
    hops = [l.id for l in resolve_path(topo, "s00-ctrl", "monitor", 3)]
    assert hops == [
        "r1d1-leaf~s00-ctrl",
        "spine-mh~r1d1-leaf",
        "core~spine-mh",
        "core~monitor",
    ]


def test_paths_match_bfs_oracle(topo):
    cases = [
        ("cn00", "s03-fpga0", 4),
        ("cn25", "s15-fpga1", 4),
        ("monitor", "s00-ctrl", 3),
        ("monitor", "s12-fpga0", 4),
        ("cn05", "monitor", 1),
        ("rcn0", "s07-fpga0", 4),
    ]
    for src, dst, vlan in cases:
        got = [l.id for l in resolve_path(topo, src, dst, vlan)]
        want = bfs_oracle(topo, src, dst, vlan)
        assert got is not None and len(got) == len(want), (src, dst, vlan, got, want)


def test_vlan_gating_blocks_fpga_on_mgmt_vlan(topo):
    # FPGA access ports carry only the experiment VLAN.
    assert bfs_oracle(topo, "monitor", "s00-fpga0", 3) is None
    assert bfs_oracle(topo, "monitor", "s00-fpga0", 4) is not None
    # Controllers carry only the system-management VLAN.
    assert bfs_oracle(topo, "monitor", "s00-ctrl", 4) is None


# -- demand aggregation --------------------------------------------------------------


def test_aggregate_demand_sums_shared_hops(topo):
    rep = aggregate_demand(
        topo, [("cn00", "s03-fpga0", 4, 6e8), ("cn01", "s03-fpga1", 4, 6e8)]
    )
    assert rep.on("core~spine-mh", "spine-mh") == pytest.approx(1.2e9)
    assert rep.on("r1d2-leaf~s03-fpga0", "s03-fpga0") == pytest.approx(6e8)
    assert rep.on("r1d2-leaf~s03-fpga1", "s03-fpga1") == pytest.approx(6e8)
    assert rep.on("core~spine-mh", "core") == 0.0  # opposite direction untouched
    assert rep.oversubscribed == []


def test_aggregate_demand_flags_oversubscription(topo):
    rep = aggregate_demand(
        topo, [("cn00", "s03-fpga0", 4, 6e8), ("cn01", "s03-fpga0", 4, 6e8)]
    )
    assert rep.oversubscribed == [("r1d2-leaf~s03-fpga0", "s03-fpga0")]


def test_aggregate_demand_brute_force(topo):
    demands = [
        ("cn00", "s00-fpga0", 4, 1e8),
        ("cn01", "s00-fpga1", 4, 2e8),
        ("cn02", "s05-fpga0", 4, 3e8),
        ("monitor", "s05-fpga0", 4, 5e7),
    ]
    rep = aggregate_demand(topo, demands)
    totals: dict[tuple[str, str], float] = {}
    for src, dst, vlan, rate in demands:
        node = src
        for link_id in bfs_oracle(topo, src, dst, vlan):
            link = topo.links[link_id]
            toward = link.other_end(node)
            totals[(link_id, toward)] = totals.get((link_id, toward), 0.0) + rate
            node = toward
    assert set(rep.demand_bps) == set(totals)
    for key, want in totals.items():
        assert rep.on(*key) == pytest.approx(want)


# -- design-rule validation ----------------------------------------------------------


def _violation_codes(doc) -> set[str]:
    return {v.code for v in validate_topology(load_topology(doc))}


def test_two_cores_flagged():
    doc = default_doc()
    doc["nodes"].append({"id": "core2", "kind": "core_switch", "location": "machine_hall"})
    assert "missing_core" in _violation_codes(doc)


def test_interswitch_access_port_flagged():
    doc = default_doc()
    for pm in doc["port_modes"]:
        if pm["node"] == "core" and pm["port"] == "spine0":
            pm["mode"] = "access"
            del pm["vlans"]
            pm["vlan"] = 4
    assert "port_mode" in _violation_codes(doc)


def test_device_link_capacity_flagged():
    doc = default_doc()
    for link in doc["links"]:
        if link["id"] == "r1d1-leaf~s00-fpga0":
            link["capacity_bps"] = 10_000_000_000
    assert "tiering" in _violation_codes(doc)


def test_multi_vlan_access_port_flagged(topo):
    # The JSON form cannot express this (access entries carry one `vlan`
    # field), so patch the parsed structure directly.
    from fleetops.topology import PortMode

    topo.port_modes[("s00-fpga0", "eth0")] = PortMode("access", frozenset({3, 4}))
    assert "access_vlan" in {v.code for v in validate_topology(topo)}


def test_missing_vlan_provisioning_flagged():
    # Strip the experiment VLAN from the spine uplink serving rack 1: every
    # system behind it loses its provisioned path to the cluster.
    doc = default_doc()
    for pm in doc["port_modes"]:
        if pm["node"] == "spine-mh" and 4 in pm.get("vlans", []):
            pm["vlans"] = [1, 2, 3]
    assert "vlan_provisioning" in _violation_codes(doc)


def test_clean_doc_roundtrip_stays_clean():
    doc = copy.deepcopy(default_doc())
    assert _violation_codes(doc) == set()


def test_loads_are_identical():
    a = load_default_fleet()
    b = load_default_fleet()
    assert sorted(a.nodes) == sorted(b.nodes)
    assert sorted(a.links) == sorted(b.links)
    assert a.port_modes == b.port_modes
