"""Per-system device model: power domains, telemetry values, revisions.

Each system draws from two independent feeds. The drawer's shared 12 V
DC feed powers both systems' FPGAs, controllers and digital periphery;
the per-system 6 V feed powers only that system's analog ASIC domain.
Telemetry values are pure functions of (seed, system, channel, second),
so a fault on one system can never perturb another system's series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .topology import Topology

FEED_DC12 = "dc12"
FEED_AC6 = "ac6"

INITIAL_REVISION = "stable-1"


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    unit: str
    nominal: float
    noise: float  # absolute amplitude of the uniform jitter
    lo: float  # plausible-range bounds for healthy operation
    hi: float
    feed: str  # which feed the measured rail hangs off
    flag: bool = False  # status flags are exact 0/1 values


def _volt(name: str, nominal: float, feed: str) -> ChannelSpec:
    return ChannelSpec(
        name, "V", nominal, nominal * 0.01, nominal * 0.95, nominal * 1.05, feed
    )


def _amp(name: str, nominal: float, feed: str) -> ChannelSpec:
    return ChannelSpec(name, "A", nominal, nominal * 0.05, 0.0, nominal * 2.0, feed)


def _temp(name: str, nominal: float) -> ChannelSpec:
    return ChannelSpec(name, "degC", nominal, 1.5, 15.0, 70.0, FEED_DC12)


#: The 29 per-system telemetry channels sampled once per second:
#: 12 supply voltages, 6 supply currents, 8 temperatures, 1 fan speed
#: and 2 status flags.
CHANNELS: tuple[ChannelSpec, ...] = (
    _volt("v12_in", 12.0, FEED_DC12),
    _volt("v5_periph", 5.0, FEED_DC12),
    _volt("v3v3_periph", 3.3, FEED_DC12),
    _volt("v2v5_fpga0", 2.5, FEED_DC12),
    _volt("v2v5_fpga1", 2.5, FEED_DC12),
    _volt("v1v2_fpga0", 1.2, FEED_DC12),
    _volt("v1v2_fpga1", 1.2, FEED_DC12),
    _volt("v0v85_fpga", 0.85, FEED_DC12),
    _volt("v6_in", 6.0, FEED_AC6),
    _volt("v1v8_analog", 1.8, FEED_AC6),
    _volt("v1v2_analog", 1.2, FEED_AC6),
    _volt("v0v9_analog", 0.9, FEED_AC6),
    _amp("i12_in", 8.0, FEED_DC12),
    _amp("i_fpga0", 3.0, FEED_DC12),
    _amp("i_fpga1", 3.0, FEED_DC12),
    _amp("i_periph", 1.5, FEED_DC12),
    _amp("i6_in", 2.0, FEED_AC6),
    _amp("i_analog", 1.8, FEED_AC6),
    _temp("t_fpga0", 48.0),
    _temp("t_fpga1", 48.0),
    _temp("t_asic0", 38.0),
    _temp("t_asic1", 38.0),
    _temp("t_board", 35.0),
    _temp("t_ctrl", 40.0),
    _temp("t_inlet", 24.0),
    _temp("t_outlet", 32.0),
    ChannelSpec("fan_rpm", "rpm", 4200.0, 150.0, 2000.0, 6000.0, FEED_DC12),
    ChannelSpec("flag_asic_power_good", "bool", 1.0, 0.0, 1.0, 1.0, FEED_AC6, flag=True),
    ChannelSpec("flag_fpga_config_done", "bool", 1.0, 0.0, 1.0, 1.0, FEED_DC12, flag=True),
)

CHANNEL_BY_NAME = {c.name: c for c in CHANNELS}

assert len(CHANNELS) == 29


class ControllerDown(Exception):
    """The system controller cannot report: 12 V feed failed or it hung."""


class DeviceFleet:
    """Mutable runtime state of every system plus power bookkeeping."""

    def __init__(self, topo: Topology, seed: int):
        self.topo = topo
        self.seed = seed
        self.dc12_failed: set[str] = set()  # drawer ids
        self.ac6_failed: set[str] = set()  # system ids
        self.dark_nodes: set[str] = set()  # site outage staging, node ids
        self.site_outage = False
        self.hung: set[str] = set()  # system ids with an unresponsive controller
        self.revision: dict[str, str] = {
            sid: INITIAL_REVISION for sid in sorted(topo.systems)
        }
        self.stable_revision = INITIAL_REVISION
        self._keys: dict[tuple[str, str], int] = {}
        for sid in topo.systems:
            for ch in CHANNELS:
                self._keys[(sid, ch.name)] = rng.key64(seed, "telemetry", sid, ch.name)

    # -- power queries ----------------------------------------------------------

    def node_powered(self, node: str) -> bool:
        if node in self.dark_nodes:
            return False
        sid = self.topo.system_of_endpoint.get(node)
        if sid is not None:
            drawer = self.topo.systems[sid].drawer
            return drawer not in self.dc12_failed
        return True

    def analog_powered(self, system: str) -> bool:
        if system in self.ac6_failed:
            return False
        return f"{system}:asic" not in self.dark_nodes

    def controller_reporting(self, system: str) -> bool:
        sysd = self.topo.systems[system]
        return self.node_powered(sysd.controller) and system not in self.hung

    def fpgas_powered(self, system: str) -> bool:
        sysd = self.topo.systems[system]
        return all(self.node_powered(f) for f in sysd.fpgas)

    def telemetry_mode(self, system: str) -> tuple[bool, bool]:
        """(reporting, analog_ok) - the pair that shapes the sample stream."""
        return self.controller_reporting(system), self.analog_powered(system)

    # -- telemetry values ---------------------------------------------------------

    def sample_channel(
        self, system: str, channel: ChannelSpec, seconds: np.ndarray, analog_ok: bool
    ) -> np.ndarray:
        """Channel values at integer seconds, healthy or analog-failed."""
        u = rng.unit_vector(self._keys[(system, channel.name)], seconds)
        if channel.feed == FEED_AC6 and not analog_ok:
            if channel.flag:
                return np.zeros_like(u)
            # Rail collapsed: a few millivolts of residual noise.
            return 0.02 * u
        if channel.flag:
            return np.ones_like(u)
        return channel.nominal + channel.noise * (2.0 * u - 1.0)

    def tick_telemetry(self, system: str, t: float) -> dict[str, float]:
        """All 29 channel values for one sampling instant.

        Raises ControllerDown when the controller has no 12 V feed or is
        hung; in both cases the gap is the signal.
        """
        if system not in self.topo.systems:
            raise KeyError(system)
        if not self.controller_reporting(system):
            raise ControllerDown(system)
        analog_ok = self.analog_powered(system)
        sec = np.array([int(t)], dtype=np.uint64)
        return {
            ch.name: float(self.sample_channel(system, ch, sec, analog_ok)[0])
            for ch in CHANNELS
        }

    # -- health and fidelity ---------------------------------------------------------

    def health_flags(self, system: str) -> dict[str, bool]:
        return {
            "sram_ok": True,
            "highspeed_links_ok": self.fpgas_powered(system),
            "asic_supplies_ok": self.analog_powered(system),
        }

    def fidelity_accuracy(self, system: str, night: int) -> float:
        """Calibration-task accuracy; nominal band is [0.90, 0.99]."""
        base = 0.945 + 0.04 * (2.0 * rng.unit(self.seed, "fidelity", system, night) - 1.0)
        if not self.analog_powered(system):
            return round(base - 0.5, 6)
        return round(base, 6)

    def set_revision(self, system: str, revision: str) -> None:
        self.revision[system] = revision
