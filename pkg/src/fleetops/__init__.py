"""fleetops: deterministic operations simulator for a remotely operated
neuromorphic compute fleet.

The package models the machine-hall network (VLAN-segmented three-tier
tree with per-port deficit-round-robin scheduling), allocation-gated
experiment access, multi-timescale monitoring, the hardware-in-the-loop
CI/CD pipeline, and fault injection, all driven by one deterministic
discrete-event loop.
"""

__version__ = "0.1.0"
