"""Simulator for a proximity-based network of phones.

Devices discover one another over a short-range link, build neighbor-list
routing tables, host or join a meeting session and co-edit minutes of
meeting documents that can be shared with other members.
"""

from .identity import DeviceId, make_device_id
from .routing import RoutingTable, RoutingUpdate, forward, next_hop
from .simulator import SimConfig, World

__all__ = [
    "DeviceId",
    "make_device_id",
    "RoutingTable",
    "RoutingUpdate",
    "forward",
    "next_hop",
    "SimConfig",
    "World",
]
__version__ = "0.1.0"
