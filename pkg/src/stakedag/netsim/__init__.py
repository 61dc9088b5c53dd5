"""Seeded multi-node simulator."""

from .config import ByzantineSpec, ConfigError, SimConfig, StakeChange
from .node import Node, SimMessage
from .peers import select_peers
from .sync import StakeBook, sync_events, sync_stakes
from .world import SimReport, World, run_simulation

__all__ = [
    "ByzantineSpec",
    "ConfigError",
    "SimConfig",
    "StakeChange",
    "Node",
    "SimMessage",
    "select_peers",
    "StakeBook",
    "sync_events",
    "sync_stakes",
    "SimReport",
    "World",
    "run_simulation",
]
