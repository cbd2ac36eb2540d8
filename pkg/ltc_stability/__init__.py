#  Copyright (c) 2024 ltc-stability developers

__version__ = "0.1.0"

from ltc_stability import admm, conic, dynamics, equilibria, monitor, styles, twobus
from ltc_stability.cli import read_network_file
from ltc_stability.common import LtcError
from ltc_stability.network import Event, Network, validate_network
from ltc_stability.table import IterationTable

__all__ = [
    "Event",
    "IterationTable",
    "LtcError",
    "Network",
    "admm",
    "conic",
    "dynamics",
    "equilibria",
    "monitor",
    "read_network_file",
    "styles",
    "twobus",
    "validate_network",
]
