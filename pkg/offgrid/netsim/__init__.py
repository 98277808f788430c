"""
Network emulation between client and server: link model, virtual clock and
the endpoint channels the runtimes talk through.
"""
from offgrid.utils.logger_setup import log_debug
log_debug("netsim package initialized.")

from .link import Direction, Link, LinkConfig, deliver, parse_network, presets
from .simulator import Simulator
from .channels import (
    Channel,
    RealClockNetwork,
    SocketChannel,
    VirtualChannel,
    VirtualNetwork,
    connect,
)

__all__ = [
    'Direction', 'Link', 'LinkConfig', 'deliver', 'parse_network', 'presets',
    'Simulator',
    'Channel', 'VirtualChannel', 'VirtualNetwork', 'RealClockNetwork', 'SocketChannel', 'connect',
]
