"""
Core package initialization.
Contains the object model, the wire protocol, the exception hierarchy and
process-wide state.
"""
from offgrid.utils.logger_setup import log_debug
log_debug("core package initialized.")

from .errors import (OffgridError, ProtocolError, OversizeMessage, UnknownObject, IllegalState, Conflict,
                     ConfigError, RemoteFailure, RemoteError, EquivalenceViolation)
from .object_model import (ObjectNode, ObjectGraph, ProxyPolicy, TransmissionStrategy, new_guid, derive_guid,
                           reachable_closure, serialize_graph, deserialize_graph, hydrate_proxy, content_hash,
                           apply_result_state, graph_hash)
from .wire_protocol import MessageKind, WireMessage, encode, decode
