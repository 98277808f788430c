"""
Runtime package: client and server middleware, task registry and decision engine.
"""
from offgrid.utils.logger_setup import log_debug
log_debug("runtime package initialized.")

from .tasks import TaskDescriptor, TaskContext, build_bundle, parse_bundle, bundle_hash
from .decision import NetworkProfile, Placement, decide, estimate_times, calibrate
from .client import ClientRuntime, ClientCacheView, TransferMetrics, should_elide
from .server import ServerRuntime, ServerCache, CodeRegistry, ExecutionSession, TcpServer
