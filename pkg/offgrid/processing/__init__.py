"""
Processing package: deterministic workloads and the kernels they run.
"""
from offgrid.utils.logger_setup import log_debug
log_debug("processing package initialized.")

from .workload_loader import (AVAILABLE_WORKLOADS, WorkloadSpec, build_graph, task_descriptors, server_impls,
                              install_workloads, register_workloads)
