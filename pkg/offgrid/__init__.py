"""
offgrid: a computation-offloading middleware.

Registered tasks run locally or on a remote server; their reachable object
graph travels with eager, lazy (proxy-fault) or pipelined transmission, an
object cache elides unchanged objects, and a decision engine picks the
placement from profiled latency and bandwidth. A deterministic network
emulator and a workload suite drive the benchmarks.
"""

__version__ = '0.1.0'
