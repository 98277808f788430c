"""
Bench package: experiment matrix and report rendering.
"""
from offgrid.utils.logger_setup import log_debug
log_debug("bench package initialized.")

from .matrix import BenchConfig, ExperimentRow, run_matrix, run_cell, check_equivalence, fill_speedups
from .report import emit_report
