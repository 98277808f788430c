import os

# --- Configuration ---
IS_DEBUG_MODE = False # Overridden by run_app.py when --debug is used
DEBUG_LOG_FILE = 'offgrid_debug.log' # Created in the directory the CLI is executed from.

# offgrid/ lives directly under the project root.
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))

# Code bundles registered by clients are cached here between server sessions.
DEFAULT_REGISTRY_DIR = os.path.join(PROJECT_ROOT, '.offgrid', 'registry')
DEFAULT_SERVER_IP = '127.0.0.1'
DEFAULT_PORT = 47011

# --- Timeouts ---
DEFAULT_TIMEOUT_S = 10.0
# Emulated links extend the wall timeout by rtt * factor of virtual idle time.
VIRTUAL_TIMEOUT_RTT_FACTOR = 100

# --- State transfer ---
# Encoded size of an empty proxy node: guid(16) + class_id(4) + flags(1) + ref_count(4) + payload_len(4)
PROXY_OVERHEAD = 29
GRAPH_MAGIC = b'COG1'

# --- Network profiler ---
PING_COUNT = 3
PROBE_BYTES = 64 * 1024
PROFILE_EWMA_ALPHA = 0.5
# A profile older than this is measured again before placing; an unreachable
# server is retried at the same pace.
PROFILE_INTERVAL_S = 30.0

# --- Compute speeds (work units / second) ---
# Virtual-clock runs charge task work against these. Real-clock runs replace
# them with calibrate() measurements at startup.
DEFAULT_LOCAL_SPEED = 2.0e6
DEFAULT_SERVER_SPEED = 2.0e7
CALIBRATION_UNITS = 4 * 1024 * 1024 # bytes hashed by the calibration task

# --- Link presets (rtt seconds, bytes / second) ---
LINK_PRESETS = {
    'wifi': {'rtt': 0.010, 'up_bandwidth': 2_500_000, 'down_bandwidth': 2_500_000},
    '3g': {'rtt': 0.150, 'up_bandwidth': 125_000, 'down_bandwidth': 500_000},
    'loopback': {'rtt': 0.0001, 'up_bandwidth': 1_000_000_000, 'down_bandwidth': 1_000_000_000},
}
DEFAULT_NETWORK = 'wifi'

# --- Workload defaults ---
DEFAULT_SEED = 7
DEFAULT_GAME_DEPTH = 4
DEFAULT_GAME_MOVES = 1
DEFAULT_LINSOLVE_N = 32
DEFAULT_LINSOLVE_K = 10
DEFAULT_BLOB_COUNT = 10
DEFAULT_BLOB_BYTES = 150_000
DEFAULT_BLOB_ROUNDS = 8
DEFAULT_PI_DIGITS = 2_000
MAX_GAME_DEPTH = 8
GAME_BRANCHING = 8

# --- Bench ---
DEFAULT_TRIALS = 1
CSV_COLUMNS = ['workload', 'strategy', 'link', 'cache', 'trials', 'wall_s',
               'up_bytes', 'down_bytes', 'fetches', 'speedup']
