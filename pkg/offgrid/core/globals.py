import threading

from offgrid import config

# --- Global State for Compute Calibration ---
# Work units per second. Virtual-clock runs use the configured defaults;
# real-clock runs overwrite them once through runtime.decision.calibrate().
local_speed = config.DEFAULT_LOCAL_SPEED
server_speed = config.DEFAULT_SERVER_SPEED
speeds_calibrated = False
calibration_lock = threading.Lock()


def set_speeds(local, server, calibrated=False):
    global local_speed, server_speed, speeds_calibrated
    if local <= 0 or server <= 0:
        raise ValueError(f"speeds must be positive, got local={local} server={server}")
    with calibration_lock:
        local_speed = float(local)
        server_speed = float(server)
        speeds_calibrated = calibrated


def reset_speeds():
    set_speeds(config.DEFAULT_LOCAL_SPEED, config.DEFAULT_SERVER_SPEED)


from offgrid.utils.logger_setup import log_debug
log_debug("core.globals module initialized.")
