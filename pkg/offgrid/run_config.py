"""
Run configuration file: one `key = value` per line, `#` starts a comment.

    server_ip     = 127.0.0.1
    server_port   = 47011
    static_roots  = engine, palette
    cache_enabled = on
    timeout_s     = 10
    strategy      = auto
    network       = 3g
    registry_dir  = /var/lib/offgrid
"""
from dataclasses import dataclass, fields
from typing import Optional

from offgrid import config
from offgrid.core.errors import ConfigError
from offgrid.netsim.link import parse_network
from offgrid.utils.logger_setup import log_debug

log_debug("run_config module initialized.")

STRATEGY_CHOICES = ('auto', 'local', 'eager', 'lazy', 'pipelined')
_TRUE = {'on', 'true', '1', 'yes'}
_FALSE = {'off', 'false', '0', 'no'}


def parse_bool(text):
    value = str(text).strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigError(f"expected on/off, got '{text}'")


def parse_port(text):
    port = int(text)
    if not 0 < port < 65536:
        raise ConfigError(f"port out of range: {port}")
    return port


def _timeout(text):
    value = float(text)
    if value <= 0:
        raise ConfigError(f"timeout_s must be > 0, got {value}")
    return value


def _strategy(text):
    value = text.strip().lower()
    if value not in STRATEGY_CHOICES:
        raise ConfigError(f"strategy must be one of {', '.join(STRATEGY_CHOICES)}, got '{text}'")
    return value


def _network(text):
    parse_network(text)
    return text.strip()


def _names(text):
    return [name.strip() for name in text.split(',') if name.strip()]


_PARSERS = {
    'server_ip': str.strip,
    'server_port': parse_port,
    'static_roots': _names,
    'cache_enabled': parse_bool,
    'timeout_s': _timeout,
    'strategy': _strategy,
    'network': _network,
    'registry_dir': str.strip,
}


@dataclass
class RunConfig:
    server_ip: str = config.DEFAULT_SERVER_IP
    server_port: int = config.DEFAULT_PORT
    static_roots: Optional[list] = None
    cache_enabled: bool = False
    timeout_s: float = config.DEFAULT_TIMEOUT_S
    strategy: str = 'auto'
    network: str = config.DEFAULT_NETWORK
    registry_dir: Optional[str] = None

    @classmethod
    def parse(cls, text, source='<config>'):
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            key = key.strip()
            if not sep:
                raise ConfigError(f"{source}:{number}: expected key = value")
            if key not in _PARSERS:
                raise ConfigError(f"{source}:{number}: unknown key '{key}'")
            try:
                values[key] = _PARSERS[key](value)
            except ValueError as e:
                raise ConfigError(f"{source}:{number}: bad value for {key}: {e}") from None
            except ConfigError as e:
                raise ConfigError(f"{source}:{number}: {e}") from None
        return cls(**values)

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        return cls.parse(text, source=path)

    def override(self, **changes):
        """Copy with every non-None value in `changes` applied (CLI flags win over the file)."""
        known = {f.name for f in fields(self)}
        current = {name: getattr(self, name) for name in known}
        current.update({k: v for k, v in changes.items() if k in known and v is not None})
        return RunConfig(**current)
