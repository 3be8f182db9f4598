"""Run configuration: validation, file loading and hashing."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

INIT_PRESETS = ("taylor_green", "random")
VELOCITY_METHODS = ("weber", "vorticity")

# fields that change how a run is scheduled but never its results
_NOT_HASHED = ("workers",)

_ALIASES = {"N": "copies", "M": "replicas", "T_final": "t_final", "T": "t_final", "eps": "epsilon"}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(message)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one particle-system run.

    n            grid points per axis (power of two)
    copies       N, copies of the stochastic flow
    nu           viscosity (0 gives the Euler special case)
    epsilon      reset tolerance, 0 < epsilon < 1
    dt           time step
    t_final      end time
    seed         root seed of all Brownian streams
    check_every  steps between evaluations of the reset criterion
    replicas     M, independent outer replicas for expectations
    record_every steps between diagnostics rows
    snapshot_every  steps between u_mean snapshots (0: resets only)
    init         "taylor_green" or "random"
    """

    n: int = 64
    copies: int = 16
    nu: float = 0.05
    epsilon: float = 0.5
    dt: float = 0.01
    t_final: float = 1.0
    seed: int = 0
    check_every: int = 1
    replicas: int = 1
    record_every: int = 10
    snapshot_every: int = 0
    init: str = "taylor_green"
    init_amplitude: float = 1.0
    init_seed: int = 0
    init_kmax: int = 4
    init_energy: float = 2.0 * math.pi**2
    velocity: str = "weber"
    dealias: bool = True
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    workers: int = 1

    def __post_init__(self):
        n = self.n
        if not isinstance(n, int) or n < 8 or n & (n - 1):
            raise ConfigError("n", "n must be a power of two")
        _positive_int(self, "copies", "replicas", "check_every", "record_every", "workers",
                      "init_kmax", "newton_max_iter")
        if not isinstance(self.snapshot_every, int) or self.snapshot_every < 0:
            raise ConfigError("snapshot_every", "snapshot_every must be a non-negative integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**63:
            raise ConfigError("seed", "seed must be a non-negative integer")
        if not (math.isfinite(self.nu) and self.nu >= 0):
            raise ConfigError("nu", "nu must be non-negative")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon", "epsilon must lie in (0,1)")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("dt", "dt must be positive")
        if not (math.isfinite(self.t_final) and self.t_final >= 0):
            raise ConfigError("t_final", "t_final must be non-negative")
        if self.init not in INIT_PRESETS:
            raise ConfigError("init", f"init must be one of {INIT_PRESETS}")
        if self.velocity not in VELOCITY_METHODS:
            raise ConfigError("velocity", f"velocity must be one of {VELOCITY_METHODS}")
        if not self.init_energy > 0:
            raise ConfigError("init_energy", "init_energy must be positive")
        if not self.newton_tol > 0:
            raise ConfigError("newton_tol", "newton_tol must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results."""
        d = {k: v for k, v in asdict(self).items() if k not in _NOT_HASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _positive_int(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(name, f"{name} must be a positive integer")


def _coerce(name: str, value: Any) -> Any:
    kind = {f.name: f.type for f in fields(SimConfig)}[name]
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError
            return bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"{name}: cannot interpret {value!r} as {kind}") from None


def _flatten(data: dict[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(_flatten(value))
        else:
            flat[key] = value
    return flat


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read raw settings from a TOML config, a JSON config or a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if "config" in data and isinstance(data["config"], dict):
            return dict(data["config"])
        return _flatten(data)
    try:
        return _flatten(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> SimConfig:
    """Build a validated SimConfig; ``overrides`` beat file values."""
    raw: dict[str, Any] = load_config_file(path) if path is not None else {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(SimConfig)}
    values = {}
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        if name not in known:
            raise ConfigError(key, f"unknown config key {key!r}")
        values[name] = _coerce(name, value)
    return SimConfig(**values)
