"""Session configuration and its ``key = value`` file format.

Example::

    # 16-dimensional session, mu_a preset
    preset = mu-a
    model = ideal
    eta = 1.0
    duration_cycles = 100000
    seed_alice = 1
    seed_bob = 2
    seed_channel = 3
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .optics import OpticalSetup
from .photonics import MODELS, PRESETS, NoiseConfig, PulseConfig

SUPPORTED_DIMS = (2, 16)
OUTPUT_DIR_ENV = "QUDIT_QKD_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Seeds:
    alice: int
    bob: int
    channel: int


@dataclass(frozen=True)
class SessionConfig:
    seeds: Seeds
    dim: int = 16
    model: str = "ideal"
    pulse: PulseConfig = field(default_factory=PulseConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    optics: OpticalSetup | None = None
    duration_cycles: int = 100_000
    log_path: str | None = None
    report_path: str | None = None

    def __post_init__(self):
        if self.dim not in SUPPORTED_DIMS:
            raise ConfigError(f"dim = {self.dim} is not supported (use one of {SUPPORTED_DIMS})")
        if self.model not in MODELS:
            raise ConfigError(f"model = {self.model!r} is not one of {MODELS}")
        if self.duration_cycles < 1:
            raise ConfigError("duration_cycles must be >= 1")
        if self.model == "optical":
            setup = self.optics or OpticalSetup(dim=self.dim)
            if setup.dim != self.dim:
                raise ConfigError(f"optics dim {setup.dim} differs from dim {self.dim}")
            object.__setattr__(self, "optics", setup)

    @property
    def wall_hours(self) -> float:
        return self.duration_cycles / self.pulse.rep_rate / 3600.0

    def replace(self, **changes) -> "SessionConfig":
        return replace(self, **changes)

    def snapshot(self) -> dict:
        """Plain dict of every parameter, stable across runs (no paths)."""
        d = asdict(self)
        d.pop("log_path")
        d.pop("report_path")
        return d

    def output_path(self, name: str | None) -> Path | None:
        """Resolve a relative output path against ``$QUDIT_QKD_OUTPUT_DIR`` if set."""
        if name is None:
            return None
        path = Path(name)
        base = os.environ.get(OUTPUT_DIR_ENV)
        if base and not path.is_absolute():
            path = Path(base) / path
        return path


_PULSE_KEYS = {f.name for f in fields(PulseConfig)}
_NOISE_KEYS = {f.name for f in fields(NoiseConfig)}
_OPTICS_KEYS = {f.name for f in fields(OpticalSetup)} - {"dim"}
_SEED_KEYS = {"seed_alice", "seed_bob", "seed_channel"}
_TOP_KEYS = {"dim", "model", "duration_cycles", "log_path", "report_path", "preset"}
KNOWN_KEYS = _PULSE_KEYS | _NOISE_KEYS | _OPTICS_KEYS | _SEED_KEYS | _TOP_KEYS

_INT_KEYS = {"dim", "duration_cycles", "samples_per_lobe"} | _SEED_KEYS
_STR_KEYS = {"model", "log_path", "report_path", "preset"}


def parse_config(text: str, source: str = "<config>") -> SessionConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _STR_KEYS:
                values[key] = value
            else:
                values[key] = float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
        lines[key] = lineno
    return config_from_mapping(values, source, lines)


def config_from_mapping(values: dict, source: str = "<config>", lines: dict | None = None) -> SessionConfig:
    lines = lines or {}

    def where(key):
        return f"{source}:{lines[key]}" if key in lines else source

    missing = sorted(_SEED_KEYS - values.keys())
    if missing:
        raise ConfigError(f"{source}: seeds must be explicit, missing {', '.join(missing)}")

    pulse_kw = {k: values[k] for k in _PULSE_KEYS if k in values}
    preset = values.get("preset")
    try:
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"{where('preset')}: unknown preset {preset!r}")
            pulse = PulseConfig.preset(preset, **pulse_kw)
        else:
            pulse = PulseConfig(**pulse_kw)
        noise = NoiseConfig(**{k: values[k] for k in _NOISE_KEYS if k in values})
        dim = int(values.get("dim", 16))
        optics_kw = {k: values[k] for k in _OPTICS_KEYS if k in values}
        optics = OpticalSetup(dim=dim, **optics_kw) if optics_kw else None
        return SessionConfig(
            seeds=Seeds(values["seed_alice"], values["seed_bob"], values["seed_channel"]),
            dim=dim,
            model=values.get("model", "ideal"),
            pulse=pulse,
            noise=noise,
            optics=optics,
            duration_cycles=int(values.get("duration_cycles", 100_000)),
            log_path=values.get("log_path"),
            report_path=values.get("report_path"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from None


def load_config(path) -> SessionConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))
