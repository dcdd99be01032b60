"""Experiment configuration: key=value files, overrides and a stable hash."""
import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .decoder import GATE_ACTS, SKIP_MODES
from .encoder import MODES
from .tensor import ConfigError, is_power_of_two


@dataclass(frozen=True)
class ExperimentConfig:
    # encoder
    J: int = 3
    L: int = 8
    slant: float = 0.5
    encoder_mode: str = "stride1"
    # decoder
    c_bn: int = 16
    gate_hidden: int = 32
    skip_mode: str = "polar"
    gating: bool = True
    gate_act: str = "sigmoid"
    residual: bool = True
    # objective
    lambda_ptv: float = 0.0
    lambda_align: float = 0.0
    align_pool: bool = False
    # data
    dataset: str = "synthetic"
    sigma: float = 25 / 255
    image_size: int = 64
    n_train: int = 8
    n_test: int = 2
    train_fraction: float = 1.0
    data_seed: int = 0
    # optimisation
    patch: int = 32
    batch: int = 4
    steps: int = 500
    lr: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if self.J < 1 or self.L < 1:
            raise ConfigError(f"J and L must be >= 1 (J={self.J}, L={self.L})")
        if not 0.0 <= self.slant <= 1.0:
            raise ConfigError(f"slant must lie in [0, 1], got {self.slant}")
        if self.encoder_mode not in MODES:
            raise ConfigError(f"encoder_mode must be one of {MODES}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}")
        if self.gate_act not in GATE_ACTS:
            raise ConfigError(f"gate_act must be one of {GATE_ACTS}")
        if not is_power_of_two(self.image_size):
            raise ConfigError(f"image_size must be a power of two, got {self.image_size}")
        if self.patch < 1:
            raise ConfigError(f"patch must be positive, got {self.patch}")
        if self.steps < 0 or self.batch < 1 or self.n_train < 1 or self.n_test < 1:
            raise ConfigError("steps >= 0, batch >= 1, n_train >= 1 and n_test >= 1 are required")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_text(self):
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @property
    def hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    text = raw.strip().strip("'\"")
    try:
        if typ in (bool, "bool"):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            if "/" in text:
                num, den = text.split("/", 1)
                return float(num) / float(den)
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw.strip()!r} as {getattr(typ, '__name__', typ)}") from None


def parse_lines(lines, source="<config>"):
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), val)
    return values


def parse_config(path=None, overrides=()):
    """Build an :class:`ExperimentConfig` from an optional file and ``key=value`` overrides."""
    values = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        text = Path(path).read_text(encoding="utf-8")
        values.update(parse_lines(text.splitlines(), str(path)))
    values.update(parse_lines(list(overrides), "<overrides>"))
    cfg = ExperimentConfig(**values)
    if cfg.dataset != "synthetic" and not Path(cfg.dataset).is_dir():
        raise ConfigError(f"dataset directory {cfg.dataset!r} does not exist")
    return cfg
