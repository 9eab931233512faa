"""Run configuration: model, training and loss settings, read from flat ``key = value`` text."""

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .errors import ConfigurationError
from .loss import LossConfig
from .model import ModelConfig


@dataclass
class TrainConfig:
    lr_init: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    max_steps: int = 0  # 0 = no step cap
    augment: bool = True
    precrop_height: int = 0  # 0 = crop directly to the input size
    precrop_width: int = 0

    def __post_init__(self):
        if not self.lr_init > 0:
            raise ConfigurationError("lr_init must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigurationError("lr_decay_factor must be in (0, 1]")
        if self.lr_decay_every < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("lr_decay_every, batch_size and epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must be in [0, 1)")
        if self.weight_decay < 0 or self.max_steps < 0:
            raise ConfigurationError("weight_decay and max_steps must be non-negative")

    def learning_rate(self, epoch):
        return self.lr_init * self.lr_decay_factor ** (epoch // self.lr_decay_every)

    @property
    def precrop(self):
        if self.precrop_height and self.precrop_width:
            return self.precrop_height, self.precrop_width
        return None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    SECTIONS = ("model", "train", "loss")

    def to_flat(self):
        flat = {}
        for section in self.SECTIONS:
            flat.update(dataclasses.asdict(getattr(self, section)))
        return flat

    def to_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.to_flat().items()))

    def digest(self):
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_flat(cls, values):
        values = dict(values)
        parts = {}
        for section, klass in (("model", ModelConfig), ("train", TrainConfig), ("loss", LossConfig)):
            kwargs = {}
            for f in dataclasses.fields(klass):
                if f.name in values:
                    kwargs[f.name] = _coerce(f.name, values.pop(f.name), _default_of(f))
            parts[section] = klass(**kwargs)
        if values:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(values))}")
        return cls(**parts)

    def updated(self, **overrides):
        flat = self.to_flat()
        flat.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_flat(flat)


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    return f.default_factory()


def _format(v):
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name, raw, default):
    if not isinstance(raw, str):
        return list(raw) if isinstance(default, list) else raw
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            return [int(x) for x in raw.replace(" ", "").split(",") if x]
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"config line {lineno}: empty key")
        values[key] = value
    return values


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                values = parse_config_text(f.read())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_flat(values)
