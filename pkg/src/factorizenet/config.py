"""Run configuration: architecture, training, data subset and quantization settings.

Config files are JSON (sections ``macro``, ``train``, ``data``, ``quant``) or
plain ``key = value`` lines. In the plain form keys may carry a section
prefix (``train.epochs``) or be bare when the name is unambiguous; lists are
comma separated, booleans are true/false, ``#`` starts a comment.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .arch import MacroArchConfig
from .data import AugmentConfig
from .errors import ConfigurationError
from .train import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    classes: tuple = ()          # empty = all ten classes, original labels
    train_samples: int = 0       # 0 = every available record
    test_samples: int = 0
    image_size: int = 32
    subset_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if self.image_size not in (1, 2, 4, 8, 16, 32):
            raise ConfigurationError(f"image_size must divide 32 by a power of two, got {self.image_size}")
        if any(not 0 <= c <= 9 for c in self.classes) or len(set(self.classes)) != len(self.classes):
            raise ConfigurationError(f"invalid class subset {self.classes}")


@dataclass(frozen=True)
class QuantConfig:
    calib_samples: int = 1024
    clip_pct: tuple = (1.0, 99.0)
    quantize_dense: bool = True
    bits: int = 8

    def __post_init__(self):
        object.__setattr__(self, "clip_pct", tuple(float(p) for p in self.clip_pct))
        lo, hi = self.clip_pct
        if not 0 <= lo < hi <= 100:
            raise ConfigurationError(f"clip percentiles must satisfy 0 <= lo < hi <= 100, got {self.clip_pct}")
        if self.calib_samples < 1:
            raise ConfigurationError("calib_samples must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    macro: MacroArchConfig = field(default_factory=MacroArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)

    def __post_init__(self):
        if self.data.classes and len(self.data.classes) != self.macro.num_classes:
            raise ConfigurationError(f"{len(self.data.classes)} classes selected but the classifier has "
                                     f"{self.macro.num_classes} outputs")
        c, h, w = self.macro.input_shape
        if (h, w) != (self.data.image_size, self.data.image_size) or c != 3:
            raise ConfigurationError(f"input_shape {self.macro.input_shape} does not match "
                                     f"{self.data.image_size}x{self.data.image_size} RGB images")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        train = dict(d.get("train", {}))
        if "augmentation" in train:
            train["augmentation"] = AugmentConfig(**train["augmentation"])
        try:
            return cls(MacroArchConfig(**d.get("macro", {})), TrainConfig(**train), DataConfig(**d.get("data", {})),
                       QuantConfig(**d.get("quant", {})))
        except TypeError as exc:
            raise ConfigurationError(f"unknown config key: {exc}") from exc

    def replace(self, **sections):
        """Copy with fields overridden per section, e.g. ``replace(train={"epochs": 2})``."""
        parts = {}
        for name in ("macro", "train", "data", "quant"):
            current = getattr(self, name)
            parts[name] = dataclasses.replace(current, **sections[name]) if name in sections else current
        return RunConfig(**parts)

    def digest(self, *extra):
        """Short stable hash of the configuration plus any extra tokens."""
        payload = json.dumps([self.to_dict(), [str(e) for e in extra]], sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def desk_run_config(epochs=10, classes=(1, 6), train_samples=2000, test_samples=400, image_size=16, seed=0,
                    calib_samples=1024):
    """The scaled-down setup: 2-class subset, 16-channel stem, stages [16, 32], one block each."""
    n = len(classes)
    return RunConfig(
        macro=MacroArchConfig(input_shape=(3, image_size, image_size), stem_channels=16, stage_widths=(16, 32),
                              blocks_per_stage=1, dense_widths=(64, n)),
        train=TrainConfig(epochs=epochs, batch_size=64, lr_drop_epochs=(), seed=seed),
        data=DataConfig(classes=classes, train_samples=train_samples, test_samples=test_samples,
                        image_size=image_size),
        quant=QuantConfig(calib_samples=calib_samples),
    )


_FIELDS = {
    "macro": {f.name for f in dataclasses.fields(MacroArchConfig)},
    "train": {f.name for f in dataclasses.fields(TrainConfig)} - {"augmentation"},
    "augmentation": {f.name for f in dataclasses.fields(AugmentConfig)},
    "data": {f.name for f in dataclasses.fields(DataConfig)},
    "quant": {f.name for f in dataclasses.fields(QuantConfig)},
}
_TUPLES = {"input_shape", "stage_widths", "dense_widths", "lr_drop_epochs", "classes", "clip_pct"}


def _parse_value(key, text):
    text = text.strip()
    if key in _TUPLES:
        return [json.loads(tok) for tok in text.split(",") if tok.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_keyvalue(text):
    """Parse the plain ``key = value`` form into the nested JSON form."""
    out = {"macro": {}, "train": {}, "data": {}, "quant": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        candidates = [section] if section else [s for s, names in _FIELDS.items() if name in names]
        if len(candidates) != 1 or name not in _FIELDS.get(candidates[0], ()):
            raise ConfigurationError(f"line {lineno}: unknown or ambiguous key {key!r}")
        section = candidates[0]
        if section == "augmentation":
            out["train"].setdefault("augmentation", {})[name] = _parse_value(name, value)
        else:
            out[section][name] = _parse_value(name, value)
    return out


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    else:
        d = parse_keyvalue(text)
    if "augmentation" in d.get("train", {}):
        base = dataclasses.asdict(AugmentConfig())
        base.update(d["train"]["augmentation"])
        d["train"]["augmentation"] = base
    return RunConfig.from_dict(d)
