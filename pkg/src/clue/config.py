"""Pipeline configuration: one JSON or TOML document, every field defaulted.

Component seeds are not configured individually; they are derived from the
root ``seed`` by hashing the component name, so changing one component's
randomness never shifts another's.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import DspConfig
from .emolex import TextEmotionConfig
from .errors import InputError, SchemaError
from .explain import ReportThresholds
from .forest import ForestConfig
from .fusion import FusionConfig
from .objcount import DEFAULT_MIN_CONFIDENCE, DEFAULT_SATURATION_RATE
from .speechnet import TrainConfig
from .textfeat import _LEXICON_FILES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CONFIG_ENV = "CLUE_CONFIG"


def derive_seed(root: int, name: str) -> int:
    """32-bit seed for component ``name``: the first four bytes of sha256("root:name")."""
    return int.from_bytes(hashlib.sha256(f"{root}:{name}".encode()).digest()[:4], "big")


@dataclass(frozen=True)
class ObjectConfig:
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    saturation_rate: float = DEFAULT_SATURATION_RATE

    def __post_init__(self):
        if not 0 <= self.min_confidence <= 1 or not self.saturation_rate > 0:
            raise SchemaError("objects: need 0 <= min_confidence <= 1 and saturation_rate > 0")


@dataclass(frozen=True)
class SplitConfig:
    forest_train_fraction: float = 0.67
    speech_validation_fraction: float = 0.2
    background_rows: int = 10

    def __post_init__(self):
        if not 0 < self.forest_train_fraction < 1 or not 0 <= self.speech_validation_fraction < 1:
            raise SchemaError("split fractions must lie in (0, 1)")
        if self.background_rows < 1:
            raise SchemaError("background_rows must be >= 1")


# Section name -> (dataclass, keys owned by the root seed and so not configurable here).
_SECTIONS = {
    "dsp": (DspConfig, ()),
    "forest": (ForestConfig, ()),
    "speech": (TrainConfig, ("seed",)),
    "text_emotion": (TextEmotionConfig, ("seed",)),
    "fusion": (FusionConfig, ()),
    "objects": (ObjectConfig, ()),
    "thresholds": (ReportThresholds, ()),
    "split": (SplitConfig, ()),
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    dsp: DspConfig = field(default_factory=DspConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    speech: TrainConfig = field(default_factory=TrainConfig)
    text_emotion: TextEmotionConfig = field(default_factory=TextEmotionConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    objects: ObjectConfig = field(default_factory=ObjectConfig)
    thresholds: ReportThresholds = field(default_factory=ReportThresholds)
    split: SplitConfig = field(default_factory=SplitConfig)
    lexicons: dict[str, str] = field(default_factory=dict)

    def component_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def speech_config(self) -> TrainConfig:
        return dataclasses.replace(self.speech, seed=self.component_seed("speech"))

    def text_emotion_config(self) -> TextEmotionConfig:
        return dataclasses.replace(self.text_emotion, seed=self.component_seed("text_emotion"))

    def to_dict(self) -> dict:
        out: dict = {"seed": self.seed}
        for name, (_, owned) in _SECTIONS.items():
            section = dataclasses.asdict(getattr(self, name))
            for key in owned:
                section.pop(key)
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()}
        out["lexicons"] = dict(sorted(self.lexicons.items()))
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise SchemaError("config must be a mapping")
        unknown = set(d) - {"seed", "lexicons", *_SECTIONS}
        if unknown:
            raise SchemaError(f"unknown config key(s): {sorted(unknown)}")
        kwargs = {}
        if "seed" in d:
            if not isinstance(d["seed"], int) or isinstance(d["seed"], bool) or d["seed"] < 0:
                raise SchemaError(f"seed must be a non-negative integer, got {d['seed']!r}")
            kwargs["seed"] = d["seed"]
        for name, (section_cls, owned) in _SECTIONS.items():
            if name in d:
                kwargs[name] = _section(name, section_cls, d[name], owned)
        if "lexicons" in d:
            lex = d["lexicons"]
            if not isinstance(lex, dict) or not all(isinstance(v, str) for v in lex.values()):
                raise SchemaError("lexicons must map lexicon names to file paths")
            bad = set(lex) - set(_LEXICON_FILES)
            if bad:
                raise SchemaError(f"unknown lexicon name(s): {sorted(bad)}")
            kwargs["lexicons"] = dict(lex)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        try:
            data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise SchemaError(f"{path}: cannot parse config ({exc})") from exc
        config = cls.from_dict(data)
        if config.lexicons:
            # Lexicon paths are relative to the config file.
            resolved = {k: str((path.parent / v).resolve()) for k, v in config.lexicons.items()}
            config = dataclasses.replace(config, lexicons=resolved)
        return config


def _section(name: str, section_cls, values, owned):
    if not isinstance(values, dict):
        raise SchemaError(f"config section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(section_cls)} - set(owned)
    unknown = set(values) - allowed
    if unknown:
        raise SchemaError(f"unknown key(s) in config section {name!r}: {sorted(unknown)}")
    values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
    try:
        return section_cls(**values)
    except TypeError as exc:
        raise SchemaError(f"config section {name!r}: {exc}") from exc
