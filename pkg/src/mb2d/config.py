"""YAML run configuration shared by the command-line tool.

One file, four optional sections:

    scene:       random-scene factory (count, canvas, object statistics)
    blur:        exposure ladder (base exposure, offsets, camera response)
    train:       one training stage (see training.TrainConfig)
    experiment:  preset comparison suite id + seed list

Any key can be overridden from the command line with a dotted path, e.g.
``train.learning_rate=3e-4``.  Every run persists the fully resolved config
next to its outputs, so a result directory alone reproduces the run.
"""

import difflib
from dataclasses import dataclass, field, fields, replace

import yaml

from mb2d.blursynth import BlurSpec
from mb2d.errors import ConfigError
from mb2d.scenegen import make_random_scene
from mb2d.training import TrainConfig
from mb2d import experiments as ex


@dataclass
class SceneGenConfig:
    """Parameters for a batch of seeded random scenes."""

    count: int = 8
    width: int = 96
    height: int = 96
    num_frames: int = 24
    n_objects: int = 4
    speed_min: float = 0.7
    speed_max: float = 1.9
    size_min: float = 12.0
    size_max: float = 22.0
    background_octaves: int = 2
    keep_on_canvas: bool = True
    seed0: int = 100  # scene s uses seed0 + s

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"scene.count must be >= 1, got {self.count}")
        if self.width < 8 or self.height < 8:
            raise ConfigError(f"scene canvas too small: {self.width}x{self.height}")
        if self.num_frames < 2:
            raise ConfigError(f"scene.num_frames must be >= 2, got {self.num_frames}")
        if self.speed_min > self.speed_max or self.speed_min < 0:
            raise ConfigError(f"bad speed range [{self.speed_min}, {self.speed_max}]")
        if self.size_min > self.size_max or self.size_min <= 0:
            raise ConfigError(f"bad size range [{self.size_min}, {self.size_max}]")

    def make_scenes(self):
        return [
            make_random_scene(
                self.seed0 + s,
                width=self.width,
                height=self.height,
                num_frames=self.num_frames,
                n_objects=self.n_objects,
                speed_range=(self.speed_min, self.speed_max),
                size_range=(self.size_min, self.size_max),
                background_octaves=self.background_octaves,
                keep_on_canvas=self.keep_on_canvas,
            )
            for s in range(self.count)
        ]

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ExperimentSection:
    """Which preset suite to run and with how many repeats."""

    id: str = "ideal_multiblur"
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.id not in ex.EXPERIMENTS:
            raise ConfigError(f"experiment.id must be one of {ex.EXPERIMENTS}, got {self.id!r}")
        self.seeds = [int(s) for s in self.seeds]

    def to_dict(self):
        return {"id": self.id, "seeds": list(self.seeds)}


_SECTIONS = {
    "scene": SceneGenConfig,
    "blur": BlurSpec,
    "train": TrainConfig,
    "experiment": ExperimentSection,
}


@dataclass
class RunConfig:
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    blur: BlurSpec = field(default_factory=BlurSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def to_dict(self):
        return {name: getattr(self, name).to_dict() for name in _SECTIONS}


def _suggest(key: str, valid) -> str:
    close = difflib.get_close_matches(key, list(valid), n=1, cutoff=0.0)
    return f"; closest valid key is {close[0]!r}" if close else ""

def _coerce(value, target_type):
    """Best-effort scalar coercion for string override values."""
    if not isinstance(value, str):
        return value
    if target_type is bool:
        low = value.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        return value
    if target_type in (int, float):
        try:
            return target_type(value)
        except ValueError:
            return value
    return value


def _scalar_type(annotation):
    """Map a dataclass field annotation (type object or string) to int/float/bool."""
    if annotation in (int, float, bool):
        return annotation
    return {"int": int, "float": float, "bool": bool}.get(annotation)


def _build_section(name: str, cls, data: dict):
    valid = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {name + '.' + key!r}" + _suggest(key, valid))
        ftype = _scalar_type(valid[key])
        kwargs[key] = _coerce(value, ftype) if ftype else value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad {name} section: {e}") from e


def _apply_override(data: dict, spec: str):
    """Fold one ``section.key=value`` assignment into the raw config dict."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form section.key=value")
    path, raw = spec.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override path {path!r} must be section.key")
    section, key = parts
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}" + _suggest(section, _SECTIONS))
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    data.setdefault(section, {})[key] = value


def load_config(path: str = None, overrides=()) -> RunConfig:
    """Parse a YAML config file plus dotted-path overrides into a RunConfig."""
    data = {}
    if path is not None:
        with open(path) as f:
            loaded = yaml.safe_load(f)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping of sections, got {type(loaded).__name__}")
        data = loaded
    for section in data:
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}" + _suggest(section, _SECTIONS))
        if data[section] is None:
            data[section] = {}
        elif not isinstance(data[section], dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
    for spec in overrides:
        _apply_override(data, spec)
    built = {name: _build_section(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    return RunConfig(**built)


def save_resolved(cfg: RunConfig, path: str, extra: dict = None):
    """Write the fully resolved config (defaults + file + overrides) as YAML."""
    doc = cfg.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def with_train(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, train=replace(cfg.train, **changes))
