"""Domain types, configuration and the trajectory-code scheme."""

from __future__ import annotations

import dataclasses
import datetime as dt
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    """Invalid engine or video configuration."""


class StreamError(RuntimeError):
    """Input stream violates ordering or shape constraints."""


class ParseError(ValueError):
    """Malformed input record."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SpeciesClass(enum.Enum):
    HONEYBEE = "honeybee"
    SYRPHIDAE = "syrphidae"
    LEPIDOPTERA = "lepidoptera"
    VESPIDAE = "vespidae"
    FLOWER = "flower"
    # segmentation blobs carry no class until inherited from a track
    UNKNOWN = "unknown"

    @property
    def suffix(self) -> str:
        try:
            return _SUFFIX[self]
        except KeyError:
            raise ValueError(f"{self.value} has no track-code suffix") from None

    @property
    def is_insect(self) -> bool:
        return self in _SUFFIX

    @classmethod
    def parse(cls, name: str) -> "SpeciesClass":
        key = name.strip().lower()
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ParseError(f"unknown class {name!r}") from None

    @classmethod
    def from_suffix(cls, suffix: str) -> "SpeciesClass":
        for species, code in _SUFFIX.items():
            if code == suffix:
                return species
        raise ValueError(f"unknown species suffix {suffix!r}")


_SUFFIX = {
    SpeciesClass.HONEYBEE: "00",
    SpeciesClass.SYRPHIDAE: "01",
    SpeciesClass.LEPIDOPTERA: "02",
    SpeciesClass.VESPIDAE: "03",
}

INSECT_SPECIES = tuple(_SUFFIX)

_ALIASES = {
    "bee": "honeybee",
    "honey_bee": "honeybee",
    "hoverfly": "syrphidae",
    "moth": "lepidoptera",
    "butterfly": "lepidoptera",
    "wasp": "vespidae",
    "strawberry_flower": "flower",
}


class Source(enum.Enum):
    DEEP = "deep"
    SEGMENTATION = "segmentation"
    # track points filled between two observations; never a Detection source
    INTERPOLATED = "interpolated"


@dataclass(frozen=True)
class VideoMeta:
    camera_number: int
    record_date: dt.date
    record_start_time: dt.time
    fps: float = 30.0
    frame_width: int = 1920
    frame_height: int = 1080

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ConfigError("frame dimensions must be positive")

    def wall_clock(self, frame_index: int) -> dt.datetime:
        """Wall-clock time of a frame, truncated to whole seconds."""
        start = dt.datetime.combine(self.record_date, self.record_start_time)
        elapsed = dt.timedelta(seconds=frame_index / self.fps)
        return (start + elapsed).replace(microsecond=0)

    def contains(self, x: float, y: float) -> bool:
        return 0 <= x < self.frame_width and 0 <= y < self.frame_height


@dataclass(frozen=True)
class Detection:
    frame_index: int
    species: SpeciesClass
    x: float
    y: float
    w: float
    h: float
    confidence: float
    source: Source

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("detection extent must be positive")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.source is Source.INTERPOLATED:
            raise ValueError("interpolated is not a detection source")

    @property
    def center(self) -> tuple[float, float]:
        return self.x, self.y


# -- track codes ------------------------------------------------------------

def make_track_code(meta: VideoMeta, first_detection_frame: int, species: SpeciesClass) -> str:
    """Build the 11-digit code: camera, day of month, HHMMSS, species suffix.

    The time component is the wall clock of the first detection truncated
    to the second.
    """
    if not 1 <= meta.camera_number <= 9:
        raise ConfigError(f"camera_number {meta.camera_number} is not a single digit")
    if first_detection_frame < 0:
        raise ValueError("first_detection_frame must be non-negative")
    when = meta.wall_clock(first_detection_frame)
    return f"{meta.camera_number}{when.day:02d}{when:%H%M%S}{species.suffix}"


@dataclass(frozen=True)
class DecodedTrackCode:
    camera_number: int
    day: int
    time: dt.time
    species: SpeciesClass


def decode_track_code(code: str) -> DecodedTrackCode:
    if len(code) != 11 or not code.isdigit():
        raise ValueError(f"track code must be 11 digits, got {code!r}")
    hh, mm, ss = int(code[3:5]), int(code[5:7]), int(code[7:9])
    return DecodedTrackCode(
        camera_number=int(code[0]),
        day=int(code[1:3]),
        time=dt.time(hh, mm, ss),
        species=SpeciesClass.from_suffix(code[9:11]),
    )


# -- engine configuration ---------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    flower_update_interval_frames: int = 3000
    visit_dwell_frames: int = 5
    false_positive_track_length_px: float = 10.0
    min_track_frames: int = 5
    fertilisation_threshold: int = 4
    association_gate_px: float = 150.0
    track_timeout_frames: int = 15
    flower_gate_px: float = 60.0
    flower_radius_margin_fraction: float = 0.2
    lowres_scale_factor: int = 4
    lowres_enabled: bool = True
    interpolate_gaps: bool = True
    bg_history: int = 50
    bg_knn: int = 3
    bg_distance_threshold: int = 12
    bg_update_stride: int = 2
    min_blob_area_px: int = 40

    def replace(self, **changes: Any) -> "EngineConfig":
        return validate_config(dataclasses.replace(self, **changes))

    def as_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(EngineConfig)}

# fields allowed to be zero; everything numeric else must be strictly positive
_NON_NEGATIVE = {"flower_radius_margin_fraction"}


def validate_config(cfg: EngineConfig | Mapping[str, Any] | None = None) -> EngineConfig:
    """Fill defaults and check every bound.

    ``cfg`` may be an ``EngineConfig`` or a mapping of overrides whose values
    may still be strings (as read from a config file).
    """
    if cfg is None:
        cfg = {}
    if isinstance(cfg, EngineConfig):
        values = cfg.as_dict()
    else:
        values = EngineConfig().as_dict()
        for key, raw in cfg.items():
            if key not in CONFIG_FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)

    problems = []
    for name, value in values.items():
        if isinstance(value, bool):
            continue
        if name in _NON_NEGATIVE:
            if value < 0:
                problems.append(f"{name} must be >= 0 (got {value})")
        elif value <= 0:
            problems.append(f"{name} must be > 0 (got {value})")
    if values["lowres_scale_factor"] < 1:
        problems.append(f"lowres_scale_factor must be >= 1 (got {values['lowres_scale_factor']})")
    if values["bg_history"] < values["bg_knn"]:
        problems.append("bg_history must be >= bg_knn")
    if problems:
        raise ConfigError("; ".join(problems))
    return EngineConfig(**values)


def _coerce(name: str, raw: Any) -> Any:
    kind = EngineConfig.__dataclass_fields__[name].type
    if not isinstance(raw, str):
        if kind == "int" and isinstance(raw, float):
            if not raw.is_integer():
                raise ConfigError(f"{name} must be an integer (got {raw})")
            return int(raw)
        return raw
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def read_key_values(path: str | Path) -> dict[str, str]:
    """Parse a ``key = value`` file; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> EngineConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_key_values(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(values)


def write_config(cfg: EngineConfig, path: str | Path) -> None:
    lines = [f"{name} = {value}" for name, value in cfg.as_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class TrackPoint:
    frame_index: int
    x: float
    y: float
    source: Source
    flower_id: str | None = field(default=None, compare=False)
