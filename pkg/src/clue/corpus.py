"""Lecture bundles, detection timelines and feature tables.

A lecture arrives as a JSON manifest that points at a transcript, a WAV file
and (optionally) a JSON Lines file of object detections::

    {"id": "lec-01", "title": "Friction", "transcript_path": "lec-01.txt",
     "audio_path": "lec-01.wav", "detections_path": "lec-01.jsonl",
     "duration_seconds": 60, "rating": 8.5, "rating_scale_max": 10}

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, SchemaError
from .textfeat import FEATURE_NAMES

LABEL_COLUMN = "median_engagement"
DEFAULT_SAMPLE_RATE = 22050
DURATION_TOLERANCE = 0.10


def normalize_rating(raw: float, scale_max: float) -> float:
    """Map a rating on ``[0, scale_max]`` onto the unit interval."""
    if not scale_max > 0:
        raise SchemaError(f"rating scale maximum must be positive, got {scale_max!r}")
    if not 0 <= raw <= scale_max:
        raise SchemaError(f"rating {raw!r} outside [0, {scale_max!r}]")
    return raw / scale_max


@dataclass(frozen=True)
class Detection:
    t: float
    label: str
    confidence: float


@dataclass(frozen=True)
class DetectionTimeline:
    events: tuple[Detection, ...] = ()

    def __post_init__(self):
        prev = -math.inf
        for ev in self.events:
            if not (ev.t >= 0 and math.isfinite(ev.t)):
                raise SchemaError(f"detection time must be finite and >= 0, got {ev.t!r}")
            if not 0 <= ev.confidence <= 1:
                raise SchemaError(f"detection confidence {ev.confidence!r} outside [0, 1]")
            if ev.t < prev:
                raise SchemaError("detection events are not sorted by time")
            prev = ev.t

    def __len__(self) -> int:
        return len(self.events)

    def check_within(self, duration: float) -> None:
        if self.events and self.events[-1].t > duration:
            raise SchemaError(
                f"detection at t={self.events[-1].t} s lies beyond the lecture duration {duration} s"
            )


@dataclass
class LectureBundle:
    id: str
    title: str
    transcript: str
    audio: np.ndarray | None
    sample_rate: int
    detections: DetectionTimeline = field(default_factory=DetectionTimeline)
    duration: float = 0.0
    rating: float | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise SchemaError(f"lecture {self.id!r}: duration must be > 0, got {self.duration!r}")
        if self.rating is not None and not 0 <= self.rating <= 1:
            raise SchemaError(f"lecture {self.id!r}: normalized rating {self.rating!r} outside [0, 1]")
        if self.audio is not None:
            audio_seconds = len(self.audio) / self.sample_rate
            if abs(audio_seconds - self.duration) > DURATION_TOLERANCE * self.duration:
                raise SchemaError(
                    f"lecture {self.id!r}: audio lasts {audio_seconds:.3f} s but manifest declares "
                    f"{self.duration} s (tolerance {DURATION_TOLERANCE:.0%})"
                )
        self.detections.check_within(self.duration)


def read_wav(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Decode 16-bit PCM WAV to mono float samples in [-1, 1] at ``target_rate``.

    Multi-channel audio is averaged; a differing source rate is resampled by
    linear interpolation.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise InputError(f"malformed WAV file {path}: {exc}") from exc
    if width != 2:
        raise InputError(f"malformed WAV file {path}: expected 16-bit PCM, got {8 * width}-bit samples")
    if rate <= 0 or n_channels <= 0:
        raise InputError(f"malformed WAV file {path}: bad header")

    data = np.frombuffer(raw, dtype="<i2")
    usable = len(data) - len(data) % n_channels
    samples = data[:usable].astype(np.float64).reshape(-1, n_channels).mean(axis=1) / 32768.0
    return resample_linear(samples, rate, target_rate)


def resample_linear(samples: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    if source_rate == target_rate or len(samples) == 0:
        return np.asarray(samples, dtype=np.float64)
    n_out = int(round(len(samples) * target_rate / source_rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(len(samples)) / source_rate
    return np.interp(t_out, t_in, samples)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = DEFAULT_SAMPLE_RATE) -> None:
    """Write mono float samples as 16-bit PCM (used for fixtures and examples)."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def read_detections(path: str | Path) -> DetectionTimeline:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"detections file not found: {path}")
    events = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                events.append(Detection(float(obj["t"]), str(obj["label"]), float(obj["confidence"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad detection record ({exc})") from exc
    return DetectionTimeline(tuple(events))


def write_detections(path: str | Path, timeline: DetectionTimeline) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ev in timeline.events:
            fh.write(json.dumps({"t": ev.t, "label": ev.label, "confidence": ev.confidence}) + "\n")


_MANIFEST_REQUIRED = ("id", "title", "transcript_path", "audio_path", "duration_seconds")
_MANIFEST_OPTIONAL = ("detections_path", "rating", "rating_scale_max")


def load_lecture_bundle(manifest_path: str | Path, sample_rate: int = DEFAULT_SAMPLE_RATE) -> LectureBundle:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise InputError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict):
        raise SchemaError(f"{manifest_path}: manifest must be a JSON object")
    missing = [k for k in _MANIFEST_REQUIRED if k not in manifest]
    if missing:
        raise SchemaError(f"{manifest_path}: missing field(s) {missing}")
    unknown = set(manifest) - set(_MANIFEST_REQUIRED) - set(_MANIFEST_OPTIONAL)
    if unknown:
        raise SchemaError(f"{manifest_path}: unknown field(s) {sorted(unknown)}")

    base = manifest_path.parent
    transcript_path = base / manifest["transcript_path"]
    if not transcript_path.is_file():
        raise InputError(f"transcript not found: {transcript_path}")
    transcript = transcript_path.read_text(encoding="utf-8")
    audio = read_wav(base / manifest["audio_path"], sample_rate)

    detections = DetectionTimeline()
    if manifest.get("detections_path"):
        detections = read_detections(base / manifest["detections_path"])

    rating = None
    if manifest.get("rating") is not None:
        if manifest.get("rating_scale_max") is None:
            raise SchemaError(f"{manifest_path}: rating given without rating_scale_max")
        rating = normalize_rating(float(manifest["rating"]), float(manifest["rating_scale_max"]))

    return LectureBundle(
        id=str(manifest["id"]),
        title=str(manifest["title"]),
        transcript=transcript,
        audio=audio,
        sample_rate=sample_rate,
        detections=detections,
        duration=float(manifest["duration_seconds"]),
        rating=rating,
    )


@dataclass
class FeatureTable:
    """Rows of the fourteen text features, in canonical column order, with labels."""

    features: np.ndarray
    labels: np.ndarray
    ids: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if len(self.features) != len(self.labels):
            raise SchemaError("feature rows and labels differ in length")
        bad = np.flatnonzero(~((self.labels >= 0) & (self.labels <= 1)))
        if len(bad):
            raise SchemaError(f"label {self.labels[bad[0]]!r} at row {bad[0]} outside [0, 1]")
        if self.ids is not None and len(self.ids) != len(self.labels):
            raise SchemaError("ids and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "FeatureTable":
        index = np.asarray(index)
        ids = [self.ids[i] for i in index] if self.ids is not None else None
        return FeatureTable(self.features[index], self.labels[index], ids)


def load_feature_table(csv_path: str | Path) -> FeatureTable:
    """Read a feature CSV; columns may come in any order, extra columns except ``id`` are ignored."""
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise InputError(f"feature table not found: {csv_path}")
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in (*FEATURE_NAMES, LABEL_COLUMN):
            if name not in header:
                raise SchemaError(f"{csv_path}: missing column {name!r}")
        has_ids = "id" in header
        feats, labels, ids = [], [], []
        for i, row in enumerate(reader):
            try:
                feats.append([float(row[name]) for name in FEATURE_NAMES])
                label = float(row[LABEL_COLUMN])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{csv_path}: non-numeric cell in row {i} ({exc})") from exc
            if not 0 <= label <= 1:
                raise SchemaError(f"{csv_path}: label {label!r} at row {i} outside [0, 1]")
            labels.append(label)
            if has_ids:
                ids.append(row["id"])
    return FeatureTable(np.array(feats, dtype=float).reshape(-1, len(FEATURE_NAMES)), labels, ids if has_ids else None)


def save_feature_table(table: FeatureTable, csv_path: str | Path) -> None:
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(FEATURE_NAMES) + [LABEL_COLUMN]
        if table.ids is not None:
            header = ["id"] + header
        writer.writerow(header)
        for i in range(len(table)):
            row = [repr(float(v)) for v in table.features[i]] + [repr(float(table.labels[i]))]
            if table.ids is not None:
                row = [table.ids[i]] + row
            writer.writerow(row)
