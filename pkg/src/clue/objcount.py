"""Object-activity branch from an external detector's timeline."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import DetectionTimeline
from .errors import SchemaError

DEFAULT_MIN_CONFIDENCE = 0.5
DEFAULT_SATURATION_RATE = 10.0  # objects per minute mapped to x4 = 1


@dataclass(frozen=True)
class ObjectActivity:
    objects_per_minute: float
    distinct_labels: int
    x4: float


def object_rate_feature(
    timeline: DetectionTimeline,
    duration: float,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    saturation_rate: float = DEFAULT_SATURATION_RATE,
) -> ObjectActivity:
    """Confident detections per minute, squashed to [0, 1] by a linear ramp that saturates."""
    if not duration > 0:
        raise SchemaError(f"duration must be > 0, got {duration!r}")
    if not saturation_rate > 0:
        raise SchemaError(f"saturation_rate must be > 0, got {saturation_rate!r}")
    kept = [ev for ev in timeline.events if ev.confidence >= min_confidence]
    rate = len(kept) / (duration / 60.0)
    return ObjectActivity(
        objects_per_minute=rate,
        distinct_labels=len({ev.label for ev in kept}),
        x4=min(1.0, rate / saturation_rate),
    )
