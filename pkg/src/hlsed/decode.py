"""From frame posteriors to events, vital signs and a plausibility decision."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParam, NonPositiveDuration
from .labels import CLASS_NAMES, EventList, SoundEvent


@dataclass(frozen=True)
class Vitals:
    heart_rate: float
    respiratory_rate: float
    observed_duration: float


@dataclass(frozen=True)
class PlausibilityBounds:
    """Inclusive physiological ranges, beats/min and breaths/min."""

    hr_min: float = 40.0
    hr_max: float = 240.0
    rr_min: float = 0.0
    rr_max: float = 35.0

    def __post_init__(self):
        if self.hr_min > self.hr_max or self.rr_min > self.rr_max:
            raise InvalidParam("plausibility bounds need min <= max")


@dataclass(frozen=True)
class Decision:
    accepted: bool
    reason: str | None = None

    def __bool__(self):
        return self.accepted


ACCEPT = Decision(True)


def binarize(p, threshold: float = 0.5) -> np.ndarray:
    """1 where ``p > threshold`` (strictly), else 0."""
    if not 0 < threshold < 1:
        raise InvalidParam(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(p) > threshold).astype(np.uint8)


def _runs(col):
    padded = np.concatenate([[0], col.astype(np.int8), [0]])
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def extract_events(a, frame_duration: float, class_names=CLASS_NAMES, duration=None) -> EventList:
    """Each maximal run of active frames ``i..j`` becomes ``(i*d, (j+1)*d)``."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[1] != len(class_names):
        raise InvalidParam(f"activity matrix must be (N, {len(class_names)}), got {a.shape}")
    events = []
    for c, name in enumerate(class_names):
        starts, stops = _runs(a[:, c])
        events.extend(
            SoundEvent(name, float(i * frame_duration), float(j * frame_duration))
            for i, j in zip(starts, stops)
        )
    if duration is None:
        duration = a.shape[0] * frame_duration
    return EventList(events, duration)


def postprocess(events: EventList, min_duration: float = 0.0, merge_gap: float = 0.0) -> EventList:
    """Optional clean-up, off by default: close short gaps, then drop short events."""
    out = []
    for label in events.labels():
        merged = []
        for ev in events.of_class(label):
            if merged and ev.onset - merged[-1].offset <= merge_gap:
                last = merged.pop()
                ev = SoundEvent(label, last.onset, max(last.offset, ev.offset), last.origin)
            merged.append(ev)
        out.extend(ev for ev in merged if ev.duration >= min_duration)
    return EventList(out, events.duration)


def estimate_vitals(events: EventList, duration: float) -> Vitals:
    if not duration > 0:
        raise NonPositiveDuration(f"observed duration must be > 0, got {duration}")
    return Vitals(
        heart_rate=events.count("S1") * 60.0 / duration,
        respiratory_rate=events.count("Inspiration") * 60.0 / duration,
        observed_duration=float(duration),
    )


def plausibility_filter(v: Vitals, task: str = "both", bounds: PlausibilityBounds = PlausibilityBounds()) -> Decision:
    if task not in ("heart", "lung", "both"):
        raise InvalidParam(f"task must be heart, lung or both, got {task!r}")
    if task in ("heart", "both"):
        if v.heart_rate < bounds.hr_min:
            return Decision(False, "hr_low")
        if v.heart_rate > bounds.hr_max:
            return Decision(False, "hr_high")
    if task in ("lung", "both"):
        if v.respiratory_rate < bounds.rr_min:
            return Decision(False, "rr_low")
        if v.respiratory_rate > bounds.rr_max:
            return Decision(False, "rr_high")
    return ACCEPT


def decode(p, frame_duration: float, threshold: float = 0.5, duration=None) -> EventList:
    """Binarize then extract events; no further post-processing."""
    return extract_events(binarize(p, threshold), frame_duration, duration=duration)
