"""Sound classes, strong-label files, multi-hot frame encoding and manifests.

Label text format, one event per line::

    # comment
    S1          1.000  1.100
    Inspiration 0.500  2.000   pseudo

Fields are whitespace separated: class name (case-insensitive, aliases
allowed), onset seconds, offset seconds, and an optional provenance tag
(``gt`` or ``pseudo``) used by merged label files.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    InvalidParam,
    LabelSyntaxError,
    NonPositiveDuration,
    OverlapWithinClass,
    UnknownClass,
)


class SoundClass(IntEnum):
    S1 = 0
    S2 = 1
    Inspiration = 2
    Expiration = 3
    Wheeze = 4
    Crackle = 5
    Rhonchi = 6
    Stridor = 7


CLASS_NAMES = [c.name for c in SoundClass]
N_CLASSES = len(CLASS_NAMES)
HEART_CLASSES = ["S1", "S2"]
LUNG_CLASSES = ["Inspiration", "Expiration", "Wheeze", "Crackle", "Rhonchi", "Stridor"]
# evaluation-only aggregates
CAS_MEMBERS = ("Wheeze", "Rhonchi", "Stridor")
EVAL_AGGREGATES = ["CAS", "DAS"]

TASK_CLASSES = {
    "heart": HEART_CLASSES,
    "lung": LUNG_CLASSES,
    "both": CLASS_NAMES,
}

ALIASES = {
    "s1": "S1",
    "s2": "S2",
    "i": "Inspiration",
    "insp": "Inspiration",
    "inspiration": "Inspiration",
    "inhalation": "Inspiration",
    "e": "Expiration",
    "exp": "Expiration",
    "expiration": "Expiration",
    "exhalation": "Expiration",
    "w": "Wheeze",
    "wheeze": "Wheeze",
    "wheezes": "Wheeze",
    "c": "Crackle",
    "d": "Crackle",
    "das": "Crackle",
    "crackle": "Crackle",
    "crackles": "Crackle",
    "r": "Rhonchi",
    "rhonchi": "Rhonchi",
    "rhonchus": "Rhonchi",
    "st": "Stridor",
    "stridor": "Stridor",
    "cas": "CAS",
}

ORIGINS = ("gt", "pseudo")


def canonical_class(token: str, line: int | None = None) -> str:
    try:
        return ALIASES[token.lower()]
    except KeyError:
        raise UnknownClass(token, line) from None


def class_index(name: str) -> int:
    return SoundClass[name].value


def task_classes(task: str) -> list[str]:
    try:
        return list(TASK_CLASSES[task])
    except KeyError:
        raise InvalidParam(f"unknown task {task!r}") from None


@dataclass(frozen=True)
class SoundEvent:
    label: str
    onset: float
    offset: float
    origin: str | None = None

    @property
    def duration(self) -> float:
        return self.offset - self.onset


def _sort_key(ev: SoundEvent):
    rank = CLASS_NAMES.index(ev.label) if ev.label in CLASS_NAMES else N_CLASSES
    return (ev.onset, ev.offset, rank, ev.label)


@dataclass
class EventList:
    """Strong labels of one recording, kept sorted by onset."""

    events: list[SoundEvent] = field(default_factory=list)
    duration: float = 0.0

    def __post_init__(self):
        self.events = sorted(self.events, key=_sort_key)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def labels(self) -> list[str]:
        seen = {ev.label for ev in self.events}
        ordered = [c for c in CLASS_NAMES + EVAL_AGGREGATES if c in seen]
        return ordered + sorted(seen.difference(ordered))

    def of_class(self, label: str) -> list[SoundEvent]:
        return [ev for ev in self.events if ev.label == label]

    def count(self, label: str) -> int:
        return sum(1 for ev in self.events if ev.label == label)

    def only(self, labels) -> "EventList":
        keep = set(labels)
        return EventList([ev for ev in self.events if ev.label in keep], self.duration)

    def with_origin(self, origin: str | None) -> "EventList":
        return EventList([replace(ev, origin=origin) for ev in self.events], self.duration)


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def parse_strong_labels(text: str, clip_duration: float) -> tuple[EventList, list[str]]:
    """Parse label text; returns the events and a list of diagnostics.

    Events are clamped to ``[0, clip_duration]``; an event entirely outside
    the clip is dropped.  Both produce a diagnostic naming the line.
    """
    diagnostics = []
    parsed = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise LabelSyntaxError(f"expected '<class> <onset> <offset> [origin]', got {raw!r}", lineno)
        label = canonical_class(parts[0], lineno)
        try:
            onset, offset = float(parts[1]), float(parts[2])
        except ValueError:
            raise LabelSyntaxError(f"non-numeric time in {raw!r}", lineno) from None
        if not (np.isfinite(onset) and np.isfinite(offset)):
            raise LabelSyntaxError(f"non-finite time in {raw!r}", lineno)
        origin = None
        if len(parts) == 4:
            origin = parts[3].lower()
            if origin not in ORIGINS:
                raise LabelSyntaxError(f"origin must be one of {ORIGINS}, got {parts[3]!r}", lineno)
        if offset <= onset:
            raise NonPositiveDuration(f"offset {offset} <= onset {onset}", lineno)
        c_on, c_off = max(onset, 0.0), min(offset, clip_duration)
        if c_off <= c_on:
            diagnostics.append(f"line {lineno}: {label} {onset}-{offset} lies outside the clip, dropped")
            continue
        if (c_on, c_off) != (onset, offset):
            diagnostics.append(f"line {lineno}: {label} clamped to {c_on}-{c_off}")
        parsed.append((lineno, SoundEvent(label, c_on, c_off, origin)))

    by_class = {}
    for lineno, ev in parsed:
        by_class.setdefault(ev.label, []).append((lineno, ev))
    for items in by_class.values():
        items.sort(key=lambda it: (it[1].onset, it[1].offset))
        for (_, prev), (lineno, cur) in zip(items, items[1:]):
            if cur.onset < prev.offset:
                raise OverlapWithinClass(
                    f"{cur.label} {cur.onset}-{cur.offset} overlaps {prev.onset}-{prev.offset}", lineno
                )
    # heart sounds are monophonic; model output may still violate it, so warn only
    for ln1, a in by_class.get("S1", []):
        for ln2, b in by_class.get("S2", []):
            if a.onset < b.offset and b.onset < a.offset:
                diagnostics.append(f"line {max(ln1, ln2)}: S1 and S2 overlap")
    return EventList([ev for _, ev in parsed], clip_duration), diagnostics


def format_strong_labels(events: EventList, with_origin: bool | None = None) -> str:
    if with_origin is None:
        with_origin = any(ev.origin is not None for ev in events)
    lines = []
    for ev in events:
        row = f"{ev.label}\t{ev.onset:.6f}\t{ev.offset:.6f}"
        if with_origin:
            row += f"\t{ev.origin or 'gt'}"
        lines.append(row)
    return "\n".join(lines) + ("\n" if lines else "")


def read_labels(path, clip_duration: float) -> EventList:
    events, _ = parse_strong_labels(Path(path).read_text(encoding="utf-8"), clip_duration)
    return events


def write_labels(path, events: EventList, with_origin: bool | None = None):
    Path(path).write_text(format_strong_labels(events, with_origin), encoding="utf-8")


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

def encode_frames(events: EventList, n_frames: int, frame_duration: float) -> np.ndarray:
    """Multi-hot ``(n_frames, 8)`` uint8 matrix using the frame-midpoint rule.

    Frame ``t`` covers ``[t*d, (t+1)*d)`` and is active for a class when its
    midpoint lies in ``[onset, offset)`` of an event of that class.
    """
    out = np.zeros((n_frames, N_CLASSES), dtype=np.uint8)
    mids = (np.arange(n_frames) + 0.5) * frame_duration
    for ev in events:
        if ev.label not in CLASS_NAMES:
            raise InvalidParam(f"{ev.label} is an evaluation aggregate, not a training class")
        col = class_index(ev.label)
        out[(mids >= ev.onset) & (mids < ev.offset), col] = 1
    return out


def frame_mask_for(n_valid: int, n_frames: int) -> np.ndarray:
    mask = np.zeros((n_frames, 1), dtype=np.float64)
    mask[:n_valid] = 1.0
    return mask


def class_mask_for(classes) -> np.ndarray:
    mask = np.zeros(N_CLASSES, dtype=np.float64)
    for name in classes:
        mask[class_index(name)] = 1.0
    return mask


# ---------------------------------------------------------------------------
# evaluation class schemes
# ---------------------------------------------------------------------------

def _union(intervals):
    merged = []
    for on, off in sorted(intervals):
        if merged and on <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], off)
        else:
            merged.append([on, off])
    return merged


def to_eval_classes(events: EventList, scheme: str = "raw8") -> EventList:
    """Map to an evaluation class set.

    ``hf_lung4`` renames Wheeze/Rhonchi/Stridor to CAS and Crackle to DAS and
    merges same-class events that now overlap.
    """
    if scheme == "raw8":
        return EventList(list(events.events), events.duration)
    if scheme != "hf_lung4":
        raise InvalidParam(f"unknown evaluation scheme {scheme!r}")
    kept, grouped = [], {}
    for ev in events:
        if ev.label in CAS_MEMBERS:
            grouped.setdefault("CAS", []).append((ev.onset, ev.offset))
        elif ev.label == "Crackle":
            grouped.setdefault("DAS", []).append((ev.onset, ev.offset))
        else:
            kept.append(ev)
    for label, intervals in grouped.items():
        kept.extend(SoundEvent(label, on, off) for on, off in _union(intervals))
    return EventList(kept, events.duration)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    audio: str
    labels: str | None = None
    split: str = "train"
    origin: str = "gt"
    task: str = "both"
    # classes whose columns are supervised for this clip; None means the task's classes
    classes: list[str] | None = None
    # optional per-frame loss mask file (one 0/1 value per line)
    mask: str | None = None

    def supervised_classes(self) -> list[str]:
        return list(self.classes) if self.classes is not None else task_classes(self.task)

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _resolve(base: Path, p):
    if p is None:
        return None
    p = Path(p)
    return str(p if p.is_absolute() else (base / p))


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise InvalidParam(f"{path}: manifest must be a JSON array")
    base = path.parent
    entries = []
    for i, item in enumerate(data):
        try:
            entry = ManifestEntry(**item)
        except TypeError as exc:
            raise InvalidParam(f"{path}: entry {i}: {exc}") from None
        if entry.split not in ("train", "val", "test"):
            raise InvalidParam(f"{path}: entry {i}: bad split {entry.split!r}")
        if entry.origin not in ORIGINS:
            raise InvalidParam(f"{path}: entry {i}: bad origin {entry.origin!r}")
        task_classes(entry.task)
        entry.audio = _resolve(base, entry.audio)
        entry.labels = _resolve(base, entry.labels)
        entry.mask = _resolve(base, entry.mask)
        entries.append(entry)
    return entries


def save_manifest(path, entries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([e.to_json() for e in entries], indent=2) + "\n", encoding="utf-8")
