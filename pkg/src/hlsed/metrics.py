"""Event-based, segment-based and Jaccard-index scoring, plus threshold sweeps.

Every scorer returns a ``{class_name: Counts}`` map.  Scores over a set of
recordings are pooled by summing counts in recording order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decode import binarize, extract_events
from .errors import DegenerateInterval, EmptyDataset, InvalidParam, NoEligibleRecordings, ShapeMismatch
from .labels import CLASS_NAMES, HEART_CLASSES, EventList, encode_frames

EPS = 1e-9
DEFAULT_COLLARS = {"heart": 0.060, "lung": 0.500}
DEFAULT_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
BASES = ("event", "segment", "ji")


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise InvalidParam("counts must be non-negative")

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        # no predictions means no false alarms
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0


@dataclass(frozen=True)
class EvalConfig:
    """Scoring parameters.

    ``t_collar=None`` selects the task-keyed default per class: 60 ms for
    heart sounds, 500 ms for everything else.
    """

    t_collar: float | None = None
    offset_ratio: float = 0.5
    segment_length: float = 0.016
    ji_tp_threshold: float = 0.5

    def __post_init__(self):
        if self.t_collar is not None and not self.t_collar > 0:
            raise InvalidParam("t_collar must be > 0")
        if not 0 < self.ji_tp_threshold < 1:
            raise InvalidParam("ji_tp_threshold must lie in (0, 1)")
        if self.offset_ratio < 0 or not self.segment_length > 0:
            raise InvalidParam("offset_ratio must be >= 0 and segment_length > 0")

    def collar_for(self, label: str) -> float:
        if self.t_collar is not None:
            return self.t_collar
        return DEFAULT_COLLARS["heart" if label in HEART_CLASSES else "lung"]


def default_collar(task: str) -> float:
    try:
        return DEFAULT_COLLARS[task]
    except KeyError:
        raise InvalidParam(f"no default collar for task {task!r}") from None


def _classes(*lists):
    seen = set()
    for lst in lists:
        seen.update(lst.labels())
    ordered = [c for c in CLASS_NAMES if c in seen]
    return ordered + sorted(seen.difference(ordered))


# ---------------------------------------------------------------------------
# event-based with collars
# ---------------------------------------------------------------------------

def _collar_match(gt_ev, pred_ev, collar, offset_ratio) -> int:
    used = [False] * len(pred_ev)
    order = sorted(range(len(pred_ev)), key=lambda i: (pred_ev[i].onset, pred_ev[i].offset))
    tp = 0
    for g in sorted(gt_ev, key=lambda e: (e.onset, e.offset)):
        off_tol = max(collar, offset_ratio * g.duration)
        for i in order:
            if used[i]:
                continue
            p = pred_ev[i]
            if abs(p.onset - g.onset) <= collar + EPS and abs(p.offset - g.offset) <= off_tol + EPS:
                used[i] = True
                tp += 1
                break
    return tp


def match_events_collar(gt: EventList, pred: EventList, cfg: EvalConfig = EvalConfig()) -> dict:
    """One-to-one greedy matching with onset collar and offset tolerance.

    GT events are visited in onset order; each takes the earliest-onset
    unmatched prediction of its class with ``|onset diff| <= collar`` and
    ``|offset diff| <= max(collar, offset_ratio * gt_duration)``.
    """
    out = {}
    for label in _classes(gt, pred):
        g, p = gt.of_class(label), pred.of_class(label)
        tp = _collar_match(g, p, cfg.collar_for(label), cfg.offset_ratio)
        out[label] = Counts(tp, len(p) - tp, len(g) - tp)
    return out


# ---------------------------------------------------------------------------
# segment-based
# ---------------------------------------------------------------------------

def _segments(a, frames_per_segment):
    if frames_per_segment == 1:
        return a.astype(bool)
    n = a.shape[0]
    n_seg = -(-n // frames_per_segment)
    padded = np.zeros((n_seg * frames_per_segment, a.shape[1]), dtype=bool)
    padded[:n] = a.astype(bool)
    return padded.reshape(n_seg, frames_per_segment, -1).any(axis=1)


def segment_scores(gt, pred, cfg: EvalConfig = EvalConfig(), frame_duration: float = 0.016,
                   class_names=CLASS_NAMES) -> dict:
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeMismatch(f"activity matrices differ in shape: {gt.shape} vs {pred.shape}")
    if gt.ndim != 2 or gt.shape[1] != len(class_names):
        raise ShapeMismatch(f"activity matrix must be (N, {len(class_names)}), got {gt.shape}")
    k = max(1, int(round(cfg.segment_length / frame_duration)))
    g, p = _segments(gt, k), _segments(pred, k)
    tp = (g & p).sum(axis=0)
    fp = (~g & p).sum(axis=0)
    fn = (g & ~p).sum(axis=0)
    return {name: Counts(int(tp[c]), int(fp[c]), int(fn[c])) for c, name in enumerate(class_names)}


# ---------------------------------------------------------------------------
# Jaccard index
# ---------------------------------------------------------------------------

def jaccard(a, b) -> float:
    a0, a1 = float(a[0]), float(a[1])
    b0, b1 = float(b[0]), float(b[1])
    if not (a1 > a0 and b1 > b0):
        raise DegenerateInterval(f"intervals need positive length: {a}, {b}")
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def _ji_class(gt_ev, pred_ev, thr):
    gt_ev = sorted(gt_ev, key=lambda e: (e.onset, e.offset))
    consumed = [False] * len(gt_ev)
    blamed = [False] * len(gt_ev)
    tp = fp = fn = 0
    for p in sorted(pred_ev, key=lambda e: (e.onset, e.offset)):
        best, best_j = 0.0, -1
        for j, g in enumerate(gt_ev):
            ji = jaccard((p.onset, p.offset), (g.onset, g.offset))
            if ji > best:
                best, best_j = ji, j
        if best > thr:
            if consumed[best_j]:
                fp += 1
            else:
                consumed[best_j] = True
                tp += 1
        elif best > 0:
            fn += 1
            blamed[best_j] = True
        else:
            fp += 1
    # a GT event already charged through a partial overlap is not charged twice
    fn += sum(1 for c, b in zip(consumed, blamed) if not c and not b)
    return Counts(tp, fp, fn)


def ji_scores(gt: EventList, pred: EventList, cfg: EvalConfig = EvalConfig()) -> dict:
    """Score each prediction by its best Jaccard index against GT of its class.

    JI above ``ji_tp_threshold`` is a true positive consuming that GT event (a
    second such prediction on a consumed event is a false positive); a
    partial overlap counts as a false negative; no overlap is a false
    positive.  GT events neither consumed nor partially hit are false
    negatives.
    """
    return {
        label: _ji_class(gt.of_class(label), pred.of_class(label), cfg.ji_tp_threshold)
        for label in _classes(gt, pred)
    }


# ---------------------------------------------------------------------------
# F1
# ---------------------------------------------------------------------------

def f1(c: Counts) -> float:
    den = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / den if den else 0.0


def macro_f1(per_class: dict, classes=None) -> float:
    names = list(per_class) if classes is None else list(classes)
    if not names:
        return 0.0
    return float(np.mean([f1(per_class.get(n, Counts())) for n in names]))


def pool(per_recording: list) -> dict:
    total = {}
    for counts in per_recording:
        for name, c in counts.items():
            total[name] = total.get(name, Counts()) + c
    return total


def score(gt: EventList, pred: EventList, basis: str, cfg: EvalConfig = EvalConfig(),
          frame_duration: float = 0.016, n_frames=None) -> dict:
    """Score one recording under ``basis`` in {event, segment, ji}."""
    if basis == "event":
        return match_events_collar(gt, pred, cfg)
    if basis == "ji":
        return ji_scores(gt, pred, cfg)
    if basis == "segment":
        if n_frames is None:
            n_frames = int(round(max(gt.duration, pred.duration) / frame_duration))
        present = _classes(gt, pred)
        per = segment_scores(
            encode_frames(gt, n_frames, frame_duration),
            encode_frames(pred, n_frames, frame_duration),
            cfg,
            frame_duration,
        )
        return {name: per[name] for name in present}
    raise InvalidParam(f"basis must be one of {BASES}, got {basis!r}")


def counts_csv(per_class: dict, basis: str) -> str:
    rows = ["class,basis,tp,fp,fn,precision,recall,f1"]
    for name, c in per_class.items():
        rows.append(f"{name},{basis},{c.tp},{c.fp},{c.fn},{c.precision:.6f},{c.recall:.6f},{f1(c):.6f}")
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# threshold sweeps
# ---------------------------------------------------------------------------

def _check_grid(thresholds):
    grid = list(thresholds)
    if not grid or not all(0 < t < 1 for t in grid):
        raise InvalidParam("thresholds must be a non-empty subset of (0, 1)")
    return grid


def pr_curve(posteriors, gts, thresholds=DEFAULT_GRID, basis: str = "segment",
             cfg: EvalConfig = EvalConfig(), frame_duration: float = 0.016, classes=None) -> dict:
    """Pooled precision and recall per class at each threshold.

    Parameters
    ----------
    posteriors : list of (N_i, 8) arrays
    gts : list of EventList
    classes : class names to report; by default those with GT events.

    Returns
    -------
    dict mapping class name to a list of ``(threshold, precision, recall)``.
    """
    if not posteriors or len(posteriors) != len(gts):
        raise EmptyDataset("need one GT list per posterior matrix and at least one recording")
    grid = _check_grid(thresholds)
    if classes is None:
        classes = [c for c in CLASS_NAMES if any(g.count(c) for g in gts)]
    curves = {c: [] for c in classes}
    for t in grid:
        pooled = {c: Counts() for c in classes}
        for p, g in zip(posteriors, gts):
            p = np.asarray(p)
            if basis == "segment":
                per = segment_scores(encode_frames(g, p.shape[0], frame_duration), binarize(p, t), cfg, frame_duration)
            else:
                pred = extract_events(binarize(p, t), frame_duration, duration=g.duration)
                per = score(g, pred, basis, cfg, frame_duration)
            for c in classes:
                pooled[c] = pooled[c] + per.get(c, Counts())
        for c in classes:
            curves[c].append((t, pooled[c].precision, pooled[c].recall))
    return curves


def count_error(pred_count: int, gt_count: int) -> float:
    """Absolute relative event-count error, capped at 1."""
    if gt_count <= 0:
        raise InvalidParam("GT count must be positive")
    return min(abs(pred_count - gt_count) / gt_count, 1.0)


def mape_curve(posteriors, gts, thresholds=DEFAULT_GRID, frame_duration: float = 0.016, classes=None) -> dict:
    """Mean per-recording event-count error per class at each threshold.

    Recordings without GT events of a class are left out for that class.
    """
    if not posteriors or len(posteriors) != len(gts):
        raise EmptyDataset("need one GT list per posterior matrix and at least one recording")
    grid = _check_grid(thresholds)
    requested = classes is not None
    classes = list(classes) if requested else list(CLASS_NAMES)
    eligible = {c: [i for i, g in enumerate(gts) if g.count(c) > 0] for c in classes}
    if requested:
        empty = [c for c in classes if not eligible[c]]
        if empty:
            raise NoEligibleRecordings(f"no recording has GT events for {', '.join(empty)}")
    classes = [c for c in classes if eligible[c]]
    if not classes:
        raise NoEligibleRecordings("no recording has any GT event")
    curves = {c: [] for c in classes}
    for t in grid:
        decoded = [extract_events(binarize(np.asarray(p), t), frame_duration) for p in posteriors]
        for c in classes:
            errs = [count_error(decoded[i].count(c), gts[i].count(c)) for i in eligible[c]]
            curves[c].append((t, float(np.mean(errs))))
    return curves


def pr_csv(curves: dict) -> str:
    rows = ["class,threshold,precision,recall"]
    for c, pts in curves.items():
        rows.extend(f"{c},{t:.2f},{p:.6f},{r:.6f}" for t, p, r in pts)
    return "\n".join(rows) + "\n"


def mape_csv(curves: dict) -> str:
    rows = ["class,threshold,mape"]
    for c, pts in curves.items():
        rows.extend(f"{c},{t:.2f},{m:.6f}" for t, m in pts)
    return "\n".join(rows) + "\n"
