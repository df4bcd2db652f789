"""Specialist training, gated pseudo-labelling, merging and unified retraining."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..decode import PlausibilityBounds, binarize, estimate_vitals, extract_events, plausibility_filter
from ..errors import IncompatibleModel, InvalidParam, MissingAudio, MissingStageInput
from ..labels import (
    CLASS_NAMES,
    HEART_CLASSES,
    LUNG_CLASSES,
    N_CLASSES,
    EventList,
    ManifestEntry,
    load_manifest,
    read_labels,
    save_manifest,
    write_labels,
)
from ..model import DESK_CRNN, forward, load_weights
from ..signal import FeatureConfig, load_audio, log_mel, resample
from ..train import TrainConfig, items_from_manifest, train_loop


def gate_task(classes) -> str:
    classes = set(classes)
    if classes <= set(HEART_CLASSES):
        return "heart"
    if classes <= set(LUNG_CLASSES):
        return "lung"
    return "both"


@dataclass
class PseudoLabelResult:
    entries: list = field(default_factory=list)
    rejections: list = field(default_factory=list)  # {clip, hr, rr, reason}
    totals: dict = field(default_factory=dict)  # class -> accepted event count
    vitals: dict = field(default_factory=dict)  # clip -> Vitals

    def rejections_csv(self) -> str:
        rows = ["clip,hr,rr,reason"]
        rows.extend(f"{r['clip']},{r['hr']:.3f},{r['rr']:.3f},{r['reason']}" for r in self.rejections)
        return "\n".join(rows) + "\n"

    def totals_csv(self) -> str:
        rows = ["class,events"]
        rows.extend(f"{c},{n}" for c, n in self.totals.items())
        return "\n".join(rows) + "\n"


def _load_clip(entry, fcfg):
    if not Path(entry.audio).is_file():
        raise MissingAudio(f"audio not found: {entry.audio}")
    clip = load_audio(entry.audio)
    if clip.sample_rate != fcfg.sample_rate:
        clip = resample(clip, fcfg.sample_rate)
    return clip


def generate_pseudo_labels(w, corpus, which_classes, out_dir, threshold: float = 0.5,
                           bounds: PlausibilityBounds = PlausibilityBounds(),
                           feature_cfg: FeatureConfig = FeatureConfig()) -> PseudoLabelResult:
    """Decode ``which_classes`` on every clip and keep the plausible ones.

    Accepted clips get a label file ``<stem>.pl.txt`` in ``out_dir`` whose
    events carry origin ``pseudo``.  The vital-sign gate is applied per clip
    for the organ system(s) covered by ``which_classes``.
    """
    which = [c for c in CLASS_NAMES if c in set(which_classes)]
    if not which or len(which) != len(set(which_classes)):
        raise InvalidParam(f"which_classes must name training classes, got {which_classes}")
    if w.config.n_classes != N_CLASSES or w.config.n_mels != feature_cfg.n_mels:
        raise IncompatibleModel(
            f"model emits {w.config.n_classes} classes from {w.config.n_mels} mel bins; "
            f"need {N_CLASSES} from {feature_cfg.n_mels}"
        )
    task = gate_task(which)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = PseudoLabelResult(totals={c: 0 for c in which})
    for entry in corpus:
        clip = _load_clip(entry, feature_cfg)
        spec = log_mel(clip, feature_cfg)
        p, _ = forward(w, spec, "eval")
        events = extract_events(binarize(p, threshold), spec.frame_duration, duration=clip.duration).only(which)
        vitals = estimate_vitals(events, clip.duration)
        name = Path(entry.audio).stem
        result.vitals[name] = vitals
        decision = plausibility_filter(vitals, task, bounds)
        if not decision:
            result.rejections.append(
                {"clip": name, "hr": vitals.heart_rate, "rr": vitals.respiratory_rate, "reason": decision.reason}
            )
            continue
        label_path = out_dir / f"{name}.pl.txt"
        write_labels(label_path, events.with_origin("pseudo"), with_origin=True)
        for c in which:
            result.totals[c] += events.count(c)
        result.entries.append(
            ManifestEntry(entry.audio, str(label_path), split=entry.split, origin="pseudo", task=task, classes=which)
        )
    return result


@dataclass
class MergeResult:
    entries: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)  # {clip, class, dropped}

    def conflicts_csv(self) -> str:
        rows = ["clip,class,dropped_pseudo_events"]
        rows.extend(f"{c['clip']},{c['class']},{c['dropped']}" for c in self.conflicts)
        return "\n".join(rows) + "\n"


def _key(entry):
    return str(Path(entry.audio).resolve())


def _merged_task(classes):
    return gate_task(classes)


def merge_datasets(gt, pl, out_dir, policy: str = "gt_wins") -> MergeResult:
    """Combine GT and pseudo-label entries clip by clip.

    A clip keeps its GT events for the classes its GT supervises and takes
    pseudo-label events for the remaining classes.  Pseudo events of a GT
    class are dropped and logged.  Clips without pseudo labels pass through
    unchanged, as do pseudo-only clips.
    """
    if policy != "gt_wins":
        raise InvalidParam(f"unknown merge policy {policy!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pl_by_clip = {_key(e): e for e in pl}
    result = MergeResult()
    seen = set()
    for g in gt:
        k = _key(g)
        seen.add(k)
        p = pl_by_clip.get(k)
        if p is None:
            result.entries.append(g)
            continue
        duration = load_audio(g.audio).duration
        gt_classes = g.supervised_classes()
        gt_events = read_labels(g.labels, duration) if g.labels else EventList([], duration)
        pl_events = read_labels(p.labels, duration) if p.labels else EventList([], duration)
        name = Path(g.audio).stem
        keep = []
        for c in p.supervised_classes():
            n = pl_events.count(c)
            if c in gt_classes:
                if n:
                    result.conflicts.append({"clip": name, "class": c, "dropped": n})
                continue
            keep.append(c)
        merged = EventList(
            list(gt_events.only(gt_classes).with_origin("gt")) + list(pl_events.only(keep).with_origin("pseudo")),
            duration,
        )
        path = out_dir / f"{name}.merged.txt"
        write_labels(path, merged, with_origin=True)
        classes = [c for c in CLASS_NAMES if c in set(gt_classes) | set(keep)]
        result.entries.append(
            ManifestEntry(g.audio, str(path), split=g.split, origin=g.origin, task=_merged_task(classes),
                          classes=classes, mask=g.mask)
        )
    result.entries.extend(e for e in pl if _key(e) not in seen)
    return result


# ---------------------------------------------------------------------------
# three-stage orchestration
# ---------------------------------------------------------------------------

@dataclass
class StrategyConfig:
    workdir: str
    heart_manifest: str | None = None
    lung_manifest: str | None = None
    model_cfg: object = DESK_CRNN
    train: TrainConfig = field(default_factory=TrainConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    bounds: PlausibilityBounds = field(default_factory=PlausibilityBounds)
    threshold: float = 0.5


def _split(entries):
    train = [e for e in entries if e.split == "train"]
    val = [e for e in entries if e.split == "val"]
    return train, val


def _train(entries, cfg: StrategyConfig, run_dir, on_epoch=None):
    train_e, val_e = _split(entries)
    fc = cfg.features
    return train_loop(items_from_manifest(train_e, fc), items_from_manifest(val_e, fc),
                      cfg.model_cfg, cfg.train, fc, run_dir=run_dir, on_epoch=on_epoch)


def _need(path, what):
    if path is None or not Path(path).exists():
        raise MissingStageInput(f"{what} not found: {path}")
    return Path(path)


def _supervised(entries):
    classes = set()
    for e in entries:
        classes.update(e.supervised_classes())
    return [c for c in CLASS_NAMES if c in classes]


def stage_paths(workdir) -> dict:
    w = Path(workdir)
    return {
        "heart_run": w / "stage1" / "heart",
        "lung_run": w / "stage1" / "lung",
        "stage2": w / "stage2",
        "merged": w / "stage2" / "merged.json",
        "unified_run": w / "stage3",
    }


def run_strategy(stage: int, cfg: StrategyConfig, on_epoch=None) -> dict:
    """Run one stage; artifacts land under ``cfg.workdir``.

    1. train heart and lung specialists, each supervised on its own classes;
    2. pseudo-label each corpus with the other specialist, gate, and merge;
    3. train the unified model on the merged manifest.
    """
    paths = stage_paths(cfg.workdir)
    if stage == 1:
        out = {}
        for organ, manifest in (("heart", cfg.heart_manifest), ("lung", cfg.lung_manifest)):
            entries = load_manifest(_need(manifest, f"{organ} manifest"))
            _, history = _train(entries, cfg, paths[f"{organ}_run"], on_epoch)
            out[organ] = {"weights": paths[f"{organ}_run"] / "weights.hlsw", "history": history}
        return out
    if stage == 2:
        heart_w = load_weights(_need(paths["heart_run"] / "weights.hlsw", "stage-1 heart weights"))
        lung_w = load_weights(_need(paths["lung_run"] / "weights.hlsw", "stage-1 lung weights"))
        heart_e = load_manifest(_need(cfg.heart_manifest, "heart manifest"))
        lung_e = load_manifest(_need(cfg.lung_manifest, "lung manifest"))
        s2 = paths["stage2"]
        # the heart specialist labels the heart sounds behind the lung corpus and vice versa
        heart_pl = generate_pseudo_labels(heart_w, lung_e, _supervised(heart_e), s2 / "heart_pl",
                                          cfg.threshold, cfg.bounds, cfg.features)
        lung_pl = generate_pseudo_labels(lung_w, heart_e, _supervised(lung_e), s2 / "lung_pl",
                                         cfg.threshold, cfg.bounds, cfg.features)
        save_manifest(s2 / "heart_pl.json", heart_pl.entries)
        save_manifest(s2 / "lung_pl.json", lung_pl.entries)
        (s2 / "heart_pl_rejections.csv").write_text(heart_pl.rejections_csv())
        (s2 / "lung_pl_rejections.csv").write_text(lung_pl.rejections_csv())
        totals = {**heart_pl.totals, **lung_pl.totals}
        (s2 / "pl_totals.csv").write_text(PseudoLabelResult(totals=totals).totals_csv())
        merged = merge_datasets(heart_e + lung_e, heart_pl.entries + lung_pl.entries, s2 / "merged")
        save_manifest(paths["merged"], merged.entries)
        (s2 / "conflicts.csv").write_text(merged.conflicts_csv())
        return {"heart_pl": heart_pl, "lung_pl": lung_pl, "merged": merged, "manifest": paths["merged"]}
    if stage == 3:
        entries = load_manifest(_need(paths["merged"], "merged manifest"))
        _, history = _train(entries, cfg, paths["unified_run"], on_epoch)
        return {"weights": paths["unified_run"] / "weights.hlsw", "history": history}
    raise InvalidParam(f"stage must be 1, 2 or 3, got {stage}")
