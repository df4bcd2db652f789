"""Synthetic heart, lung and fully labelled corpora written to disk."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..labels import HEART_CLASSES, LUNG_CLASSES, ManifestEntry, save_manifest, write_labels
from ..signal import save_audio
from .synth import SynthSpec, synth_clip


@dataclass(frozen=True)
class CorpusSpec:
    """Sizes and level ranges of the three synthetic corpora.

    In the heart corpus breathing is an unlabelled background, in the lung
    corpus the heart is.  The test corpus carries every event.
    """

    n_heart: int = 12
    n_lung: int = 12
    n_test: int = 6
    n_val: int = 2  # per training corpus, taken from its clips
    duration: float = 10.0
    hr_range: tuple = (50.0, 130.0)
    rr_range: tuple = (10.0, 28.0)
    fg_gain: tuple = (0.6, 1.0)
    bg_heart_gain: tuple = (0.3, 0.5)
    bg_lung_gain: tuple = (0.2, 0.35)
    lung_fg_gain: tuple = (0.5, 0.9)
    seed: int = 0


def _spec(rng, cs, heart_gain, lung_gain, seed):
    return SynthSpec(
        duration=cs.duration,
        heart_rate=float(rng.uniform(*cs.hr_range)),
        respiratory_rate=float(rng.uniform(*cs.rr_range)),
        heart_gain=heart_gain,
        lung_gain=lung_gain,
        seed=seed,
    )


def _write(root, name, spec, keep, split, task, classes):
    clip, events = synth_clip(spec)
    audio = root / f"{name}.wav"
    labels = root / f"{name}.txt"
    save_audio(audio, clip)
    write_labels(labels, events.only(keep))
    return ManifestEntry(str(audio.name), str(labels.name), split=split, task=task, classes=classes), spec


def build_corpora(root, cs: CorpusSpec = CorpusSpec()) -> dict:
    """Write ``heart.json``, ``lung.json`` and ``test.json`` under ``root``.

    Returns the manifest paths plus the generator specs keyed by clip name,
    so callers know the true vital signs of every clip.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cs.seed)
    specs = {}
    out = {}
    seed = cs.seed * 100_000
    plans = (
        ("heart", cs.n_heart, HEART_CLASSES, "heart"),
        ("lung", cs.n_lung, LUNG_CLASSES, "lung"),
        ("test", cs.n_test, HEART_CLASSES + LUNG_CLASSES, "both"),
    )
    for corpus, n, keep, task in plans:
        entries = []
        for i in range(n):
            seed += 1
            if corpus == "heart":
                hg, lg = rng.uniform(*cs.fg_gain), rng.uniform(*cs.bg_lung_gain)
                split = "val" if i >= n - cs.n_val else "train"
            elif corpus == "lung":
                hg, lg = rng.uniform(*cs.bg_heart_gain), rng.uniform(*cs.lung_fg_gain)
                split = "val" if i >= n - cs.n_val else "train"
            else:
                hg, lg = rng.uniform(*cs.fg_gain), rng.uniform(*cs.lung_fg_gain)
                split = "test"
            name = f"{corpus}_{i:03d}"
            entry, spec = _write(root, name, _spec(rng, cs, float(hg), float(lg), seed), keep, split, task, None)
            entries.append(entry)
            specs[name] = spec
        path = root / f"{corpus}.json"
        save_manifest(path, entries)
        out[corpus] = path
    out["specs"] = specs
    return out
