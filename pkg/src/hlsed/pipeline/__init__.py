"""Synthetic corpora and the three-stage semi-supervised strategy."""
from .corpus import CorpusSpec, build_corpora
from .strategy import (
    MergeResult,
    PseudoLabelResult,
    StrategyConfig,
    gate_task,
    generate_pseudo_labels,
    merge_datasets,
    run_strategy,
    stage_paths,
)
from .synth import SynthSpec, synth_clip

__all__ = [
    "SynthSpec",
    "synth_clip",
    "CorpusSpec",
    "build_corpora",
    "StrategyConfig",
    "PseudoLabelResult",
    "MergeResult",
    "gate_task",
    "generate_pseudo_labels",
    "merge_datasets",
    "run_strategy",
    "stage_paths",
]
