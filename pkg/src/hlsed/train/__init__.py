"""Losses, optimizer, augmentation and the training loop."""
from .augment import augment_spec, augment_wave
from .losses import afl_loss, bce_loss, make_loss
from .loop import EarlyStopping, History, TrainConfig, TrainItem, evaluate_loss, items_from_manifest, train_loop
from .optim import AdamState, adam_step

__all__ = [
    "afl_loss",
    "bce_loss",
    "make_loss",
    "AdamState",
    "adam_step",
    "augment_wave",
    "augment_spec",
    "TrainConfig",
    "TrainItem",
    "History",
    "EarlyStopping",
    "train_loop",
    "evaluate_loss",
    "items_from_manifest",
]
