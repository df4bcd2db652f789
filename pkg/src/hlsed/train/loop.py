"""Mini-batch training with random fixed-length windows and early stopping."""
from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import DivergedLoss, EmptyDataset, InvalidConfig
from ..labels import (
    EventList,
    ManifestEntry,
    class_mask_for,
    encode_frames,
    read_labels,
)
from ..model import apply_bn_updates, backward, forward, init_weights, save_weights
from ..signal import AudioClip, FeatureConfig, LogMelSpectrogram, frame_count, load_audio, log_mel, resample
from .augment import augment_spec, augment_wave
from .losses import make_loss
from .optim import AdamState, adam_step


@dataclass
class TrainConfig:
    loss: str = "afl"
    gamma: float = 0.0625
    zeta: float = 1.0
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 25
    window_s: float = 10.0
    threshold: float = 0.5
    early_stop_patience: int = 5
    seed: int = 0
    deterministic: bool = True
    dtype: str = "float32"
    wave_augment: list = field(default_factory=list)
    spec_augment: list = field(default_factory=list)

    def validate(self):
        if self.loss not in ("bce", "afl"):
            raise InvalidConfig(f"loss must be bce or afl, got {self.loss!r}")
        if not self.lr > 0:
            raise InvalidConfig("lr must be > 0")
        if self.gamma < 0 or self.zeta < 0:
            raise InvalidConfig("gamma and zeta must be >= 0")
        if not 0 < self.threshold < 1:
            raise InvalidConfig("threshold must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.early_stop_patience < 1:
            raise InvalidConfig("batch_size, epochs and early_stop_patience must be >= 1")
        if not self.window_s > 0:
            raise InvalidConfig("window_s must be > 0")
        if self.dtype not in ("float32", "float64"):
            raise InvalidConfig(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self


@dataclass
class TrainItem:
    """One recording ready for window sampling."""

    clip: AudioClip
    events: EventList
    classes: list
    name: str = ""
    frame_mask: np.ndarray | None = None  # (n_frames,) over the full recording


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for i, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            rows.append(f"{i},{tl:.10g},{vl:.10g}")
        return "\n".join(rows) + "\n"


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs bring no strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def items_from_manifest(entries: list[ManifestEntry], feature_cfg: FeatureConfig = FeatureConfig()):
    items = []
    for e in entries:
        clip = load_audio(e.audio)
        if clip.sample_rate != feature_cfg.sample_rate:
            clip = resample(clip, feature_cfg.sample_rate)
        events = read_labels(e.labels, clip.duration) if e.labels else EventList([], clip.duration)
        mask = None
        if e.mask:
            mask = np.loadtxt(e.mask, dtype=np.float64, ndmin=1)
        items.append(TrainItem(clip, events, e.supervised_classes(), Path(e.audio).stem, mask))
    return items


class _Windower:
    """Cuts hop-aligned windows of a recording with matching targets and masks."""

    def __init__(self, item: TrainItem, fcfg: FeatureConfig, window_s: float, cache_features: bool):
        self.item, self.fcfg = item, fcfg
        sr, win, hop = fcfg.sample_rate, fcfg.window_len, fcfg.hop_len
        self.win_samples = int(round(window_s * sr))
        self.win_frames = frame_count(self.win_samples, win, hop)
        n = len(item.clip.samples)
        padded = max(n, self.win_samples)
        self.n_starts = (padded - self.win_samples) // hop + 1
        self.samples = np.zeros(padded)
        self.samples[:n] = item.clip.samples
        total_frames = frame_count(padded, win, hop)
        valid = frame_count(n, win, hop) if n >= win else 0
        fmask = np.zeros(total_frames)
        fmask[:valid] = 1.0
        if item.frame_mask is not None:
            m = np.asarray(item.frame_mask, dtype=np.float64)[:total_frames]
            fmask[: len(m)] *= m
        self.mask = fmask[:, None] * class_mask_for(item.classes)[None, :]
        self.targets = encode_frames(item.events, total_frames, fcfg.frame_duration)
        self.features = None
        if cache_features:
            self.features = log_mel(AudioClip(self.samples, sr), fcfg).values

    def window(self, k: int, wave_aug=None, spec_aug=None, seed=None):
        hop, W = self.fcfg.hop_len, self.win_frames
        s = k * hop
        if self.features is not None and not wave_aug:
            x = self.features[k:k + W]
        else:
            clip = AudioClip(self.samples[s:s + self.win_samples], self.fcfg.sample_rate)
            if wave_aug:
                clip = augment_wave(clip, wave_aug, seed)
            x = log_mel(clip, self.fcfg).values
        if spec_aug:
            x = augment_spec(LogMelSpectrogram(x, self.fcfg.frame_duration), spec_aug, seed).values
        return x, self.targets[k:k + W], self.mask[k:k + W]


def _write_run(run_dir, cfg, model_cfg, fcfg, history, best):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "train": asdict(cfg),
        "model": {"arch": model_cfg.arch, **asdict(model_cfg)},
        "features": asdict(fcfg),
    }
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    (run_dir / "history.csv").write_text(history.to_csv())
    save_weights(best, run_dir / "weights.hlsw")


def evaluate_loss(w, windowers, loss_fn) -> float:
    """Mean loss over whole recordings in eval mode."""
    losses = []
    for wd in windowers:
        if wd.features is not None:
            x = wd.features
        else:
            x = log_mel(AudioClip(wd.samples, wd.fcfg.sample_rate), wd.fcfg).values
        p, _ = forward(w, x, "eval")
        losses.append(loss_fn(p, wd.targets, wd.mask)[0])
    return float(np.mean(losses))


def train_loop(train_set, val_set, model_cfg, cfg: TrainConfig = TrainConfig(),
               feature_cfg: FeatureConfig = FeatureConfig(), run_dir=None, init=None,
               on_epoch=None):
    """Train a model and return ``(best_weights, history)``.

    Parameters
    ----------
    train_set, val_set : list of TrainItem
        ``val_set`` may be empty, in which case early stopping watches the
        training loss.
    model_cfg : CrnnConfig or TcnConfig
    cfg : TrainConfig
    run_dir : path, optional
        Receives ``config.json``, ``history.csv`` and ``weights.hlsw``.
    init : ModelWeights, optional
        Starting weights; a fresh seeded initialization otherwise.
    on_epoch : callable, optional
        ``on_epoch(epoch, weights, history)``; returning True ends training.
    """
    cfg.validate()
    feature_cfg.validate()
    if not train_set:
        raise EmptyDataset("training set is empty")
    limiter = threadpool_limits(limits=1) if cfg.deterministic else contextlib.nullcontext()
    with limiter:
        return _train(train_set, val_set, model_cfg, cfg, feature_cfg, run_dir, init, on_epoch)


def _train(train_set, val_set, model_cfg, cfg, fcfg, run_dir, init, on_epoch):
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    w = init.astype(dtype) if init is not None else init_weights(model_cfg, seed=cfg.seed, dtype=dtype)
    loss_fn = make_loss(cfg.loss, cfg.gamma, cfg.zeta)
    cache_feats = not cfg.wave_augment
    train_w = [_Windower(it, fcfg, cfg.window_s, cache_feats) for it in train_set]
    val_w = [_Windower(it, fcfg, cfg.window_s, True) for it in val_set]
    state = AdamState()
    history = History()
    stopper = EarlyStopping(cfg.early_stop_patience)
    best = w.copy()
    augmenting = bool(cfg.wave_augment or cfg.spec_augment)

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_w))
        batch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            xs, ys, ms = [], [], []
            for idx in order[lo:lo + cfg.batch_size]:
                wd = train_w[idx]
                k = int(rng.integers(0, wd.n_starts))
                seed = int(rng.integers(0, 2**31)) if augmenting else None
                x, y, m = wd.window(k, cfg.wave_augment, cfg.spec_augment, seed)
                xs.append(x), ys.append(y), ms.append(m)
            xb = np.stack(xs)
            yb = np.stack(ys)
            mb = np.stack(ms)
            p, cache = forward(w, xb, "train")
            loss, dp = loss_fn(p, yb, mb)
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite training loss at epoch {epoch}")
            grads = backward(w, cache, dp)
            adam_step(w, grads, state, cfg.lr)
            apply_bn_updates(w, cache)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = evaluate_loss(w, val_w, loss_fn) if val_w else math.nan
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        monitored = val_loss if val_w else train_loss
        if not math.isfinite(monitored):
            raise DivergedLoss(f"non-finite monitored loss at epoch {epoch}")
        stop = stopper.update(epoch, monitored)
        if stopper.best_epoch == epoch:
            best = w.copy()
        if on_epoch is not None and on_epoch(epoch, w, history):
            # the callback vouches for the current weights
            best, stopper.best_epoch = w.copy(), epoch
            break
        if stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_epoch
    if run_dir is not None:
        _write_run(run_dir, cfg, w.config, fcfg, history, best)
    return best, history
