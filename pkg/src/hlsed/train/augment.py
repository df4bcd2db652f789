"""Wave- and spectrogram-domain augmentation.

An augmentation spec is an ordered list of dicts, each naming an ``op`` and
its parameters.  A numeric parameter may be given as ``[lo, hi]``, in which
case it is drawn uniformly per call from the seeded generator.

Wave ops: ``gain`` (``db``), ``highpass`` / ``lowpass`` (``cutoff`` Hz,
first order), ``white_noise`` (``snr_db``), ``time_dropout`` (``start`` and
``end`` seconds, or a random span of at most ``max_len`` seconds),
``noise_injection`` (``noise`` array or AudioClip, ``snr_db``).

Spectrogram ops: ``time_mask`` / ``freq_mask`` (``width``, optional
``start``, ``count``), ``filter_augment`` (``n_bands``, ``db``),
``freq_stretch`` (``factor``, within [0.9, 1.1]).
"""
from __future__ import annotations

import numpy as np
from scipy.signal import butter, lfilter

from ..errors import InvalidParam, UnsupportedAugment
from ..signal import AudioClip, LogMelSpectrogram

UNSUPPORTED = {"pitch_shift", "reverb"}


def _draw(rng, value, name):
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or value[0] > value[1]:
            raise InvalidParam(f"{name} range must be [lo, hi], got {value}")
        return float(rng.uniform(value[0], value[1]))
    return float(value)


def _param(op, name, rng, default=None):
    if name not in op:
        if default is None:
            raise InvalidParam(f"{op['op']} needs parameter {name!r}")
        return default
    return _draw(rng, op[name], name)


def _power(x):
    return float(np.mean(x * x))


def _mix_at_snr(x, noise, snr_db):
    p_sig, p_noise = _power(x), _power(noise)
    if p_noise == 0 or p_sig == 0:
        return x
    scale = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return x + scale * noise


def augment_wave(clip: AudioClip, spec, seed) -> AudioClip:
    rng = np.random.default_rng(seed)
    x = np.array(clip.samples, dtype=np.float64)
    fs = clip.sample_rate
    for op in spec or []:
        kind = op.get("op")
        if kind in UNSUPPORTED:
            raise UnsupportedAugment(f"{kind} is not supported")
        if kind == "gain":
            x = x * 10.0 ** (_param(op, "db", rng) / 20.0)
        elif kind in ("highpass", "lowpass"):
            cutoff = _param(op, "cutoff", rng)
            if not 0 < cutoff < fs / 2:
                raise InvalidParam(f"cutoff {cutoff} Hz outside (0, {fs / 2})")
            b, a = butter(1, cutoff, btype=kind, fs=fs)
            x = lfilter(b, a, x)
        elif kind == "white_noise":
            x = _mix_at_snr(x, rng.standard_normal(len(x)), _param(op, "snr_db", rng))
        elif kind == "time_dropout":
            if "start" in op:
                start, end = _param(op, "start", rng), _param(op, "end", rng)
            else:
                length = rng.uniform(0, _param(op, "max_len", rng))
                start = rng.uniform(0, max(len(x) / fs - length, 0.0))
                end = start + length
            if end < start:
                raise InvalidParam("time_dropout end precedes start")
            x[int(round(start * fs)):int(round(end * fs))] = 0.0
        elif kind == "noise_injection":
            noise = op.get("noise")
            if isinstance(noise, AudioClip):
                noise = noise.samples
            if noise is None or len(noise) == 0:
                raise InvalidParam("noise_injection needs a non-empty 'noise' signal")
            noise = np.resize(np.asarray(noise, dtype=np.float64), len(x))
            x = _mix_at_snr(x, noise, _param(op, "snr_db", rng))
        else:
            raise InvalidParam(f"unknown wave augmentation {kind!r}")
    return AudioClip(x, fs)


def _mask_axis(values, op, rng, axis):
    n = values.shape[axis]
    width = int(round(_param(op, "width", rng)))
    count = int(op.get("count", 1))
    if width < 0 or width > n:
        raise InvalidParam(f"mask width {width} outside [0, {n}]")
    fill = values.mean()
    out = values.copy()
    for _ in range(count):
        if width == 0:
            continue
        start = int(op["start"]) if "start" in op else int(rng.integers(0, n - width + 1))
        if not 0 <= start <= n - width:
            raise InvalidParam(f"mask start {start} out of range")
        index = [slice(None)] * values.ndim
        index[axis] = slice(start, start + width)
        out[tuple(index)] = fill
    return out


def augment_spec(x: LogMelSpectrogram, spec, seed) -> LogMelSpectrogram:
    rng = np.random.default_rng(seed)
    v = np.array(x.values, dtype=np.float64)
    n_frames, n_mels = v.shape
    for op in spec or []:
        kind = op.get("op")
        if kind == "time_mask":
            v = _mask_axis(v, op, rng, axis=0)
        elif kind == "freq_mask":
            v = _mask_axis(v, op, rng, axis=1)
        elif kind == "filter_augment":
            n_bands = int(op.get("n_bands", 3))
            if not 1 <= n_bands <= n_mels:
                raise InvalidParam(f"n_bands must be in [1, {n_mels}]")
            cuts = np.sort(rng.choice(np.arange(1, n_mels), size=n_bands - 1, replace=False))
            bounds = np.concatenate([[0], cuts, [n_mels]])
            gains = np.empty(n_mels)
            for lo, hi in zip(bounds[:-1], bounds[1:]):
                # dB of power -> natural-log domain
                gains[lo:hi] = _param(op, "db", rng) * np.log(10.0) / 10.0
            v = v + gains[None, :]
        elif kind == "freq_stretch":
            factor = _param(op, "factor", rng)
            if not 0.9 <= factor <= 1.1:
                raise InvalidParam(f"stretch factor {factor} outside [0.9, 1.1]")
            src = np.arange(n_mels) / factor
            grid = np.arange(n_mels)
            v = np.stack([np.interp(src, grid, row) for row in v])
        else:
            raise InvalidParam(f"unknown spectrogram augmentation {kind!r}")
    return LogMelSpectrogram(v, x.frame_duration, dict(x.meta))
