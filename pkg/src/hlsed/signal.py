"""Audio ingestion and log-mel feature extraction.

The front end is fixed: 4 kHz input, 256-sample Hann window, 64-sample hop,
64 HTK mel bands, natural log with a floor.  A 10 s clip therefore yields
``1 + (40000 - 256) // 64 = 622`` frames of 16 ms.  There is no band-pass
filtering and no per-clip normalization.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import (
    CorruptHeader,
    EmptyClip,
    InvalidConfig,
    NotFound,
    RateMismatch,
    TooShort,
    UnsupportedFormat,
)

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

FEATURE_MAGIC = b"LMEL"


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise UnsupportedFormat("audio must be mono (1-D samples)")
        if int(self.sample_rate) <= 0:
            raise InvalidConfig(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 4000
    window_len: int = 256
    hop_len: int = 64
    n_mels: int = 64
    log_floor: float = 1e-10
    fmin: float = 0.0
    fmax: float | None = None
    mel_scale: str = "htk"
    norm: str = "peak"

    @property
    def f_max(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    @property
    def frame_duration(self) -> float:
        return self.hop_len / self.sample_rate

    def validate(self):
        if self.sample_rate <= 0:
            raise InvalidConfig("sample_rate must be positive")
        if self.window_len <= 0 or self.hop_len <= 0:
            raise InvalidConfig("window_len and hop_len must be positive")
        if self.hop_len > self.window_len:
            raise InvalidConfig("hop_len must not exceed window_len")
        if self.n_mels < 1:
            raise InvalidConfig("n_mels must be >= 1")
        if not self.log_floor > 0:
            raise InvalidConfig("log_floor must be > 0")
        if not (0 <= self.fmin < self.f_max <= self.sample_rate / 2):
            raise InvalidConfig(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.f_max}"
            )
        if self.mel_scale not in ("htk", "slaney"):
            raise InvalidConfig(f"unknown mel_scale {self.mel_scale!r}")
        if self.norm not in ("peak", "area"):
            raise InvalidConfig(f"unknown filter norm {self.norm!r}")
        return self


@dataclass
class LogMelSpectrogram:
    values: np.ndarray
    frame_duration: float
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------

def _read_chunks(data: bytes, path):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise CorruptHeader(f"{path}: not a RIFF/WAVE file")
    pos = 12
    chunks = {}
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if cid not in chunks:
            chunks[cid] = body
        pos += 8 + size + (size & 1)
    return chunks


def load_audio(path) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file into an :class:`AudioClip`.

    16-bit samples are scaled by 1/32768 so -32768 maps to exactly -1.0.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"{path}: no such file")
    data = path.read_bytes()
    chunks = _read_chunks(data, path)
    fmt = chunks.get(b"fmt ")
    if fmt is None or len(fmt) < 16:
        raise CorruptHeader(f"{path}: missing or short fmt chunk")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        (tag,) = struct.unpack("<H", fmt[24:26])
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, only mono is supported")
    if rate <= 0:
        raise CorruptHeader(f"{path}: sample rate {rate}")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormat(f"{path}: format tag {tag} with {bits} bits is not supported")
    if b"data" not in chunks:
        raise CorruptHeader(f"{path}: missing data chunk")
    raw = chunks[b"data"]
    raw = raw[: len(raw) - len(raw) % dtype.itemsize]
    samples = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    if dtype.kind == "i":
        samples /= 32768.0
    return AudioClip(samples, rate)


def save_audio(path, clip: AudioClip, subtype: str = "PCM_16"):
    """Write a mono WAV file (``PCM_16`` or ``FLOAT``)."""
    x = np.asarray(clip.samples)
    if subtype == "PCM_16":
        pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = WAVE_FORMAT_PCM, 16
    elif subtype == "FLOAT":
        pcm = x.astype("<f4")
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise UnsupportedFormat(f"unknown subtype {subtype!r}")
    body = pcm.tobytes()
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    out = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    out += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        out += b"\0"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(out)) + out)


# ---------------------------------------------------------------------------
# Resampling and framing
# ---------------------------------------------------------------------------

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resampling with scipy's linear-phase Kaiser FIR."""
    if target_rate <= 0:
        raise InvalidConfig(f"target_rate must be positive, got {target_rate}")
    if len(clip.samples) == 0:
        raise EmptyClip("cannot resample an empty clip")
    if target_rate == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate)
    g = gcd(int(target_rate), clip.sample_rate)
    up, down = int(target_rate) // g, clip.sample_rate // g
    y = resample_poly(clip.samples, up, down)
    return AudioClip(y, int(target_rate))


def frame_count(n_samples: int, window_len: int, hop_len: int) -> int:
    if n_samples < window_len:
        raise TooShort(f"{n_samples} samples is shorter than one {window_len}-sample window")
    return 1 + (n_samples - window_len) // hop_len


# ---------------------------------------------------------------------------
# Mel filterbank
# ---------------------------------------------------------------------------

def hz_to_mel(f, scale="htk"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    # Slaney: linear below 1 kHz, logarithmic above
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    return np.where(
        f >= min_log_hz,
        min_log_hz / f_sp + np.log(np.maximum(f, 1e-12) / min_log_hz) / logstep,
        lin,
    )


def mel_to_hz(m, scale="htk"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz): lower edge, centers, upper edge."""
    lo, hi = hz_to_mel(cfg.fmin, cfg.mel_scale), hz_to_mel(cfg.f_max, cfg.mel_scale)
    return mel_to_hz(np.linspace(lo, hi, cfg.n_mels + 2), cfg.mel_scale)


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters, shape ``(n_mels, window_len // 2 + 1)``.

    With ``norm="peak"`` each triangle rises to 1 at its center frequency;
    ``norm="area"`` scales each to unit area (Slaney convention).
    """
    cfg.validate()
    n_bins = cfg.window_len // 2 + 1
    freqs = np.arange(n_bins) * cfg.sample_rate / cfg.window_len
    edges = mel_band_edges(cfg)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if cfg.norm == "area":
        fb *= 2.0 / (upper - lower)
    return fb


# ---------------------------------------------------------------------------
# Log-mel
# ---------------------------------------------------------------------------

def power_spectrogram(samples: np.ndarray, window_len: int, hop_len: int) -> np.ndarray:
    n = frame_count(len(samples), window_len, hop_len)
    frames = np.lib.stride_tricks.sliding_window_view(samples, window_len)[::hop_len][:n]
    # periodic Hann
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window_len) / window_len)
    spec = np.fft.rfft(frames * window, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def log_mel(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> LogMelSpectrogram:
    """Hann-windowed power spectrum -> mel filterbank -> ``log(max(p, floor))``."""
    cfg.validate()
    if clip.sample_rate != cfg.sample_rate:
        raise RateMismatch(f"clip is {clip.sample_rate} Hz, features expect {cfg.sample_rate} Hz")
    power = power_spectrogram(clip.samples, cfg.window_len, cfg.hop_len)
    mel = power @ mel_filterbank(cfg).T
    values = np.log(np.maximum(mel, cfg.log_floor))
    return LogMelSpectrogram(values, cfg.frame_duration)


def write_features(path, spec: LogMelSpectrogram):
    """Dump features: 16-byte header then row-major little-endian float32."""
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    header = FEATURE_MAGIC + struct.pack("<III", values.shape[0], values.shape[1], 0)
    Path(path).write_bytes(header + values.tobytes())


def read_features(path, frame_duration: float = 0.016) -> LogMelSpectrogram:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FEATURE_MAGIC:
        raise CorruptHeader(f"{path}: not a feature dump")
    n_frames, n_mels, _ = struct.unpack("<III", data[4:16])
    body = data[16:]
    if len(body) != 4 * n_frames * n_mels:
        raise CorruptHeader(f"{path}: expected {n_frames}x{n_mels} floats, got {len(body) // 4}")
    values = np.frombuffer(body, dtype="<f4").reshape(n_frames, n_mels).copy()
    return LogMelSpectrogram(values, frame_duration)
