import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hlsed.errors import CorruptHeader, EmptyClip, InvalidConfig, NotFound, RateMismatch, TooShort, UnsupportedFormat
from hlsed.signal import (
    AudioClip,
    FeatureConfig,
    frame_count,
    hz_to_mel,
    load_audio,
    log_mel,
    mel_band_edges,
    mel_filterbank,
    mel_to_hz,
    read_features,
    resample,
    save_audio,
    write_features,
)
from oracles import FROZEN, dft_log_mel, sliding_frame_count, triangle_filterbank


def _wav_bytes(pcm: bytes, channels=1, rate=4000, tag=1, bits=16):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


# -- I/O --------------------------------------------------------------------

def test_load_ten_second_pcm16(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes(np.zeros(40000, "<i2").tobytes()))
    clip = load_audio(p)
    assert len(clip.samples) == 40000 and clip.sample_rate == 4000


def test_pcm16_endpoint_is_minus_one(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes(np.array([-32768, 0, 16384], "<i2").tobytes()))
    assert load_audio(p).samples.tolist() == [-1.0, 0.0, 0.5]


def test_stereo_rejected(tmp_path):
    p = tmp_path / "s.wav"
    p.write_bytes(_wav_bytes(np.zeros(8, "<i2").tobytes(), channels=2))
    with pytest.raises(UnsupportedFormat):
        load_audio(p)


def test_missing_and_corrupt(tmp_path):
    with pytest.raises(NotFound):
        load_audio(tmp_path / "nope.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav at all")
    with pytest.raises(CorruptHeader):
        load_audio(bad)


def test_unsupported_bit_depth(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes(b"\0" * 12, bits=24))
    with pytest.raises(UnsupportedFormat):
        load_audio(p)


@pytest.mark.parametrize("subtype,tol", [("PCM_16", 1 / 32768), ("FLOAT", 1e-7)])
def test_save_load_round_trip(tmp_path, rng, subtype, tol):
    x = rng.uniform(-0.9, 0.9, 1000)
    save_audio(tmp_path / "r.wav", AudioClip(x, 4000), subtype)
    back = load_audio(tmp_path / "r.wav")
    assert back.sample_rate == 4000
    assert np.max(np.abs(back.samples - x)) <= tol


# -- resampling ---------------------------------------------------------------

def test_resample_identity():
    x = np.linspace(-1, 1, 500)
    out = resample(AudioClip(x, 4000), 4000)
    assert np.array_equal(out.samples, x)


def test_resample_duration():
    out = resample(AudioClip(np.random.default_rng(0).standard_normal(4000), 2000), 4000)
    assert abs(len(out.samples) - 8000) <= 1 and out.sample_rate == 4000


def test_resample_constant_fixed_point():
    out = resample(AudioClip(np.full(16000, 0.5), 8000), 4000)
    edge = 200
    assert np.max(np.abs(out.samples[edge:-edge] - 0.5)) < 1e-3


def test_resample_empty():
    with pytest.raises(EmptyClip):
        resample(AudioClip(np.zeros(0), 8000), 4000)


# -- framing --------------------------------------------------------------------

def test_frame_count_examples():
    assert frame_count(40000, 256, 64) == FROZEN["frames_10s"]
    assert frame_count(256, 256, 64) == 1
    with pytest.raises(TooShort):
        frame_count(255, 256, 64)


@given(st.integers(256, 50000), st.integers(1, 64))
def test_frame_count_matches_sliding_oracle(n, hop):
    assert frame_count(n, 256, hop) == sliding_frame_count(n, 256, hop)


# -- mel ---------------------------------------------------------------------------

def test_filterbank_shape_and_sign():
    fb = mel_filterbank()
    assert fb.shape == (64, 129)
    assert np.all(fb >= 0)
    assert np.all(fb[:, 1:-1].sum(axis=0) > 0)


def test_filterbank_matches_oracle():
    fb, edges = triangle_filterbank(4000, 256, 64)
    assert np.allclose(mel_filterbank(), fb, atol=1e-12)
    assert np.allclose(mel_band_edges(FeatureConfig()), edges, rtol=1e-12)


def test_area_norm_and_slaney_variants():
    fb = mel_filterbank(FeatureConfig(norm="area", mel_scale="slaney"))
    assert fb.shape == (64, 129) and np.all(fb >= 0)
    m = np.array([0.0, 500.0, 1000.0, 1999.0])
    for scale in ("htk", "slaney"):
        assert np.allclose(mel_to_hz(hz_to_mel(m, scale), scale), m)


@pytest.mark.parametrize(
    "kwargs",
    [dict(hop_len=300), dict(n_mels=0), dict(log_floor=0.0), dict(fmin=2000.0), dict(fmax=3000.0),
     dict(mel_scale="bark"), dict(norm="max")],
)
def test_invalid_feature_config(kwargs):
    with pytest.raises(InvalidConfig):
        mel_filterbank(FeatureConfig(**kwargs))


# -- log-mel ---------------------------------------------------------------------------

def test_log_mel_shape_ten_seconds():
    spec = log_mel(AudioClip(np.random.default_rng(1).standard_normal(40000) * 0.1, 4000))
    assert spec.values.shape == (622, 64)
    assert spec.frame_duration == FROZEN["frame_duration"]


def test_log_mel_zero_clip_hits_floor():
    spec = log_mel(AudioClip(np.zeros(4000), 4000))
    assert np.all(spec.values == FROZEN["log_floor"])


def test_log_mel_matches_dft_oracle():
    x = np.random.default_rng(2).standard_normal(256 + 64 * 9)
    ours = log_mel(AudioClip(x, 4000)).values
    assert np.allclose(ours, dft_log_mel(x), atol=1e-9)


@pytest.mark.parametrize("band", [5, 20, 40, 60])
def test_tone_at_band_center_peaks_in_that_band(band):
    centers = mel_band_edges(FeatureConfig())[1:-1]
    t = np.arange(8000) / 4000
    spec = log_mel(AudioClip(np.sin(2 * np.pi * centers[band] * t), 4000))
    assert int(np.argmax(spec.values.mean(axis=0))) == band


def test_log_mel_rate_mismatch_and_short():
    with pytest.raises(RateMismatch):
        log_mel(AudioClip(np.zeros(4000), 8000))
    with pytest.raises(TooShort):
        log_mel(AudioClip(np.zeros(100), 4000))


@given(st.integers(256, 3000), st.floats(1.01, 10.0), st.integers(0, 2**31 - 1))
def test_log_mel_shape_floor_and_gain_monotone(n, gain, seed):
    x = np.random.default_rng(seed).standard_normal(n) * 0.1
    a = log_mel(AudioClip(x, 4000)).values
    b = log_mel(AudioClip(gain * x, 4000)).values
    assert a.shape == (frame_count(n, 256, 64), 64)
    assert np.all(a >= FROZEN["log_floor"])
    unfloored = a > FROZEN["log_floor"]
    assert np.all(b[unfloored] >= a[unfloored])


def test_log_mel_deterministic():
    x = np.random.default_rng(3).standard_normal(3000)
    assert np.array_equal(log_mel(AudioClip(x, 4000)).values, log_mel(AudioClip(x, 4000)).values)


def test_feature_dump_round_trip(tmp_path):
    spec = log_mel(AudioClip(np.random.default_rng(4).standard_normal(40000), 4000))
    write_features(tmp_path / "f.lmel", spec)
    raw = (tmp_path / "f.lmel").read_bytes()
    assert raw[:4] == b"LMEL" and struct.unpack("<III", raw[4:16]) == (622, 64, 0)
    back = read_features(tmp_path / "f.lmel")
    assert np.array_equal(back.values, spec.values.astype(np.float32))
    (tmp_path / "g.lmel").write_bytes(raw[:100])
    with pytest.raises(CorruptHeader):
        read_features(tmp_path / "g.lmel")
