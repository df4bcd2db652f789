"""Synthetic auscultation clips with exact strong labels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt
from scipy.signal.windows import tukey

from ..errors import InfeasibleSpec
from ..labels import EventList, SoundEvent
from ..signal import AudioClip


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters.

    Rates are per minute; durations and fractions refer to one cycle.  The
    breath cycle is inspiration, a short pause, expiration, then rest.
    ``heart_gain`` / ``lung_gain`` scale the two organ systems so either can
    be made a faint background.  Event boundaries are snapped to
    ``quantum`` seconds when it is set.
    """

    duration: float = 10.0
    heart_rate: float = 72.0
    respiratory_rate: float = 15.0
    s1_duration: float = 0.10
    s2_duration: float = 0.08
    systole_fraction: float = 0.35
    insp_fraction: float = 0.38
    exp_fraction: float = 0.45
    pause_fraction: float = 0.05
    s1_hz: float = 60.0
    s2_hz: float = 120.0
    insp_band: tuple = (300.0, 900.0)
    exp_band: tuple = (150.0, 500.0)
    wheeze_hz: float | None = None
    crackle_density: float = 0.0  # crackles per second of inspiration
    heart_gain: float = 1.0
    lung_gain: float = 0.5
    noise_db: float = -50.0
    sample_rate: int = 4000
    quantum: float | None = 0.016
    seed: int = 0

    def validate(self):
        if not self.duration > 0:
            raise InfeasibleSpec("duration must be > 0")
        if not 0 <= self.heart_rate <= 300 or not 0 <= self.respiratory_rate <= 60:
            raise InfeasibleSpec("rates outside the generator range (HR 0..300, RR 0..60)")
        if self.heart_rate > 0:
            cycle = 60.0 / self.heart_rate
            sys = self.systole_fraction * cycle
            if self.s1_duration >= sys or sys + self.s2_duration >= cycle:
                raise InfeasibleSpec(f"S1/S2 durations do not fit a {cycle:.3f} s cardiac cycle")
        if self.insp_fraction + self.pause_fraction + self.exp_fraction >= 1.0:
            raise InfeasibleSpec("breath phase fractions must sum below 1")
        if min(self.insp_fraction, self.exp_fraction, self.s1_duration, self.s2_duration) <= 0:
            raise InfeasibleSpec("phase durations must be positive")
        nyq = self.sample_rate / 2
        for lo, hi in (self.insp_band, self.exp_band):
            if not 0 < lo < hi < nyq:
                raise InfeasibleSpec(f"band ({lo}, {hi}) must lie inside (0, {nyq})")
        return self


def _snap(t, q):
    # round off the float residue so times survive the label text format
    return t if q is None else round(round(t / q) * q, 9)


def _phase(rng, upper, cycle):
    """Random start offset so that every one of the counted cycles fits."""
    if upper < 0:
        return None
    return float(rng.uniform(0.0, min(upper, cycle)))


def _cycle_events(n, cycle, phase, parts, q):
    """``parts`` is a list of (label, start_offset, duration) within a cycle."""
    out = []
    for k in range(n):
        t0 = phase + k * cycle
        for label, off, dur in parts:
            on = _snap(t0 + off, q)
            out.append(SoundEvent(label, on, _snap(t0 + off + dur, q)))
    return out


def _heart_events(spec, rng):
    n = int(math.floor(spec.duration * spec.heart_rate / 60.0 + 1e-9))
    if n == 0:
        return []
    cycle = 60.0 / spec.heart_rate
    sys = spec.systole_fraction * cycle
    q = spec.quantum or 0.0
    # the last S2 must end inside the clip, snapping may move it by q/2
    phase = _phase(rng, spec.duration - (n - 1) * cycle - sys - spec.s2_duration - q, cycle)
    if phase is None:
        raise InfeasibleSpec(f"{n} cardiac cycles of {cycle:.3f} s do not fit {spec.duration} s")
    return _cycle_events(n, cycle, phase, [("S1", 0.0, spec.s1_duration), ("S2", sys, spec.s2_duration)], spec.quantum)


def _breath_events(spec, rng):
    n = int(math.floor(spec.duration * spec.respiratory_rate / 60.0 + 1e-9))
    if n == 0:
        return []
    cycle = 60.0 / spec.respiratory_rate
    insp = spec.insp_fraction * cycle
    pause = spec.pause_fraction * cycle
    exp = spec.exp_fraction * cycle
    q = spec.quantum or 0.0
    phase = _phase(rng, spec.duration - (n - 1) * cycle - insp - pause - exp - q, cycle)
    if phase is None:
        raise InfeasibleSpec(f"{n} breaths of {cycle:.3f} s do not fit {spec.duration} s")
    return _cycle_events(n, cycle, phase, [("Inspiration", 0.0, insp), ("Expiration", insp + pause, exp)], spec.quantum)


def _span(ev, fs, n):
    a = max(0, int(round(ev.onset * fs)))
    b = min(n, int(round(ev.offset * fs)))
    return a, b


def _burst(length, hz, fs, rng):
    t = np.arange(length) / fs
    env = tukey(length, 0.4) * np.exp(-t / (0.8 * length / fs))
    phase = rng.uniform(0, 2 * np.pi)
    return env * (np.sin(2 * np.pi * hz * t + phase) + 0.3 * np.sin(4 * np.pi * hz * t + phase))


def _band_noise(length, band, fs, rng):
    sos = butter(4, band, btype="bandpass", fs=fs, output="sos")
    x = sosfilt(sos, rng.standard_normal(length + 512))[512:]
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


def synth_clip(spec: SynthSpec) -> tuple[AudioClip, EventList]:
    """Render a clip and its exact ground-truth events.

    Heart cycles number ``floor(duration * HR / 60)`` and breaths
    ``floor(duration * RR / 60)``; a random phase places them so all fit.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    fs = spec.sample_rate
    n = int(round(spec.duration * fs))
    x = np.zeros(n)
    heart = _heart_events(spec, rng)
    breaths = _breath_events(spec, rng)
    extra = []

    for ev in heart:
        a, b = _span(ev, fs, n)
        hz = (spec.s1_hz if ev.label == "S1" else spec.s2_hz) * rng.uniform(0.93, 1.07)
        x[a:b] += spec.heart_gain * rng.uniform(0.85, 1.0) * _burst(b - a, hz, fs, rng)

    for ev in breaths:
        a, b = _span(ev, fs, n)
        band = spec.insp_band if ev.label == "Inspiration" else spec.exp_band
        level = 0.35 if ev.label == "Inspiration" else 0.25
        x[a:b] += spec.lung_gain * level * tukey(b - a, 0.3) * _band_noise(b - a, band, fs, rng)
        if spec.wheeze_hz and ev.label == "Expiration":
            t = np.arange(b - a) / fs
            x[a:b] += spec.lung_gain * 0.2 * tukey(b - a, 0.3) * np.sin(2 * np.pi * spec.wheeze_hz * t)
            extra.append(SoundEvent("Wheeze", ev.onset, ev.offset))
        if spec.crackle_density > 0 and ev.label == "Inspiration":
            length = 0.016
            count = rng.poisson(spec.crackle_density * ev.duration)
            starts = np.sort(rng.uniform(ev.onset, ev.offset - length, size=count))
            last = -np.inf
            for s in starts:
                on = _snap(s, spec.quantum)
                off = _snap(s + length, spec.quantum)
                if on < last or off > ev.offset:
                    continue  # keep crackle events disjoint
                ca, cb = _span(SoundEvent("Crackle", on, off), fs, n)
                x[ca:cb] += spec.lung_gain * 0.6 * _burst(cb - ca, 600.0, fs, rng)
                extra.append(SoundEvent("Crackle", on, off))
                last = off

    x += 10.0 ** (spec.noise_db / 20.0) * rng.standard_normal(n)
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return AudioClip(x, fs), EventList(heart + breaths + extra, spec.duration)
