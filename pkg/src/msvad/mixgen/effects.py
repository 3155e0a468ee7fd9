"""Reverberation and additive noise."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

NoiseSource = Callable[[int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class ReverbSpec:
    decay: float = 0.3  # seconds until taps fall 60 dB
    taps: int = 24

    def __post_init__(self):
        if not self.decay > 0:
            raise ValueError("reverb decay must be positive")
        if self.taps < 0:
            raise ValueError("reverb tap count must be non-negative")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"  # white | pink | file
    snr_db: float | tuple[float, float] = (10.0, 20.0)
    path: str | None = None  # WAV file or directory of WAVs for kind="file"

    def __post_init__(self):
        if self.kind not in ("white", "pink", "file"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("file noise needs a path")

    def draw_snr(self, rng: np.random.Generator) -> float:
        if np.isscalar(self.snr_db):
            return float(self.snr_db)
        return float(rng.uniform(*self.snr_db))


def impulse_response(spec: ReverbSpec, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    """Sparse synthetic room response: a direct-path unit tap plus decaying echoes."""
    length = max(int(spec.decay * sample_rate), 2)
    h = np.zeros(length)
    h[0] = 1.0
    if spec.taps:
        delays = rng.integers(1, length, spec.taps)
        amps = rng.uniform(-1.0, 1.0, spec.taps) * 10.0 ** (-3.0 * delays / length)
        np.add.at(h, delays, amps)
    return h


def apply_reverb(waveform, spec: ReverbSpec, rng: np.random.Generator,
                 sample_rate: int = 8000, response: np.ndarray | None = None) -> np.ndarray:
    """Convolve with a room response, truncate to input length, restore the input peak."""
    x = np.asarray(waveform, dtype=np.float64)
    h = impulse_response(spec, sample_rate, rng) if response is None else np.asarray(response, dtype=np.float64)
    if not np.any(x):
        return x.copy()
    y = fftconvolve(x, h)[: x.size]
    peak = np.max(np.abs(y))
    return y * (np.max(np.abs(x)) / peak) if peak > 0 else y


def white_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spectrum.size, dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spectrum / np.sqrt(f), n=n)


def file_noise(path) -> NoiseSource:
    """Noise drawn from a WAV file (or random file of a directory), looped and randomly offset."""
    from .corpus import read_wav

    path = Path(path)
    files = sorted(path.glob("*.wav")) if path.is_dir() else [path]
    if not files:
        raise ValueError(f"no WAV files under {path}")
    cache: dict[Path, np.ndarray] = {}

    def source(n: int, rng: np.random.Generator) -> np.ndarray:
        f = files[int(rng.integers(len(files)))]
        if f not in cache:
            cache[f] = read_wav(f, None)
        clip = cache[f]
        reps = -(-(n + clip.size) // clip.size)
        start = int(rng.integers(clip.size))
        return np.tile(clip, reps)[start:start + n]

    return source


def noise_source(spec: NoiseSpec) -> NoiseSource:
    if spec.kind == "white":
        return white_noise
    if spec.kind == "pink":
        return pink_noise
    return file_noise(spec.path)


def add_noise(waveform, source: NoiseSource | np.ndarray | None, snr_db: float,
              rng: np.random.Generator) -> np.ndarray:
    """Add noise scaled so that 10 log10(P_signal / P_noise) equals ``snr_db`` over the clip."""
    x = np.asarray(waveform, dtype=np.float64)
    if source is None or snr_db == np.inf:
        return x.copy()
    p_signal = np.mean(x ** 2)
    if p_signal == 0:
        raise ValueError("cannot set an SNR against a zero-power signal")
    if callable(source):
        noise = np.asarray(source(x.size, rng), dtype=np.float64)
    else:
        noise = np.asarray(source, dtype=np.float64)
        if noise.size < x.size:
            noise = np.tile(noise, -(-x.size // noise.size))
    noise = noise[: x.size]
    p_noise = np.mean(noise ** 2)
    if p_noise == 0:
        return x.copy()
    return x + noise * np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
