"""Utterance providers: a procedural multi-speaker voice corpus and a WAV manifest reader.

The synthetic voices are source-filter approximations: a harmonic source at
the speaker's pitch shaped by vowel formants scaled by the speaker's vocal
tract factor, chopped into syllables and words with silent pauses in between.
They carry exactly the cues main-speaker detection needs (identity via pitch
and timbre, loudness, temporal continuity) without a speech corpus download.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RMS = 0.1

# (F1, F2, F3) in Hz for a handful of vowels
VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [300, 870, 2240],
    [530, 1840, 2480],
    [570, 840, 2410],
    [660, 1720, 2410],
    [440, 1020, 2240],
    [390, 1990, 2550],
], dtype=np.float64)
FORMANT_BW = np.array([90.0, 110.0, 170.0])
FORMANT_GAIN = np.array([1.0, 0.6, 0.3])


class UtteranceProvider(Protocol):
    sample_rate: int

    def speakers(self) -> list[str]: ...

    def n_utterances(self, speaker: str) -> int: ...

    def utterance(self, speaker: str, index: int) -> np.ndarray: ...


@dataclass(frozen=True)
class Voice:
    f0: float
    tract: float
    rate: float
    tilt: float
    breath: float


def _seed(*parts) -> int:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def normalize_rms(x: np.ndarray, target: float = TARGET_RMS) -> np.ndarray:
    rms = np.sqrt(np.mean(x ** 2))
    return x * (target / rms) if rms > 0 else x


class SyntheticCorpus:
    """Deterministic procedural speakers; utterance ``(speaker, i)`` is a pure function of the seed.

    Generated utterances are cached (bounded LRU), so one instance can be
    shared read-only between workers.
    """

    def __init__(self, n_speakers: int = 40, utterances_per_speaker: int = 12, seed: int = 0,
                 sample_rate: int = 8000, utterance_dur: tuple[float, float] = (7.0, 10.0)):
        if n_speakers < 1:
            raise ValueError("corpus needs at least one speaker")
        self.sample_rate = sample_rate
        self.seed = seed
        self.utterance_dur = utterance_dur
        self._n_utts = utterances_per_speaker
        self._ids = [f"syn{seed}-{k:03d}" for k in range(n_speakers)]
        self._voices = {}
        for k, sid in enumerate(self._ids):
            r = np.random.default_rng(_seed("voice", seed, k))
            female = r.random() < 0.5
            self._voices[sid] = Voice(
                f0=float(r.uniform(165, 255) if female else r.uniform(85, 150)),
                tract=float(r.uniform(1.0, 1.2) if female else r.uniform(0.85, 1.02)),
                rate=float(r.uniform(0.8, 1.25)),
                tilt=float(r.uniform(0.6, 1.4)),
                breath=float(r.uniform(0.01, 0.06)),
            )
        self._cached = lru_cache(maxsize=n_speakers * utterances_per_speaker)(self._generate)

    # the cache is per process; workers rebuild it empty
    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if k != "_cached"}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._cached = lru_cache(maxsize=len(self._ids) * self._n_utts)(self._generate)

    def speakers(self) -> list[str]:
        return list(self._ids)

    def voice(self, speaker: str) -> Voice:
        return self._voices[speaker]

    def n_utterances(self, speaker: str) -> int:
        return self._n_utts

    def utterance(self, speaker: str, index: int) -> np.ndarray:
        if speaker not in self._voices:
            raise KeyError(speaker)
        return self._cached(speaker, index % self._n_utts)

    def _generate(self, speaker: str, index: int) -> np.ndarray:
        voice = self._voices[speaker]
        rng = np.random.default_rng(_seed("utt", self.seed, speaker, index))
        sr = self.sample_rate
        n_total = int(rng.uniform(*self.utterance_dur) * sr)
        pieces = []
        n = 0
        while n < n_total:
            for _ in range(int(rng.integers(1, 5))):
                syl = synth_syllable(voice, rng, sr)
                pieces.append(syl)
                n += syl.size
            pause = rng.uniform(0.3, 0.6) if rng.random() < 0.15 else rng.uniform(0.04, 0.2)
            gap = int(pause * sr / voice.rate)
            pieces.append(np.zeros(gap))
            n += gap
        out = np.concatenate(pieces)[:n_total]
        return normalize_rms(out).astype(np.float32)


def synth_syllable(voice: Voice, rng: np.random.Generator, sr: int) -> np.ndarray:
    dur = rng.uniform(0.12, 0.3) / voice.rate
    n = max(int(dur * sr), 16)
    t = np.arange(n) / sr
    # pitch contour: random level, slight declination and vibrato
    f0 = voice.f0 * rng.uniform(0.85, 1.15) * (1.0 - 0.08 * t / dur) \
        * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    f_mean = float(f0.mean())
    k = np.arange(1, int(0.45 * sr / f_mean) + 1)
    formants = VOWELS[rng.integers(len(VOWELS))] * voice.tract
    fk = k * f_mean
    amp = (FORMANT_GAIN * np.exp(-0.5 * ((fk[:, None] - formants) / FORMANT_BW) ** 2)).sum(axis=1)
    amp = (amp + 0.02) * k ** (-0.5 * voice.tilt)
    wave = (amp[:, None] * np.sin(np.outer(k, phase) + rng.uniform(0, 2 * np.pi, k.size)[:, None])).sum(axis=0)
    wave /= np.sqrt(np.mean(wave ** 2)) + 1e-12
    wave += voice.breath * 10 * rng.standard_normal(n) * np.abs(np.sin(phase / 2))
    if rng.random() < 0.4:
        # fricative onset
        m = min(int(rng.uniform(0.02, 0.06) * sr), n)
        burst = np.diff(rng.standard_normal(m + 1)) * 0.6
        wave[:m] = wave[:m] * np.linspace(0, 1, m) + burst
    attack = min(int(0.02 * sr), n // 2)
    env = np.ones(n)
    env[:attack] = np.linspace(0, 1, attack)
    env[n - attack:] = np.linspace(1, 0, attack)
    return wave * env * rng.uniform(0.6, 1.0)


class WavCorpus:
    """Utterances listed in a manifest: one ``<speaker-id> <path>`` pair per line.

    Relative paths resolve against the manifest's directory. Audio is mixed
    down to mono, resampled to ``sample_rate`` and RMS-normalized.
    """

    def __init__(self, manifest, sample_rate: int = 8000):
        self.sample_rate = sample_rate
        manifest = Path(manifest)
        self._files: dict[str, list[Path]] = {}
        for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise ValueError(f"{manifest}:{lineno}: expected '<speaker> <path>'")
            path = Path(parts[1])
            if not path.is_absolute():
                path = manifest.parent / path
            self._files.setdefault(parts[0], []).append(path)
        self._cached = lru_cache(maxsize=256)(self._load)

    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if k != "_cached"}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._cached = lru_cache(maxsize=256)(self._load)

    def speakers(self) -> list[str]:
        return sorted(self._files)

    def n_utterances(self, speaker: str) -> int:
        return len(self._files[speaker])

    def utterance(self, speaker: str, index: int) -> np.ndarray:
        files = self._files[speaker]
        return self._cached(str(files[index % len(files)]))

    def _load(self, path: str) -> np.ndarray:
        return normalize_rms(read_wav(path, self.sample_rate)).astype(np.float32)


def read_wav(path, sample_rate: int | None = None) -> np.ndarray:
    """Read a WAV as float in [-1, 1], mono, optionally resampled."""
    sr, data = wavfile.read(path)
    if data.dtype.kind == "i":
        data = data.astype(np.float64) / np.iinfo(data.dtype).max
    elif data.dtype.kind == "u":
        data = (data.astype(np.float64) - 128) / 128
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if sample_rate is not None and sr != sample_rate:
        g = np.gcd(sr, sample_rate)
        data = resample_poly(data, sample_rate // g, sr // g)
    return data


def write_wav(path, waveform, sample_rate: int) -> None:
    """Write 16-bit PCM; values are clipped to [-1, 1]."""
    pcm = np.round(np.clip(np.asarray(waveform, dtype=np.float64), -1, 1) * 32767).astype(np.int16)
    wavfile.write(path, sample_rate, pcm)
