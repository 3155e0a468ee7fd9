"""Log-Mel front end: STFT, Mel filterbank, mean normalization, subsample + splice.

Two splice layouts exist. The offline layout centres each kept frame in a
symmetric window of raw frames ``[i-3 .. i+3]``. The causal layout uses only
``[i-6 .. i]`` so a streaming consumer never waits for future audio; it is
paired with running-mean normalization so every output frame depends only on
audio received so far.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 8000
    win_len: float = 0.025
    hop: float = 0.010
    n_mels: int = 23
    fft_size: int = 256
    subsample: int = 3
    splice_context: int = 3
    log_floor: float = 1e-8
    mel_scale: str = "htk"

    def __post_init__(self):
        if self.win_samples > self.fft_size:
            raise ValueError(f"window of {self.win_samples} samples exceeds fft_size {self.fft_size}")
        if self.hop_samples < 1 or self.subsample < 1 or self.splice_context < 0:
            raise ValueError("hop, subsample and splice_context must be positive")
        if self.mel_scale not in ("htk", "slaney"):
            raise ValueError(f"unknown mel_scale {self.mel_scale!r}")

    @property
    def win_samples(self) -> int:
        return int(round(self.win_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def splice_width(self) -> int:
        return 2 * self.splice_context + 1

    @property
    def feature_dim(self) -> int:
        return self.n_mels * self.splice_width

    @property
    def frame_hop(self) -> float:
        """Seconds between consecutive spliced (model-rate) frames."""
        return self.hop * self.subsample

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplicedFeatures:
    frames: np.ndarray  # (T, n_mels * splice_width)
    frame_hop: float

    def __len__(self):
        return self.frames.shape[0]

    def to_json(self) -> str:
        T, dim = self.frames.shape
        return json.dumps({"T": T, "dim": dim, "frame_hop": self.frame_hop,
                           "frames": self.frames.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "SplicedFeatures":
        d = json.loads(text)
        frames = np.asarray(d["frames"], dtype=np.float64).reshape(d["T"], d["dim"])
        return cls(frames, d["frame_hop"])


def raw_frame_count(n_samples: int, config: FeatureConfig) -> int:
    if n_samples < config.win_samples:
        return 0
    return 1 + (n_samples - config.win_samples) // config.hop_samples


def spliced_frame_count(n_samples: int, config: FeatureConfig) -> int:
    return math.ceil(raw_frame_count(n_samples, config) / config.subsample)


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(waveform, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Hann-windowed STFT, shape (T_raw, fft_size // 2 + 1)."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a mono waveform")
    win, hop = config.win_samples, config.hop_samples
    if x.size < win:
        raise ValueError(f"waveform of {x.size} samples is shorter than one window ({win})")
    n = raw_frame_count(x.size, config)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n]
    return np.fft.rfft(frames * hann(win), n=config.fft_size, axis=1)


def hz_to_mel(f, scale: str = "htk"):
    f = np.asarray(f, dtype=np.float64)
    if scale == "htk":
        return 2595.0 * np.log10(1.0 + f / 700.0)
    # Slaney: linear below 1 kHz, logarithmic above
    lin = f / (200.0 / 3)
    log_part = 15.0 + np.log(np.maximum(f, 1e-10) / 1000.0) / (np.log(6.4) / 27.0)
    return np.where(f < 1000.0, lin, log_part)


def mel_to_hz(m, scale: str = "htk"):
    m = np.asarray(m, dtype=np.float64)
    if scale == "htk":
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    lin = m * (200.0 / 3)
    log_part = 1000.0 * np.exp((m - 15.0) * (np.log(6.4) / 27.0))
    return np.where(m < 15.0, lin, log_part)


def mel_filterbank(config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Triangular filters over 0..Nyquist, shape (n_bins, n_mels)."""
    nyquist = config.sample_rate / 2
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0, config.mel_scale),
                                  hz_to_mel(nyquist, config.mel_scale),
                                  config.n_mels + 2), config.mel_scale)
    freqs = np.arange(config.n_bins) * config.sample_rate / config.fft_size
    lo, mid, hi = edges[:-2], edges[1:-1], edges[2:]
    rising = (freqs[:, None] - lo) / (mid - lo)
    falling = (hi - freqs[:, None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def cumulative_mean(x: np.ndarray) -> np.ndarray:
    """Per-row running mean over rows 0..t, summed in frame order."""
    counts = np.arange(1, x.shape[0] + 1, dtype=np.float64)[:, None]
    return np.cumsum(x, axis=0) / counts


def log_mel(spectrogram, config: FeatureConfig = FeatureConfig(), normalize: str | None = "utterance"):
    """Log Mel energies from a complex STFT, shape (T_raw, n_mels).

    ``normalize`` selects mean subtraction: ``"utterance"`` (whole-clip mean),
    ``"running"`` (mean over frames 0..t, usable online) or ``None``.
    """
    power = np.abs(spectrogram) ** 2
    feats = np.log(power @ mel_filterbank(config) + config.log_floor)
    if normalize == "utterance":
        feats = feats - feats.mean(axis=0, keepdims=True)
    elif normalize == "running":
        feats = feats - cumulative_mean(feats)
    elif normalize is not None:
        raise ValueError(f"unknown normalization {normalize!r}")
    return feats


def splice_indices(n_raw: int, config: FeatureConfig, causal: bool = False) -> np.ndarray:
    """Raw-frame index matrix (T, splice_width) with edge replication."""
    kept = np.arange(0, n_raw, config.subsample)
    width = config.splice_width
    if causal:
        offsets = np.arange(-(width - 1), 1)
    else:
        offsets = np.arange(-config.splice_context, config.splice_context + 1)
    return np.clip(kept[:, None] + offsets, 0, n_raw - 1)


def subsample_splice(logmel, config: FeatureConfig = FeatureConfig(), causal: bool = False) -> SplicedFeatures:
    logmel = np.asarray(logmel)
    if logmel.ndim != 2 or logmel.shape[0] < 1:
        raise ValueError("subsample_splice needs a non-empty (T_raw, n_mels) matrix")
    idx = splice_indices(logmel.shape[0], config, causal)
    frames = logmel[idx].reshape(idx.shape[0], -1)
    return SplicedFeatures(frames, config.frame_hop)


def extract(waveform, config: FeatureConfig = FeatureConfig(), causal: bool = False) -> SplicedFeatures:
    """Waveform to model input. ``causal`` selects running-mean + past-only splice."""
    spec = stft(waveform, config)
    feats = log_mel(spec, config, normalize="running" if causal else "utterance")
    return subsample_splice(feats, config, causal=causal)


class OnlineFeatureExtractor:
    """Incremental counterpart of ``extract(..., causal=True)``.

    Feed samples in arbitrary chunk sizes; each kept raw frame yields one
    spliced vector as soon as its analysis window is complete.
    """

    def __init__(self, config: FeatureConfig = FeatureConfig()):
        self.config = config
        self._fbank = mel_filterbank(config)
        self._window = hann(config.win_samples)
        self._buffer = np.zeros(0)
        self._running_sum = np.zeros(config.n_mels)
        self._history: list[np.ndarray] = []
        self.n_raw = 0

    def push(self, samples) -> list[np.ndarray]:
        cfg = self.config
        win, hop = cfg.win_samples, cfg.hop_samples
        self._buffer = np.concatenate([self._buffer, np.asarray(samples, dtype=np.float64)])
        out = []
        while self._buffer.size >= win:
            frame = self._buffer[:win] * self._window
            self._buffer = self._buffer[hop:]
            power = np.abs(np.fft.rfft(frame, n=cfg.fft_size)) ** 2
            feat = np.log(power @ self._fbank + cfg.log_floor)
            self._running_sum = self._running_sum + feat
            self.n_raw += 1
            self._history.append(feat - self._running_sum / self.n_raw)
            if len(self._history) > cfg.splice_width:
                self._history.pop(0)
            if (self.n_raw - 1) % cfg.subsample == 0:
                pad = cfg.splice_width - len(self._history)
                ctx = [self._history[0]] * pad + self._history
                out.append(np.concatenate(ctx))
        return out
