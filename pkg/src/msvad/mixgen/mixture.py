"""Mixture synthesis and frame-label derivation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..features import FeatureConfig, spliced_frame_count
from .corpus import UtteranceProvider
from .effects import NoiseSpec, ReverbSpec, add_noise, apply_reverb, noise_source
from .schedule import TURN_CONFIGS, Interval, TurnConfig, get_turn_config, sample_schedule


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    duration: float = 15.0
    n_speakers: int = 2
    main_index: int = 0
    turn_config: str | TurnConfig | tuple = "B2"
    volume_range: tuple[float, float] = (0.2, 0.8)
    noise: NoiseSpec | None = None
    reverb: ReverbSpec | None = None
    sample_rate: int = 8000
    rng_seed: int = 0
    energy_floor_db: float = 40.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 2 <= self.n_speakers <= 4:
            raise ValueError(f"n_speakers must be in [2, 4], got {self.n_speakers}")
        if not 0 <= self.main_index < self.n_speakers:
            raise ValueError("main_index must be < n_speakers")
        lo, hi = self.volume_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"volume_range must lie in (0, 1], got {self.volume_range}")
        self.background_configs()

    def background_configs(self) -> list[TurnConfig]:
        n_bg = self.n_speakers - 1
        tc = self.turn_config
        if isinstance(tc, (str, TurnConfig)):
            return [get_turn_config(tc)] * n_bg
        if len(tc) != n_bg:
            raise ValueError(f"need {n_bg} background turn configs, got {len(tc)}")
        return [get_turn_config(c) for c in tc]

    def to_dict(self) -> dict:
        def conf(c):
            return c if isinstance(c, str) else c.name

        tc = self.turn_config
        return {
            "duration": self.duration, "n_speakers": self.n_speakers, "main_index": self.main_index,
            "turn_config": conf(tc) if isinstance(tc, (str, TurnConfig)) else [conf(c) for c in tc],
            "volume_range": list(self.volume_range),
            "noise": None if self.noise is None else {
                "kind": self.noise.kind, "path": self.noise.path,
                "snr_db": self.noise.snr_db if np.isscalar(self.noise.snr_db) else list(self.noise.snr_db)},
            "reverb": None if self.reverb is None else {"decay": self.reverb.decay, "taps": self.reverb.taps},
            "sample_rate": self.sample_rate, "rng_seed": self.rng_seed,
            "energy_floor_db": self.energy_floor_db,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        d = dict(d)
        tc = d.get("turn_config", "B2")
        d["turn_config"] = tc if isinstance(tc, str) else tuple(tc)
        d["volume_range"] = tuple(d.get("volume_range", (0.2, 0.8)))
        if d.get("noise") is not None:
            n = dict(d["noise"])
            if not np.isscalar(n.get("snr_db", 0.0)):
                n["snr_db"] = tuple(n["snr_db"])
            d["noise"] = NoiseSpec(**n)
        if d.get("reverb") is not None:
            d["reverb"] = ReverbSpec(**d["reverb"])
        return cls(**d)


@dataclass
class LabeledMixture:
    waveform: np.ndarray
    labels: np.ndarray  # (T, 2) uint8; column 0 main, column 1 background union
    loss_mask: np.ndarray  # (T, 2) uint8
    frame_hop: float
    onset_frame: int
    spec: MixtureSpec
    sources: list[np.ndarray] = field(default_factory=list)  # dry per-speaker streams
    intervals: list[list[Interval]] = field(default_factory=list)
    speakers: list[str] = field(default_factory=list)
    volumes: list[float] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.labels.shape[0]

    def causal(self) -> "LabeledMixture":
        """Copy with causal-aware targets (pre-onset background presented as main)."""
        labels, mask = apply_causal_relabel(self.labels, self.loss_mask, self.onset_frame)
        return replace(self, labels=labels, loss_mask=mask)


def frame_samples(frame_hop: float, sample_rate: int) -> int:
    return int(round(frame_hop * sample_rate))


def derive_frame_labels(clean_streams, main_index: int, frame_hop: float = 0.03,
                        energy_floor_db: float = 40.0, sample_rate: int = 8000,
                        n_frames: int | None = None, intervals=None) -> np.ndarray:
    """Binary (T, 2) activity from dry per-speaker streams.

    Frame ``j`` spans samples ``[j*hop, (j+1)*hop)``. A speaker is active in a
    frame when the frame touches one of its scheduled intervals and the
    frame's RMS is above ``energy_floor_db`` below the RMS of that speaker's
    speech (measured over its intervals, or over its non-zero samples when no
    intervals are given). Column 1 ORs all non-main speakers.
    """
    streams = [np.asarray(s, dtype=np.float64) for s in clean_streams]
    if not streams:
        raise ValueError("no streams")
    n = streams[0].size
    if any(s.size != n for s in streams):
        raise ValueError("streams must be aligned and of equal length")
    hop = frame_samples(frame_hop, sample_rate)
    if n_frames is None:
        n_frames = math.ceil(n / hop)
    padded = n_frames * hop
    labels = np.zeros((n_frames, 2), dtype=np.uint8)
    gate = 10.0 ** (-energy_floor_db / 20.0)
    for k, s in enumerate(streams):
        if padded > n:
            s = np.concatenate([s, np.zeros(padded - n)])
        s = s[:padded]
        if intervals is not None:
            support = np.zeros(padded, dtype=bool)
            for a, b in intervals[k]:
                support[int(round(a * sample_rate)):int(round(b * sample_rate))] = True
        else:
            support = s != 0
        if not support.any():
            continue
        ref = np.sqrt(np.mean(s[support] ** 2))
        if ref == 0:
            continue
        frames = s.reshape(n_frames, hop)
        counts = np.clip(n - np.arange(n_frames) * hop, 1, hop)
        rms = np.sqrt((frames ** 2).sum(axis=1) / counts)
        active = (rms > ref * gate) & support.reshape(n_frames, hop).any(axis=1)
        col = 0 if k == main_index else 1
        labels[:, col] |= active.astype(np.uint8)
    return labels


def main_onset(labels: np.ndarray) -> int:
    """First frame where the main speaker is active (T if never)."""
    hits = np.flatnonzero(labels[:, 0])
    return int(hits[0]) if hits.size else int(labels.shape[0])


def apply_causal_relabel(labels, loss_mask, main_onset_frame: int):
    """Before the main onset, background activity becomes the main target and
    the background channel is dropped from the loss; later frames are untouched."""
    labels = np.array(labels, copy=True)
    mask = np.array(loss_mask, copy=True)
    t0 = int(main_onset_frame)
    if t0 > 0:
        labels[:t0, 0] = labels[:t0, 1]
        mask[:t0, 1] = 0
    return labels, mask


class _Reader:
    """Sequential sample cursor over one speaker's utterance pool."""

    def __init__(self, corpus: UtteranceProvider, speaker: str, start: int):
        self.corpus, self.speaker = corpus, speaker
        self.index = start
        self.buf = np.zeros(0, dtype=np.float32)

    def take(self, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            if self.buf.size == 0:
                self.buf = self.corpus.utterance(self.speaker, self.index)
                self.index += 1
                if self.buf.size == 0:
                    raise CorpusError(f"empty utterance for speaker {self.speaker}")
            piece, self.buf = self.buf[:n], self.buf[n:]
            parts.append(piece)
            n -= piece.size
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.float32)


def synthesize_mixture(spec: MixtureSpec, corpus: UtteranceProvider, rng: np.random.Generator | None = None,
                       keep_sources: bool = True) -> LabeledMixture:
    """Mix one main speaker (continuous after onset) with scheduled background speakers."""
    if rng is None:
        rng = np.random.default_rng(spec.rng_seed)
    if corpus.sample_rate != spec.sample_rate:
        raise CorpusError(f"corpus rate {corpus.sample_rate} != mixture rate {spec.sample_rate}")
    ids = corpus.speakers()
    if len(ids) < spec.n_speakers:
        raise CorpusError(f"need {spec.n_speakers} speakers, corpus has {len(ids)}")
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    fcfg = FeatureConfig(sample_rate=sr)
    chosen = [ids[i] for i in rng.choice(len(ids), spec.n_speakers, replace=False)]
    bg_configs = iter(spec.background_configs())

    streams, schedules, volumes = [], [], []
    for k, speaker in enumerate(chosen):
        is_main = k == spec.main_index
        config = TURN_CONFIGS["M0"] if is_main else next(bg_configs)
        schedule = sample_schedule(config, spec.duration, rng)
        volume = 1.0 if is_main else float(rng.uniform(*spec.volume_range))
        reader = _Reader(corpus, speaker, int(rng.integers(corpus.n_utterances(speaker))))
        stream = np.zeros(n)
        for a, b in schedule:
            i0, i1 = int(round(a * sr)), min(int(round(b * sr)), n)
            if i1 > i0:
                stream[i0:i1] = reader.take(i1 - i0)
        streams.append(stream * volume)
        schedules.append(schedule)
        volumes.append(volume)

    labels = derive_frame_labels(streams, spec.main_index, fcfg.frame_hop, spec.energy_floor_db, sr,
                                 n_frames=spliced_frame_count(n, fcfg), intervals=schedules)
    wet = streams
    if spec.reverb is not None:
        wet = [apply_reverb(s, spec.reverb, rng, sr) if np.any(s) else s for s in streams]
    mix = np.sum(wet, axis=0)
    if spec.noise is not None and np.any(mix):
        mix = add_noise(mix, noise_source(spec.noise), spec.noise.draw_snr(rng), rng)
    return LabeledMixture(
        waveform=mix, labels=labels, loss_mask=np.ones_like(labels), frame_hop=fcfg.frame_hop,
        onset_frame=main_onset(labels), spec=spec,
        sources=streams if keep_sources else [], intervals=schedules, speakers=chosen, volumes=volumes,
    )


def draw_specs(count: int, seed: int, n_speakers=(2, 4), turn_config="B2",
               volume_range=(0.2, 0.8), **fixed) -> list[MixtureSpec]:
    """Per-sample specs from a template; ranges/lists are sampled per sample.

    ``n_speakers`` may be an int or an inclusive (lo, hi) range;
    ``turn_config`` a name or a list of names drawn per background speaker.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        ns = n_speakers if isinstance(n_speakers, int) else int(rng.integers(n_speakers[0], n_speakers[1] + 1))
        if isinstance(turn_config, str):
            tc = turn_config
        else:
            tc = tuple(str(rng.choice(turn_config)) for _ in range(ns - 1))
        specs.append(MixtureSpec(n_speakers=ns, main_index=int(rng.integers(ns)), turn_config=tc,
                                 volume_range=tuple(volume_range),
                                 rng_seed=int(rng.integers(2 ** 63)), **fixed))
    return specs
