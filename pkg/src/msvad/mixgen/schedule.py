"""Speaking/silence turn configurations and voice-interval sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Interval = tuple[float, float]


@dataclass(frozen=True)
class TurnConfig:
    name: str
    start_delay: tuple[float, float]
    voice_dur: tuple[float, float]
    silence_dur: tuple[float, float] | None = None

    def __post_init__(self):
        for label, rng in (("start_delay", self.start_delay), ("voice_dur", self.voice_dur),
                           ("silence_dur", self.silence_dur)):
            if rng is None:
                continue
            lo, hi = rng
            if lo < 0 or hi < lo:
                raise ValueError(f"{self.name}.{label}: invalid range {rng}")
        if self.voice_dur[1] <= 0:
            raise ValueError(f"{self.name}: voice_dur must allow positive lengths")

    @property
    def continuous(self) -> bool:
        return self.silence_dur is None

    @property
    def expected_voice_proportion(self) -> float | None:
        if self.silence_dur is None:
            return None
        v = sum(self.voice_dur) / 2
        s = sum(self.silence_dur) / 2
        return v / (v + s)


# Table of speaking patterns; M0 is continuous after onset.
TURN_CONFIGS: dict[str, TurnConfig] = {
    "M0": TurnConfig("M0", (0.0, 3.0), (7.0, 10.0), None),
    "B1": TurnConfig("B1", (0.0, 3.0), (1.0, 3.0), (0.0, 6.0)),
    "B2": TurnConfig("B2", (0.0, 3.0), (1.0, 4.0), (0.0, 5.0)),
    "B3": TurnConfig("B3", (0.0, 3.0), (1.0, 4.0), (0.0, 3.0)),
    "B4": TurnConfig("B4", (0.0, 3.0), (1.0, 4.0), (0.0, 1.0)),
}


def get_turn_config(config: str | TurnConfig) -> TurnConfig:
    if isinstance(config, TurnConfig):
        return config
    try:
        return TURN_CONFIGS[config]
    except KeyError:
        raise ValueError(f"unknown turn config {config!r}; expected one of {sorted(TURN_CONFIGS)}") from None


def sample_schedule(config: str | TurnConfig, duration: float, rng: np.random.Generator) -> list[Interval]:
    """Draw voice intervals within ``[0, duration]``.

    Draw order: start delay, then alternating voice length / silence length
    until the clip is exhausted. A continuous config draws one voice length
    (the first utterance) and then keeps speaking until the clip ends.
    Intervals separated by a zero-length silence are merged.
    """
    config = get_turn_config(config)
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    t = rng.uniform(*config.start_delay)
    if config.continuous:
        rng.uniform(*config.voice_dur)
        return [(t, duration)] if t < duration else []
    intervals: list[Interval] = []
    while t < duration:
        end = min(t + rng.uniform(*config.voice_dur), duration)
        if intervals and intervals[-1][1] == t:
            intervals[-1] = (intervals[-1][0], end)
        else:
            intervals.append((t, end))
        t = end
        if t >= duration:
            break
        t += rng.uniform(*config.silence_dur)
    return intervals


def cycle_totals(intervals: list[Interval]) -> tuple[float, float]:
    """(voice, voice + silence) summed over complete voice-then-silence cycles.

    A cycle is an interval together with the gap before the next interval, so
    the final interval (cut by the clip end) is left out. Pooling these sums
    over many schedules estimates the configured voice proportion without the
    bias from every schedule starting in a voice state.
    """
    voice = total = 0.0
    for (s0, e0), (s1, _) in zip(intervals, intervals[1:]):
        voice += e0 - s0
        total += s1 - s0
    return voice, total


def post_onset_fraction(intervals: list[Interval], duration: float) -> float:
    """Fraction of time from the first onset to ``duration`` covered by voice."""
    if not intervals:
        return 0.0
    span = duration - intervals[0][0]
    return sum(e - s for s, e in intervals) / span if span > 0 else 0.0
