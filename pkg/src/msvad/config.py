"""Run configuration: one JSON document covering features, model, training, mixtures and corpus.

Recognised layout (every section optional, unknown keys rejected)::

    {
      "seed": 0,
      "features": {<FeatureConfig fields>},
      "model":    {"preset": "desk", <ModelConfig fields override the preset>},
      "train":    {"preset": "desk", <TrainConfig fields>},
      "mixture":  {"duration": 15.0, "n_speakers": [2, 4], "turn_config": "B2",
                   "volume_range": [0.2, 0.8], "noise": {"kind": "white", "snr_db": [10, 20]},
                   "reverb": null, "energy_floor_db": 40.0},
      "corpus":   {"kind": "synthetic", "n_speakers": 40, "utterances_per_speaker": 12, "seed": 1}
                  | {"kind": "wav", "manifest": "speakers.txt"}
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .features import FeatureConfig
from .mixgen import NoiseSpec, ReverbSpec, SyntheticCorpus, WavCorpus, draw_specs
from .model import PRESETS, ModelConfig
from .training import TRAIN_PRESETS, TrainConfig


class ConfigError(ValueError):
    pass


def _reject_unknown(section: str, d: dict, allowed) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


@dataclass
class MixtureTemplate:
    duration: float = 15.0
    n_speakers: int | list[int] = field(default_factory=lambda: [2, 4])
    turn_config: str | list[str] = "B2"
    volume_range: list[float] = field(default_factory=lambda: [0.2, 0.8])
    noise: dict | None = field(default_factory=lambda: {"kind": "white", "snr_db": [10.0, 20.0]})
    reverb: dict | None = None
    energy_floor_db: float = 40.0

    def specs(self, count: int, seed: int, sample_rate: int = 8000):
        noise = None
        if self.noise is not None:
            n = dict(self.noise)
            if isinstance(n.get("snr_db"), list):
                n["snr_db"] = tuple(n["snr_db"])
            noise = NoiseSpec(**n)
        reverb = ReverbSpec(**self.reverb) if self.reverb is not None else None
        ns = self.n_speakers if isinstance(self.n_speakers, int) else tuple(self.n_speakers)
        return draw_specs(count, seed, n_speakers=ns, turn_config=self.turn_config,
                          volume_range=tuple(self.volume_range), duration=self.duration, noise=noise,
                          reverb=reverb, sample_rate=sample_rate, energy_floor_db=self.energy_floor_db)


@dataclass
class RunConfig:
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=lambda: PRESETS["desk"])
    train: TrainConfig = field(default_factory=lambda: TRAIN_PRESETS["desk"])
    mixture: MixtureTemplate = field(default_factory=MixtureTemplate)
    corpus: dict = field(default_factory=lambda: {"kind": "synthetic", "n_speakers": 40,
                                                  "utterances_per_speaker": 12, "seed": 1})

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        _reject_unknown("config", d, {f.name for f in fields(cls)})
        out = cls()
        if "seed" in d:
            out.seed = int(d["seed"])
        try:
            if "features" in d:
                _reject_unknown("features", d["features"], {f.name for f in fields(FeatureConfig)})
                out.features = FeatureConfig(**d["features"])
            if "model" in d:
                m = dict(d["model"])
                base = PRESETS[m.pop("preset", "desk")]
                _reject_unknown("model", m, {f.name for f in fields(ModelConfig)})
                out.model = replace(base, **m)
            if "train" in d:
                t = dict(d["train"])
                base = TRAIN_PRESETS[t.pop("preset", "desk")]
                _reject_unknown("train", t, {f.name for f in fields(TrainConfig)})
                out.train = replace(base, **t)
            if "mixture" in d:
                _reject_unknown("mixture", d["mixture"], {f.name for f in fields(MixtureTemplate)})
                out.mixture = MixtureTemplate(**d["mixture"])
            if "corpus" in d:
                c = dict(d["corpus"])
                kind = c.get("kind", "synthetic")
                allowed = {"kind", "n_speakers", "utterances_per_speaker", "seed", "utterance_dur"} \
                    if kind == "synthetic" else {"kind", "manifest"}
                _reject_unknown(f"corpus ({kind})", c, allowed)
                if kind not in ("synthetic", "wav"):
                    raise ConfigError(f"corpus: unknown kind {kind!r}")
                out.corpus = c
        except KeyError as exc:
            raise ConfigError(f"unknown preset {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        return out

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = cls.from_dict(data)
        if cfg.corpus.get("kind") == "wav":
            manifest = Path(cfg.corpus["manifest"])
            if not manifest.is_absolute():
                cfg.corpus = dict(cfg.corpus, manifest=str(path.parent / manifest))
        return cfg

    def to_dict(self) -> dict:
        return {"seed": self.seed, "features": self.features.to_dict(), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "mixture": asdict(self.mixture), "corpus": dict(self.corpus)}

    def build_corpus(self):
        c = dict(self.corpus)
        if c.pop("kind", "synthetic") == "wav":
            return WavCorpus(c["manifest"], self.features.sample_rate)
        if "utterance_dur" in c:
            c["utterance_dur"] = tuple(c["utterance_dur"])
        return SyntheticCorpus(sample_rate=self.features.sample_rate, **c)
