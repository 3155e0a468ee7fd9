import json

import pytest

from msvad.config import ConfigError, MixtureTemplate, RunConfig
from msvad.mixgen import SyntheticCorpus, WavCorpus
from msvad.model import PRESETS
from msvad.training import TRAIN_PRESETS


def test_defaults():
    cfg = RunConfig()
    assert cfg.model == PRESETS["desk"] and cfg.train == TRAIN_PRESETS["desk"]
    assert cfg.features.feature_dim == 161
    assert isinstance(cfg.build_corpus(), SyntheticCorpus)


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"model": {"d_modell": 8}},
    {"train": {"lr": 1}},
    {"features": {"hop_ms": 10}},
    {"mixture": {"durations": 3}},
    {"corpus": {"kind": "synthetic", "manifest": "x"}},
    {"corpus": {"kind": "tape"}},
    {"model": {"preset": "huge"}},
    {"model": {"d_model": 30}},
])
def test_bad_documents_rejected(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_preset_with_overrides():
    cfg = RunConfig.from_dict({"seed": 4, "model": {"preset": "tiny", "causal": True},
                               "train": {"preset": "full", "epochs": 2}})
    assert cfg.seed == 4 and cfg.model.d_model == PRESETS["tiny"].d_model and cfg.model.causal
    assert cfg.train.epochs == 2 and cfg.train.warmup_steps == TRAIN_PRESETS["full"].warmup_steps


def test_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seed": 2, "model": {"d_model": 16, "ffn_dim": 32},
                               "mixture": {"duration": 4.0, "turn_config": ["B1", "B3"]}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = RunConfig.load(path)
    assert back.to_dict() == cfg.to_dict()


def test_invalid_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(path)


def test_wav_manifest_resolved_relative_to_config(tmp_path):
    from msvad.mixgen import write_wav
    import numpy as np

    write_wav(tmp_path / "a.wav", np.zeros(800), 8000)
    write_wav(tmp_path / "b.wav", np.zeros(800), 8000)
    (tmp_path / "spk.txt").write_text("s1 a.wav\ns2 b.wav\n")
    (tmp_path / "c.json").write_text(json.dumps({"corpus": {"kind": "wav", "manifest": "spk.txt"}}))
    cfg = RunConfig.load(tmp_path / "c.json")
    assert cfg.corpus["manifest"] == str(tmp_path / "spk.txt")
    assert isinstance(cfg.build_corpus(), WavCorpus)


def test_mixture_template_specs():
    specs = MixtureTemplate(duration=4.0, n_speakers=3, noise=None).specs(5, seed=1)
    assert len(specs) == 5 and all(s.n_speakers == 3 and s.duration == 4.0 for s in specs)
    assert specs == MixtureTemplate(duration=4.0, n_speakers=3, noise=None).specs(5, seed=1)
