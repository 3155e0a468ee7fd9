"""On-disk layout for generated mixtures: ``<id>.wav`` plus ``<id>.json`` label sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .corpus import read_wav, write_wav
from .mixture import LabeledMixture, MixtureSpec


def sidecar_dict(mix: LabeledMixture) -> dict:
    return {
        "frame_hop": mix.frame_hop,
        "labels": mix.labels.astype(int).tolist(),
        "loss_mask": mix.loss_mask.astype(int).tolist(),
        "onset_frame": mix.onset_frame,
        "spec": mix.spec.to_dict(),
        "speakers": mix.speakers,
        "volumes": mix.volumes,
        "intervals": [[list(iv) for iv in sched] for sched in mix.intervals],
    }


def save_mixture(mix: LabeledMixture, out_dir, name: str) -> Path:
    """Write WAV (16-bit PCM) and JSON sidecar; returns the WAV path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wav = out_dir / f"{name}.wav"
    peak = float(np.max(np.abs(mix.waveform))) if mix.waveform.size else 0.0
    gain = 0.99 / peak if peak > 0.99 else 1.0
    write_wav(wav, mix.waveform * gain, mix.spec.sample_rate)
    meta = sidecar_dict(mix)
    meta["gain"] = gain
    (out_dir / f"{name}.json").write_text(json.dumps(meta))
    return wav


def load_sidecar(path) -> dict:
    d = json.loads(Path(path).read_text())
    d["labels"] = np.asarray(d["labels"], dtype=np.uint8).reshape(-1, 2)
    d["loss_mask"] = np.asarray(d["loss_mask"], dtype=np.uint8).reshape(-1, 2)
    return d


def load_mixture(wav_path) -> LabeledMixture:
    wav_path = Path(wav_path)
    meta = load_sidecar(wav_path.with_suffix(".json"))
    spec = MixtureSpec.from_dict(meta["spec"])
    return LabeledMixture(
        waveform=read_wav(wav_path, spec.sample_rate), labels=meta["labels"], loss_mask=meta["loss_mask"],
        frame_hop=meta["frame_hop"], onset_frame=meta["onset_frame"], spec=spec,
        intervals=[[tuple(iv) for iv in s] for s in meta["intervals"]],
        speakers=meta["speakers"], volumes=meta["volumes"],
    )


def list_mixtures(data_dir) -> list[Path]:
    return sorted(p for p in Path(data_dir).glob("*.wav") if p.with_suffix(".json").exists())
