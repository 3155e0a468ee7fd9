"""Synthetic multi-speaker mixtures with main/background frame labels."""

from .corpus import SyntheticCorpus, UtteranceProvider, WavCorpus, read_wav, write_wav
from .effects import NoiseSpec, ReverbSpec, add_noise, apply_reverb, impulse_response, pink_noise, white_noise
from .io import list_mixtures, load_mixture, load_sidecar, save_mixture
from .mixture import (
    CorpusError,
    LabeledMixture,
    MixtureSpec,
    apply_causal_relabel,
    derive_frame_labels,
    draw_specs,
    main_onset,
    synthesize_mixture,
)
from .schedule import TURN_CONFIGS, TurnConfig, cycle_totals, post_onset_fraction, sample_schedule

__all__ = [
    "TURN_CONFIGS", "CorpusError", "LabeledMixture", "MixtureSpec", "NoiseSpec", "ReverbSpec",
    "SyntheticCorpus", "TurnConfig", "UtteranceProvider", "WavCorpus", "add_noise", "apply_causal_relabel",
    "apply_reverb", "cycle_totals", "derive_frame_labels", "draw_specs", "impulse_response", "list_mixtures",
    "load_mixture", "load_sidecar", "main_onset", "pink_noise", "post_onset_fraction", "read_wav",
    "sample_schedule", "save_mixture", "synthesize_mixture", "white_noise", "write_wav",
]
