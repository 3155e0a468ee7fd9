"""Stream audio through a causal model frame by frame with key/value caches.

Run: python3 demos/streaming.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from msvad.features import extract
from msvad.mixgen import MixtureSpec, SyntheticCorpus, synthesize_mixture
from msvad.model import PRESETS, init_params, predict
from msvad.streaming import init_stream, push_samples
from msvad.training import save_params

cfg = replace(PRESETS["desk"], causal=True)
params = init_params(cfg, seed=0)
ckpt = Path(tempfile.mkdtemp()) / "causal.npz"
save_params(ckpt, params, cfg)

mix = synthesize_mixture(MixtureSpec(duration=6.0, rng_seed=2), SyntheticCorpus(n_speakers=6, seed=0))
state = init_stream(ckpt)
decisions = []
for start in range(0, mix.waveform.size, 800):  # 100 ms chunks
    decisions.extend(push_samples(state, mix.waveform[start:start + 800]))
print(f"{len(decisions)} frames streamed; first: {decisions[0].to_json()}")
print(f"cache size after {state.t} frames: {state.state_nbytes / 1024:.0f} KiB, "
      f"attention MACs {state.attention_macs:,}")

offline = predict(extract(mix.waveform, causal=True).frames.astype(np.float64), cfg,
                  {k: v.astype(np.float64) for k, v in params.items()})
streamed = np.array([[d.p_main, d.p_background] for d in decisions])
print(f"max |stream - offline causal| = {np.abs(streamed - offline).max():.1e}")
