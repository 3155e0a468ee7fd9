"""From waveform to the 161-dim spliced log-Mel frames the model reads.

Run: python3 demos/features.py
"""

import numpy as np

from msvad.features import FeatureConfig, OnlineFeatureExtractor, extract, log_mel, stft

cfg = FeatureConfig()
print(f"{cfg.sample_rate} Hz audio, {cfg.win_samples}-sample window, {cfg.hop_samples}-sample hop, "
      f"{cfg.fft_size}-point FFT, {cfg.n_mels} Mel bands")

t = np.arange(3 * cfg.sample_rate) / cfg.sample_rate
x = 0.3 * np.sin(2 * np.pi * 440 * t) * (t > 1.0) + 0.01 * np.random.default_rng(0).standard_normal(t.size)

raw = log_mel(stft(x), cfg)
print(f"raw log-Mel: {raw.shape} (one row per 10 ms)")
print(f"loudest band before/after the tone starts: {raw[50].argmax()} / {raw[200].argmax()}")

offline = extract(x, cfg)
print(f"spliced, every 3rd frame kept: {offline.frames.shape}, hop {offline.frame_hop * 1000:.0f} ms")

# The causal front end splices only past frames and uses a running mean, so
# it can be computed online chunk by chunk with identical results.
online = OnlineFeatureExtractor(cfg)
frames = [f for i in range(0, x.size, 500) for f in online.push(x[i:i + 500])]
causal = extract(x, cfg, causal=True).frames
print(f"online vs offline causal: max difference {np.abs(np.array(frames) - causal).max():.1e}")
