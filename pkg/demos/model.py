"""Forward pass of the attractor model, offline and causal.

Run: python3 demos/model.py
"""

from dataclasses import replace

import numpy as np

from msvad.model import PRESETS, init_params, param_shapes, predict

cfg = PRESETS["desk"]
n = sum(int(np.prod(s)) for s in param_shapes(cfg).values())
print(f"desk preset: D={cfg.d_model}, {cfg.n_layers} layers, {cfg.saa_heads} attractor heads "
      f"({cfg.attractor_mode}), {n:,} parameters")

params = init_params(cfg, seed=0, dtype=np.float64)
x = np.random.default_rng(0).standard_normal((40, cfg.input_dim))
probs = predict(x, cfg, params)
print(f"untrained output {probs.shape}: p_main mean {probs[:, 0].mean():.3f}, p_bg mean {probs[:, 1].mean():.3f}")

causal = replace(cfg, causal=True)
a = predict(x, causal, params)
y = x.copy()
y[20:] += 10.0
b = predict(y, causal, params)
print(f"causal model, frames 20+ perturbed: max change before frame 20 = {np.abs(a[:20] - b[:20]).max():.1e}, "
      f"after = {np.abs(a[20:] - b[20:]).max():.3f}")
