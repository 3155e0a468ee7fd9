"""Train the tiny model on a handful of synthetic mixtures and watch it overfit.

Run: python3 demos/training.py   (about half a minute)
"""

from dataclasses import replace

from msvad.mixgen import NoiseSpec, SyntheticCorpus, draw_specs, synthesize_mixture
from msvad.model import PRESETS
from msvad.training import TrainConfig, Trainer, evaluate, make_example, noam_lr

print("learning rate schedule (D=256, warmup 1e5):",
      ", ".join(f"{s:g}: {noam_lr(s, 256, 100_000):.2e}" for s in (1, 1e3, 1e5, 1e6)))

corpus = SyntheticCorpus(n_speakers=20, seed=3)
specs = draw_specs(8, seed=1, n_speakers=2, turn_config="B2", volume_range=(0.2, 0.8), duration=10.0,
                   noise=NoiseSpec("white", (10.0, 20.0)))
data = [make_example(synthesize_mixture(s, corpus)) for s in specs]

cfg = replace(PRESETS["tiny"], input_dim=161)
trainer = Trainer(cfg, TrainConfig(batch_size=8, epochs=0, warmup_steps=50, lr_factor=4.0))
for _ in range(8):
    trainer.fit(data, epochs=10)
    report = evaluate(trainer.params, cfg, data)
    print(f"epoch {trainer.epoch:3d}  loss {trainer.history[-1]['loss']:.3f}  "
          f"train DER_main {100 * report['der_main']:.1f}%  F1_main {report['f1_main']:.3f}")
