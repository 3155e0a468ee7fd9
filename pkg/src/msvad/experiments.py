"""Desk-scale versions of the experiment grids.

Each preset generates synthetic data, trains small models and reports a
table of DER, DER_main and F1_main per condition. The numbers are this run's,
at toy scale; only trends are expected to carry over to full-size training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .features import FeatureConfig
from .mixgen import NoiseSpec, SyntheticCorpus, draw_specs, synthesize_mixture
from .model import PRESETS, ModelConfig
from .training import TRAIN_PRESETS, Example, Trainer, evaluate, make_example, relabel

log = logging.getLogger(__name__)

VOLUME_SETTINGS = {"0.1-0.4": (0.1, 0.4), "0.2-0.8": (0.2, 0.8), "1": (1.0, 1.0)}
SPEAKING_CONFIGS = ("M0", "B1", "B2", "B3", "B4")
PRESET_NAMES = ("speech-ratio-grid", "volume-grid", "pe-ablation", "causal-vs-noncausal")


@dataclass(frozen=True)
class Scale:
    n_train: int = 400
    n_valid: int = 60
    n_test: int = 100
    epochs: int = 6
    batch_size: int = 16
    warmup_steps: int = 500
    lr_factor: float = 1.0
    duration: float = 15.0
    n_speakers: tuple[int, int] = (2, 4)
    snr_db: tuple[float, float] = (10.0, 20.0)
    model: str = "desk"


@dataclass
class Table:
    title: str
    columns: list[str]
    rows: list[tuple[str, list[float | None]]]

    def format(self) -> str:
        head = f"{'':<24}" + "".join(f"{c:>14}" for c in self.columns)
        lines = [self.title, head]
        for name, vals in self.rows:
            cells = "".join(f"{'n/a':>14}" if v is None else f"{v:>14.4f}" for v in vals)
            lines.append(f"{name:<24}{cells}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": self.columns,
                "rows": [{"name": n, **dict(zip(self.columns, v))} for n, v in self.rows]}


def corpora(seed: int) -> tuple[SyntheticCorpus, SyntheticCorpus]:
    """Disjoint speaker pools for training and held-out evaluation."""
    return (SyntheticCorpus(n_speakers=40, seed=1000 + seed),
            SyntheticCorpus(n_speakers=16, seed=2000 + seed))


def mixed_specs(count: int, seed: int, scale: Scale, volumes=("0.1-0.4", "0.2-0.8", "1"),
                turn_config="B2") -> list:
    """Specs cycling through the given volume settings (equal shares, interleaved)."""
    noise = NoiseSpec("white", scale.snr_db)
    per = [draw_specs(-(-count // len(volumes)), seed * 7919 + i, n_speakers=scale.n_speakers,
                      turn_config=turn_config, volume_range=VOLUME_SETTINGS[v], duration=scale.duration,
                      noise=noise) for i, v in enumerate(volumes)]
    out = [s for group in zip(*per) for s in group]
    return out[:count]


def build(specs, corpus, causal_features: bool = False, also_causal: bool = False, prefix: str = ""):
    """Examples with standard targets (optionally a second causal-front-end copy)."""
    plain, causal = [], []
    fcfg = FeatureConfig()
    for i, spec in enumerate(specs):
        mix = synthesize_mixture(spec, corpus, keep_sources=False)
        name = f"{prefix}{i:05d}"
        plain.append(make_example(mix, fcfg, causal=causal_features, name=name))
        if also_causal:
            causal.append(make_example(mix, fcfg, causal=True, name=name))
    return (plain, causal) if also_causal else plain


def fit(train: list[Example], valid: list[Example], model_config: ModelConfig, scale: Scale, seed: int,
        **overrides) -> dict:
    tc = replace(TRAIN_PRESETS["desk"], batch_size=scale.batch_size, epochs=scale.epochs,
                 warmup_steps=scale.warmup_steps, lr_factor=scale.lr_factor, seed=seed, **overrides)
    trainer = Trainer(model_config, tc)
    trainer.fit(train, valid)
    return trainer.best_params


def _metrics(report: dict) -> list[float | None]:
    return [report["der"], report["der_main"], report["f1_main"]]


def directional_suite(seed: int, scale: Scale = Scale()) -> dict:
    """Positional-encoding, causal-label and volume comparisons for one seed.

    Four models are trained on one shared B2 training set with background
    volume 0.2-0.8: non-causal with / without positional encoding, and causal
    on standard / causal-aware targets. The volume comparison reuses the
    positional-encoding model on test sets at background volume 0.1-0.4 and
    1.0. Causal models are scored against causal-aware references.
    """
    train_corpus, test_corpus = corpora(seed)
    base = PRESETS[scale.model]
    standard = ("0.2-0.8",)
    train, train_c = build(mixed_specs(scale.n_train, seed, scale, volumes=standard), train_corpus,
                           also_causal=True, prefix="tr")
    valid, valid_c = build(mixed_specs(scale.n_valid, seed + 100, scale, volumes=standard), test_corpus,
                           also_causal=True, prefix="va")
    test, test_c = build(mixed_specs(scale.n_test, seed + 200, scale, volumes=standard), test_corpus,
                         also_causal=True, prefix="te")
    soft = build(mixed_specs(scale.n_test, seed + 300, scale, volumes=("0.1-0.4",)), test_corpus, prefix="lo")
    loud = build(mixed_specs(scale.n_test, seed + 400, scale, volumes=("1",)), test_corpus, prefix="hi")

    out: dict = {"seed": seed}
    with_pe = fit(train, valid, base, scale, seed)
    without_pe = fit(train, valid, replace(base, pos_encoding=False), scale, seed)
    out["pe"] = _metrics(evaluate(with_pe, base, test))
    out["no_pe"] = _metrics(evaluate(without_pe, replace(base, pos_encoding=False), test))
    out["volume"] = {"0.1-0.4": _metrics(evaluate(with_pe, base, soft)),
                     "0.2-0.8": out["pe"],
                     "1": _metrics(evaluate(with_pe, base, loud))}

    causal_cfg = replace(base, causal=True)
    valid_causal_ref = relabel(valid_c, True)
    test_causal_ref = relabel(test_c, True)
    std = fit(train_c, valid_causal_ref, causal_cfg, scale, seed)
    aware = fit(relabel(train_c, True), valid_causal_ref, causal_cfg, scale, seed)
    out["causal_std_labels"] = _metrics(evaluate(std, causal_cfg, test_causal_ref))
    out["causal_aware_labels"] = _metrics(evaluate(aware, causal_cfg, test_causal_ref))
    out["noncausal"] = out["pe"]
    log.info("directional suite seed %d: %s", seed, out)
    return out


def speech_ratio_grid(seed: int, scale: Scale) -> Table:
    train_corpus, test_corpus = corpora(seed)
    base = PRESETS[scale.model]
    train = build(mixed_specs(scale.n_train, seed, scale, turn_config=SPEAKING_CONFIGS), train_corpus, prefix="tr")
    valid = build(mixed_specs(scale.n_valid, seed + 100, scale, turn_config=SPEAKING_CONFIGS), test_corpus)
    params = fit(train, valid, base, scale, seed)
    rows = []
    for i, name in enumerate(SPEAKING_CONFIGS):
        test = build(mixed_specs(scale.n_test, seed + 200 + i, scale, volumes=("1",), turn_config=name), test_corpus)
        rows.append((name, _metrics(evaluate(params, base, test))))
    return Table("speaking configuration (background volume 1)", ["DER", "DER_main", "F1_main"], rows)


def _average(results: list[dict], key) -> list[float]:
    vals = [key(r) for r in results]
    return [float(np.mean([v[i] for v in vals if v[i] is not None])) for i in range(3)]


def end_to_end_experiment(preset: str, scale: Scale = Scale(), seeds=(0,)) -> Table:
    """Run one experiment grid; metrics are averaged over ``seeds``."""
    if preset not in PRESET_NAMES:
        raise ValueError(f"unknown experiment preset {preset!r}; choose from {PRESET_NAMES}")
    cols = ["DER", "DER_main", "F1_main"]
    if preset == "speech-ratio-grid":
        tables = [speech_ratio_grid(s, scale) for s in seeds]
        rows = [(name, [float(np.mean([t.rows[i][1][j] for t in tables if t.rows[i][1][j] is not None]))
                        for j in range(3)]) for i, (name, _) in enumerate(tables[0].rows)]
        return Table(tables[0].title, cols, rows)
    results = [directional_suite(s, scale) for s in seeds]
    if preset == "volume-grid":
        rows = [(v, _average(results, lambda r, v=v: r["volume"][v])) for v in VOLUME_SETTINGS]
        return Table("background volume scaling (B2)", cols, rows)
    if preset == "pe-ablation":
        return Table("positional encoding ablation", cols,
                     [("w/ pos", _average(results, lambda r: r["pe"])),
                      ("w/o pos", _average(results, lambda r: r["no_pe"]))])
    return Table("causal model and label design", cols,
                 [("non-causal", _average(results, lambda r: r["noncausal"])),
                  ("causal, standard labels", _average(results, lambda r: r["causal_std_labels"])),
                  ("causal, causal labels", _average(results, lambda r: r["causal_aware_labels"]))])
