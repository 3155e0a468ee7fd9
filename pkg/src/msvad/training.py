"""Loss, learning-rate schedule, Adam, and the training loop with checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import metrics
from . import numcore as nc
from .features import FeatureConfig, extract
from .model import ModelConfig, bind, forward, init_params, predict, validate_params

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    warmup_steps: int = 100_000
    lr_factor: float = 1.0
    alpha: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    seed: int = 0
    causal_labels: bool = False
    threshold: float = 0.5
    valid_fraction: float = 0.1

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


TRAIN_PRESETS = {
    "full": TrainConfig(),
    "desk": TrainConfig(batch_size=16, epochs=20, warmup_steps=2000),
}


def noam_lr(step: int, d_model: int, warmup_steps: int) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("noam_lr is defined for step >= 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


def weighted_bce(probs, targets, mask, alpha: float = 1.0) -> nc.Var:
    """L_main + alpha * L_background, each a masked per-frame mean of binary cross-entropy.

    Works on (T, 2) or (B, T, 2); frames from every batch item are pooled.
    """
    p = nc.clip(nc.as_var(probs), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(targets, dtype=p.dtype)
    m = np.asarray(mask, dtype=p.dtype)
    if p.shape != y.shape or y.shape != m.shape:
        raise ValueError(f"shape mismatch: probs {p.shape}, targets {y.shape}, mask {m.shape}")
    bce = -(nc.log(p) * y + nc.log(1.0 - p) * (1.0 - y))
    counts = m.reshape(-1, 2).sum(axis=0)
    weights = np.array([1.0, alpha], dtype=p.dtype) / np.maximum(counts, 1.0)
    return (bce * (m * weights)).sum()


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        params[name] -= update.astype(params[name].dtype, copy=False)


# -- data ------------------------------------------------------------------------

@dataclass
class Example:
    features: np.ndarray  # (T, F)
    labels: np.ndarray  # (T, 2)
    mask: np.ndarray  # (T, 2)
    name: str = ""
    onset_frame: int = 0


def make_example(mixture, feature_config: FeatureConfig = FeatureConfig(), causal: bool = False,
                 causal_labels: bool = False, name: str = "", dtype=np.float32) -> Example:
    """Features plus targets for one LabeledMixture.

    ``causal`` selects the streaming-compatible front end (running mean,
    past-only splice); ``causal_labels`` applies causal-aware relabelling.
    """
    feats = extract(mixture.waveform, feature_config, causal=causal).frames.astype(dtype)
    target = mixture.causal() if causal_labels else mixture
    if feats.shape[0] != target.labels.shape[0]:
        raise TrainingError(f"{name}: {feats.shape[0]} feature frames vs {target.labels.shape[0]} label frames")
    return Example(feats, target.labels.copy(), target.loss_mask.copy(), name, mixture.onset_frame)


def relabel(examples: Sequence[Example], causal_labels: bool) -> list[Example]:
    """Switch between standard and causal-aware targets (needs standard targets as input)."""
    from .mixgen import apply_causal_relabel

    if not causal_labels:
        return list(examples)
    out = []
    for ex in examples:
        labels, mask = apply_causal_relabel(ex.labels, ex.mask, ex.onset_frame)
        out.append(Example(ex.features, labels, mask, ex.name, ex.onset_frame))
    return out


def batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator | None):
    """Mini-batches of equal-length examples; shuffled when ``rng`` is given."""
    order = np.arange(len(examples)) if rng is None else rng.permutation(len(examples))
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(examples[i].features.shape[0], []).append(int(i))
    chunks = [idx[j:j + batch_size] for idx in by_len.values() for j in range(0, len(idx), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for idx in chunks:
        yield (np.stack([examples[i].features for i in idx]),
               np.stack([examples[i].labels for i in idx]),
               np.stack([examples[i].mask for i in idx]))


def evaluate(params, model_config: ModelConfig, examples: Sequence[Example], threshold: float = 0.5,
             batch_size: int = 16) -> dict:
    """Score thresholded predictions against each example's targets."""
    samples, names = [], []
    for start in range(0, len(examples), batch_size):
        group = examples[start:start + batch_size]
        if len({ex.features.shape[0] for ex in group}) == 1:
            probs = predict(np.stack([ex.features for ex in group]), model_config, params, batch_size)
        else:
            probs = [predict(ex.features, model_config, params) for ex in group]
        for ex, pr in zip(group, probs):
            samples.append((ex.labels, metrics.binarize(pr, threshold)))
            names.append(ex.name)
    return metrics.score(samples, names)


# -- trainer -----------------------------------------------------------------------

@dataclass
class Trainer:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray] = field(default=None)
    feature_config: FeatureConfig = FeatureConfig()
    dtype: type = np.float32

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.model_config, self.train_config.seed, self.dtype)
        validate_params(self.params, self.model_config)
        self.opt = AdamState.zeros_like(self.params)
        self.rng = np.random.default_rng(self.train_config.seed + 1)
        self.epoch = 0
        self.history: list[dict] = []
        self.best_score = math.inf

    @property
    def step(self) -> int:
        return self.opt.step

    def lr(self, step: int) -> float:
        tc = self.train_config
        return tc.lr_factor * noam_lr(step, self.model_config.d_model, tc.warmup_steps)

    def loss_and_grads(self, x, y, mask) -> tuple[float, dict[str, np.ndarray]]:
        tape = nc.Tape()
        p = bind(self.params, tape)
        probs = forward(x, self.model_config, p, train=True, rng=self.rng)
        loss = weighted_bce(probs, y, mask, self.train_config.alpha)
        value = float(loss.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss at step {self.step + 1}")
        return value, tape.backward(loss)

    def train_step(self, x, y, mask) -> float:
        value, grads = self.loss_and_grads(x, y, mask)
        tc = self.train_config
        adam_step(self.params, grads, self.opt, self.lr(self.step + 1), tc.beta1, tc.beta2, tc.adam_eps)
        return value

    def run_epoch(self, examples: Sequence[Example]) -> float:
        losses = [self.train_step(x, y, m) for x, y, m in batches(examples, self.train_config.batch_size, self.rng)]
        self.epoch += 1
        return float(np.mean(losses))

    def fit(self, train: Sequence[Example], valid: Sequence[Example] | None = None,
            epochs: int | None = None, checkpoint: str | Path | None = None,
            on_epoch: Callable[[dict], None] | None = None) -> list[dict]:
        """Train for ``epochs``; keep the best-by-validation-DER_main parameters.

        Returns the per-epoch metrics. ``self.best_params`` holds the selected
        weights (final weights if there is no validation set).
        """
        if not train:
            raise TrainingError("empty training set")
        epochs = self.train_config.epochs if epochs is None else epochs
        self.best_params = {k: v.copy() for k, v in self.params.items()}
        for _ in range(epochs):
            t0 = time.time()
            loss = self.run_epoch(train)
            record = {"epoch": self.epoch, "step": self.step, "loss": loss, "lr": self.lr(max(self.step, 1))}
            if valid:
                report = evaluate(self.params, self.model_config, valid, self.train_config.threshold)
                record.update(valid_der_main=report["der_main"], valid_f1_main=report["f1_main"],
                              valid_der=report["der"])
                score = report["der_main"] if report["der_main"] is not None else math.inf
                if score < self.best_score:
                    self.best_score = score
                    self.best_params = {k: v.copy() for k, v in self.params.items()}
                    if checkpoint is not None:
                        save_checkpoint(checkpoint, self, params=self.best_params)
            else:
                self.best_params = {k: v.copy() for k, v in self.params.items()}
            record["seconds"] = round(time.time() - t0, 2)
            self.history.append(record)
            log.info(json.dumps(record))
            if on_epoch is not None:
                on_epoch(record)
        if checkpoint is not None and not valid:
            save_checkpoint(checkpoint, self)
        return self.history


def split_valid(examples: Sequence[Example], fraction: float) -> tuple[list[Example], list[Example]]:
    n_valid = int(round(len(examples) * fraction))
    if n_valid == 0 or n_valid >= len(examples):
        return list(examples), []
    return list(examples[:-n_valid]), list(examples[-n_valid:])


def train(dataset: Sequence[Example], model_config: ModelConfig, train_config: TrainConfig,
          valid: Sequence[Example] | None = None, checkpoint=None, **kwargs) -> Trainer:
    """Train a fresh model; holds out ``valid_fraction`` of ``dataset`` when no ``valid`` is given."""
    if not dataset:
        raise TrainingError("empty dataset")
    if valid is None:
        dataset, valid = split_valid(dataset, train_config.valid_fraction)
    trainer = Trainer(model_config, train_config, **kwargs)
    trainer.fit(dataset, valid, checkpoint=checkpoint)
    return trainer


# -- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, trainer: Trainer, params: Mapping[str, np.ndarray] | None = None) -> None:
    params = trainer.params if params is None else params
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays.update({f"adam.m/{k}": v for k, v in trainer.opt.m.items()})
    arrays.update({f"adam.v/{k}": v for k, v in trainer.opt.v.items()})
    meta = {
        "model": trainer.model_config.to_dict(),
        "train": trainer.train_config.to_dict(),
        "features": trainer.feature_config.to_dict(),
        "step": trainer.opt.step,
        "epoch": trainer.epoch,
        "best_score": trainer.best_score if math.isfinite(trainer.best_score) else None,
        "rng_state": trainer.rng.bit_generator.state,
        "history": trainer.history,
    }
    nc.save_container(path, arrays, meta)


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    model_config: ModelConfig
    feature_config: FeatureConfig
    train_config: TrainConfig | None
    meta: dict
    adam: AdamState | None = None


def load_checkpoint(path) -> Checkpoint:
    arrays, meta = nc.load_container(path)
    model_config = ModelConfig.from_dict(meta["model"])
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    validate_params(params, model_config)
    adam = None
    if any(k.startswith("adam.m/") for k in arrays):
        adam = AdamState({k[7:]: v for k, v in arrays.items() if k.startswith("adam.m/")},
                         {k[7:]: v for k, v in arrays.items() if k.startswith("adam.v/")},
                         int(meta.get("step", 0)))
    return Checkpoint(
        params=params, model_config=model_config,
        feature_config=FeatureConfig(**meta.get("features", {})),
        train_config=TrainConfig.from_dict(meta["train"]) if "train" in meta else None,
        meta=meta, adam=adam,
    )


def resume(path) -> Trainer:
    """Rebuild a Trainer (weights, moments, step, rng) from a checkpoint."""
    ckpt = load_checkpoint(path)
    if ckpt.train_config is None or ckpt.adam is None:
        raise TrainingError(f"{path}: checkpoint has no optimizer state")
    trainer = Trainer(ckpt.model_config, ckpt.train_config, params=ckpt.params,
                      feature_config=ckpt.feature_config, dtype=next(iter(ckpt.params.values())).dtype.type)
    trainer.opt = ckpt.adam
    trainer.rng.bit_generator.state = ckpt.meta["rng_state"]
    trainer.epoch = ckpt.meta.get("epoch", 0)
    trainer.history = ckpt.meta.get("history", [])
    best = ckpt.meta.get("best_score")
    trainer.best_score = math.inf if best is None else best
    return trainer


def save_params(path, params: Mapping[str, np.ndarray], model_config: ModelConfig,
                feature_config: FeatureConfig = FeatureConfig()) -> None:
    """Inference-only checkpoint (no optimizer state)."""
    nc.save_container(path, {f"param/{k}": v for k, v in params.items()},
                      {"model": model_config.to_dict(), "features": feature_config.to_dict()})
