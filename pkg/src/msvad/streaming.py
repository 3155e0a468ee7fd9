"""Frame-by-frame causal inference with key/value caches.

A :class:`StreamState` holds, per attention layer, the keys and values of
every frame seen so far, plus running sums of the attractor-module outputs.
Pushing frame t costs one attention row per layer (O(t * D)) instead of
re-running the whole prefix, and reproduces the offline causal forward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .features import FeatureConfig, OnlineFeatureExtractor
from .mixgen.corpus import read_wav
from .model import ModelConfig
from .training import Checkpoint, load_checkpoint


class StreamError(RuntimeError):
    pass


@dataclass
class FrameDecision:
    t: int
    t_seconds: float
    p_main: float
    p_background: float
    is_main_active: bool
    is_bg_active: bool

    def to_json(self) -> str:
        return json.dumps({"t_seconds": round(self.t_seconds, 3), "p_main": self.p_main,
                           "p_bg": self.p_background, "main": self.is_main_active, "bg": self.is_bg_active})


class KVCache:
    """Per-head key/value rows for one attention layer; capacity doubles as frames arrive."""

    def __init__(self, n_heads: int, d_head: int, dtype, capacity: int = 16):
        self.keys = np.empty((n_heads, capacity, d_head), dtype=dtype)
        self.values = np.empty((n_heads, capacity, d_head), dtype=dtype)
        self.length = 0

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        if self.length == self.keys.shape[1]:
            grow = lambda a: np.concatenate([a, np.empty_like(a)], axis=1)  # noqa: E731
            self.keys, self.values = grow(self.keys), grow(self.values)
        self.keys[:, self.length] = k
        self.values[:, self.length] = v
        self.length += 1

    def view(self) -> tuple[np.ndarray, np.ndarray]:
        return self.keys[:, :self.length], self.values[:, :self.length]

    @property
    def nbytes(self) -> int:
        return self.keys[:, :self.length].nbytes + self.values[:, :self.length].nbytes


def _layernorm(x, g, b, eps):
    mu = x.mean()
    xc = x - mu
    return xc / np.sqrt((xc * xc).mean() + eps) * g + b


def _pe_row(pos: int, d: int) -> np.ndarray:
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    row = np.empty(d)
    row[0::2] = np.sin(pos / rate)
    row[1::2] = np.cos(pos / rate)
    return row


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class StreamState:
    """Causal session state. Create with :func:`init_stream`."""

    def __init__(self, params: dict[str, np.ndarray], config: ModelConfig, feature_config: FeatureConfig,
                 threshold: float = 0.5, dtype=np.float64):
        if not config.causal:
            raise StreamError("streaming needs a causal model (checkpoint has causal=false)")
        self.config = config
        self.feature_config = feature_config
        self.threshold = threshold
        self.params = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
        D = config.d_model
        self.caches = [KVCache(config.n_heads, D // config.n_heads, dtype) for _ in range(config.n_layers)]
        self.saa_cache = KVCache(config.saa_heads, D // config.saa_heads, dtype)
        n_groups = 1 if config.attractor_mode == "single" else 2
        self.attractor_sums = [np.zeros(D, dtype=dtype) for _ in range(n_groups)]
        self.features = OnlineFeatureExtractor(feature_config)
        self.t = 0
        self.attention_macs = 0
        self.poisoned: Exception | None = None

    @property
    def state_nbytes(self) -> int:
        return sum(c.nbytes for c in self.caches) + self.saa_cache.nbytes

    def _attend(self, x: np.ndarray, prefix: str, cache: KVCache, n_heads: int) -> np.ndarray:
        p = self.params
        d_head = x.size // n_heads
        q = (x @ p[prefix + "wq"] + p[prefix + "bq"]).reshape(n_heads, d_head)
        k = (x @ p[prefix + "wk"] + p[prefix + "bk"]).reshape(n_heads, d_head)
        v = (x @ p[prefix + "wv"] + p[prefix + "bv"]).reshape(n_heads, d_head)
        cache.append(k, v)
        keys, values = cache.view()
        scores = np.einsum("htd,hd->ht", keys, q) / math.sqrt(d_head)
        scores = np.exp(scores - scores.max(axis=1, keepdims=True))
        probs = scores / scores.sum(axis=1, keepdims=True)
        self.attention_macs += 2 * n_heads * cache.length * d_head
        return np.einsum("ht,htd->hd", probs, values)  # (H, d_head)

    def _step(self, x: np.ndarray) -> tuple[float, float]:
        cfg, p, eps = self.config, self.params, self.config.ln_eps
        h = x @ p["enc.in.w"] + p["enc.in.b"]
        if cfg.pos_encoding:
            h = h + _pe_row(self.t, cfg.d_model)
        for l, cache in enumerate(self.caches):
            pre = f"enc.{l}."
            a = _layernorm(h, p[pre + "ln1.g"], p[pre + "ln1.b"], eps)
            ctx = self._attend(a, pre + "att.", cache, cfg.n_heads).reshape(-1)
            h = h + ctx @ p[pre + "att.wo"] + p[pre + "att.bo"]
            f = _layernorm(h, p[pre + "ln2.g"], p[pre + "ln2.b"], eps)
            f = np.maximum(f @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"], 0.0)
            h = h + f @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
        e = _layernorm(h, p["enc.ln.g"], p["enc.ln.b"], eps)
        heads = self._attend(e, "saa.", self.saa_cache, cfg.saa_heads)
        n = self.t + 1
        if cfg.attractor_mode == "single":
            s = _layernorm(e + heads.reshape(-1) @ p["saa.wo"] + p["saa.bo"], p["saa.ln.g"], p["saa.ln.b"], eps)
            self.attractor_sums[0] += s
            pooled = self.attractor_sums[0] / n
            a_main = pooled @ p["saa.main.w"] + p["saa.main.b"]
            a_bg = pooled @ p["saa.bg.w"] + p["saa.bg.b"]
        else:
            half = cfg.saa_heads // 2
            attractors = []
            for g, group in enumerate((heads[:half], heads[half:])):
                pre = f"saa.g{g}."
                s = _layernorm(e + group.reshape(-1) @ p[pre + "wo"] + p[pre + "bo"],
                               p[pre + "ln.g"], p[pre + "ln.b"], eps)
                self.attractor_sums[g] += s
                attractors.append((self.attractor_sums[g] / n) @ p[pre + "proj.w"] + p[pre + "proj.b"])
            a_main, a_bg = attractors
        return _sigmoid(float(e @ a_main)), _sigmoid(float(e @ a_bg))


def init_stream(checkpoint, threshold: float = 0.5, dtype=np.float64) -> StreamState:
    """Fresh session from a checkpoint path or :class:`Checkpoint`; rejects non-causal models."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    return StreamState(checkpoint.params, checkpoint.model_config, checkpoint.feature_config, threshold, dtype)


def push_frame(state: StreamState, spliced_feature) -> FrameDecision:
    """Advance the session by one model-rate frame and score it."""
    if state.poisoned is not None:
        raise StreamError(f"stream unusable after earlier error: {state.poisoned}")
    x = np.asarray(spliced_feature, dtype=state.saa_cache.keys.dtype).reshape(-1)
    if x.size != state.config.input_dim:
        raise ValueError(f"frame has {x.size} features, model expects {state.config.input_dim}")
    try:
        p_main, p_bg = state._step(x)
    except Exception as exc:
        state.poisoned = exc
        raise
    t = state.t
    state.t += 1
    thr = state.threshold
    return FrameDecision(t, t * state.feature_config.frame_hop, p_main, p_bg, p_main >= thr, p_bg >= thr)


def push_samples(state: StreamState, samples) -> list[FrameDecision]:
    """Feed raw audio; returns a decision for every spliced frame it completes."""
    return [push_frame(state, f) for f in state.features.push(samples)]


def stream_probs(state: StreamState, features) -> np.ndarray:
    """Push a whole (T, F) matrix; returns (T, 2) probabilities."""
    out = [push_frame(state, f) for f in np.asarray(features)]
    return np.array([[d.p_main, d.p_background] for d in out]).reshape(-1, 2)


def stream_wav(path, checkpoint, threshold: float = 0.5, chunk_seconds: float = 0.1,
               file_id: str | None = None) -> tuple[list[FrameDecision], dict]:
    """Stream a WAV file through a causal model in fixed-size chunks.

    Returns per-frame decisions and a summary holding RTTM lines for the
    merged main / background segments.
    """
    path = Path(path)
    try:
        state = init_stream(checkpoint, threshold)
        audio = read_wav(path, state.feature_config.sample_rate)
    except (OSError, ValueError) as exc:
        if isinstance(exc, StreamError):
            raise
        raise StreamError(f"cannot stream {path}: {exc}") from exc
    step = max(int(chunk_seconds * state.feature_config.sample_rate), 1)
    decisions: list[FrameDecision] = []
    for start in range(0, audio.size, step):
        decisions.extend(push_samples(state, audio[start:start + step]))
    activity = np.array([[d.is_main_active, d.is_bg_active] for d in decisions], dtype=np.uint8).reshape(-1, 2)
    summary = {
        "file": file_id or path.stem,
        "frames": len(decisions),
        "frame_hop": state.feature_config.frame_hop,
        "main_frames": int(activity[:, 0].sum()),
        "bg_frames": int(activity[:, 1].sum()),
        "rttm": metrics.to_rttm(file_id or path.stem, activity, state.feature_config.frame_hop),
    }
    return decisions, summary
