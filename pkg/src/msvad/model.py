"""Transformer encoder, self-attention attractors and the frame activity head.

Parameters live in a flat ``{path: ndarray}`` dict. Every function takes the
params already bound to :class:`~msvad.numcore.Var` (see :func:`bind`), so the
same code runs inference (constants) and training (watched on a tape).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

from . import numcore as nc
from .numcore import Var


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 2048
    dropout: float = 0.1
    saa_heads: int = 8
    attractor_mode: str = "dual"
    causal: bool = False
    input_dim: int = 161
    pos_encoding: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.attractor_mode not in ("single", "dual"):
            raise ValueError(f"attractor_mode must be 'single' or 'dual', got {self.attractor_mode!r}")
        if self.d_model % self.n_heads or self.d_model % self.saa_heads:
            raise ValueError("d_model must be divisible by n_heads and saa_heads")
        if self.attractor_mode == "dual" and self.saa_heads % 2:
            raise ValueError("dual attractors need an even saa_heads count")
        if self.pos_encoding and self.d_model % 2:
            raise ValueError("positional encoding needs an even d_model")
        if self.n_layers < 0 or not 0.0 <= self.dropout < 1.0:
            raise ValueError("invalid n_layers or dropout")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "full": ModelConfig(),
    "full-single": ModelConfig(saa_heads=4, attractor_mode="single"),
    "desk": ModelConfig(d_model=64, n_layers=2, n_heads=2, ffn_dim=256, saa_heads=4),
    "tiny": ModelConfig(d_model=8, n_layers=1, n_heads=2, ffn_dim=16, saa_heads=4, input_dim=14, dropout=0.0),
}


def positional_encoding(T: int, d: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos(...)."""
    if d % 2:
        raise ValueError(f"positional encoding needs an even dimension, got {d}")
    if T < 1:
        raise ValueError("T must be at least 1")
    pos = np.arange(T, dtype=np.float64)[:, None]
    rate = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(pos / rate)
    pe[:, 1::2] = np.cos(pos / rate)
    return pe


# -- parameters ---------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F = config.d_model, config.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"enc.in.w": (config.input_dim, D), "enc.in.b": (D,)}
    for l in range(config.n_layers):
        p = f"enc.{l}"
        shapes.update({
            f"{p}.ln1.g": (D,), f"{p}.ln1.b": (D,),
            f"{p}.att.wq": (D, D), f"{p}.att.bq": (D,),
            f"{p}.att.wk": (D, D), f"{p}.att.bk": (D,),
            f"{p}.att.wv": (D, D), f"{p}.att.bv": (D,),
            f"{p}.att.wo": (D, D), f"{p}.att.bo": (D,),
            f"{p}.ln2.g": (D,), f"{p}.ln2.b": (D,),
            f"{p}.ffn.w1": (D, F), f"{p}.ffn.b1": (F,),
            f"{p}.ffn.w2": (F, D), f"{p}.ffn.b2": (D,),
        })
    shapes.update({"enc.ln.g": (D,), "enc.ln.b": (D,)})
    shapes.update({"saa.wq": (D, D), "saa.bq": (D,), "saa.wk": (D, D), "saa.bk": (D,),
                   "saa.wv": (D, D), "saa.bv": (D,)})
    if config.attractor_mode == "single":
        shapes.update({"saa.wo": (D, D), "saa.bo": (D,), "saa.ln.g": (D,), "saa.ln.b": (D,),
                       "saa.main.w": (D, D), "saa.main.b": (D,), "saa.bg.w": (D, D), "saa.bg.b": (D,)})
    else:
        for g in (0, 1):
            shapes.update({f"saa.g{g}.wo": (D // 2, D), f"saa.g{g}.bo": (D,),
                           f"saa.g{g}.ln.g": (D,), f"saa.g{g}.ln.b": (D,),
                           f"saa.g{g}.proj.w": (D, D), f"saa.g{g}.proj.b": (D,)})
    return shapes


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-scaled uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            if name.startswith(("saa.main", "saa.bg")) or name.endswith("proj.w"):
                # attractor maps: keep initial logits E.a out of sigmoid saturation
                limit /= math.sqrt(config.d_model)
            params[name] = rng.uniform(-limit, limit, shape).astype(dtype)
        elif leaf == "g":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def validate_params(params: Mapping[str, np.ndarray], config: ModelConfig) -> None:
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ValueError(f"parameter set mismatch: missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"{name}: shape {params[name].shape} != {shape}")


def bind(params: Mapping[str, np.ndarray], tape: nc.Tape | None = None) -> dict[str, Var]:
    if tape is None:
        return {k: Var(v) for k, v in params.items()}
    return {k: tape.watch(k, v) for k, v in params.items()}


# -- building blocks -----------------------------------------------------------

def causal_mask(T: int) -> np.ndarray:
    """True above the diagonal: frame t may not attend to frames > t."""
    return np.triu(np.ones((T, T), dtype=bool), k=1)


def _linear(x, p, w, b):
    return x @ p[w] + p[b]


def _split_heads(x: Var, n_heads: int) -> Var:
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Var) -> Var:
    B, H, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attention_heads(x: Var, p, prefix: str, n_heads: int, causal: bool) -> Var:
    """Scaled dot-product attention per head; returns (B, H, T, d_head) contexts."""
    q = _split_heads(_linear(x, p, f"{prefix}wq", f"{prefix}bq"), n_heads)
    k = _split_heads(_linear(x, p, f"{prefix}wk", f"{prefix}bk"), n_heads)
    v = _split_heads(_linear(x, p, f"{prefix}wv", f"{prefix}bv"), n_heads)
    scores = (q @ nc.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    probs = nc.softmax(scores, mask=causal_mask(x.shape[1]) if causal else None)
    return probs @ v


def _as_batch(features) -> tuple[Var, bool]:
    x = nc.as_var(features)
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise ValueError(f"features must be (T, F) or (B, T, F), got {x.shape}")
    return x, False


def encoder_forward(features, config: ModelConfig, p: Mapping[str, Var], train: bool = False,
                    rng: np.random.Generator | None = None) -> Var:
    """Input projection + positional encoding + pre-norm Transformer blocks + final norm."""
    x, _ = _as_batch(features)
    if x.shape[-1] != config.input_dim:
        raise ValueError(f"feature dim {x.shape[-1]} != input_dim {config.input_dim}")
    T = x.shape[1]
    h = _linear(x, p, "enc.in.w", "enc.in.b")
    if config.pos_encoding:
        h = h + positional_encoding(T, config.d_model).astype(h.dtype)
    rate, eps = config.dropout, config.ln_eps
    for l in range(config.n_layers):
        pre = f"enc.{l}."
        a = nc.layernorm(h, p[pre + "ln1.g"], p[pre + "ln1.b"], eps)
        a = _merge_heads(attention_heads(a, p, pre + "att.", config.n_heads, config.causal))
        a = _linear(a, p, pre + "att.wo", pre + "att.bo")
        h = h + nc.dropout(a, rate, rng, train)
        f = nc.layernorm(h, p[pre + "ln2.g"], p[pre + "ln2.b"], eps)
        f = _linear(nc.relu(_linear(f, p, pre + "ffn.w1", pre + "ffn.b1")), p, pre + "ffn.w2", pre + "ffn.b2")
        h = h + nc.dropout(f, rate, rng, train)
    return nc.layernorm(h, p["enc.ln.g"], p["enc.ln.b"], eps)


def _pool(s: Var, causal: bool) -> Var:
    # causal: attractor at t averages steps 0..t; otherwise the whole sequence
    return nc.cummean(s, axis=1) if causal else s.mean(axis=1)


def saa_forward(E: Var, config: ModelConfig, p: Mapping[str, Var]) -> tuple[Var, Var]:
    """Main and background attractors.

    Shapes are (B, D) each, or (B, T, D) in causal mode (one pair per step).
    """
    heads = attention_heads(E, p, "saa.", config.saa_heads, config.causal)
    eps = config.ln_eps
    if config.attractor_mode == "single":
        s = nc.layernorm(E + _linear(_merge_heads(heads), p, "saa.wo", "saa.bo"),
                         p["saa.ln.g"], p["saa.ln.b"], eps)
        pooled = _pool(s, config.causal)
        return _linear(pooled, p, "saa.main.w", "saa.main.b"), _linear(pooled, p, "saa.bg.w", "saa.bg.b")
    half = config.saa_heads // 2
    attractors = []
    for g, sl in enumerate((slice(0, half), slice(half, None))):
        pre = f"saa.g{g}."
        ctx = _merge_heads(heads[:, sl])
        s = nc.layernorm(E + _linear(ctx, p, pre + "wo", pre + "bo"), p[pre + "ln.g"], p[pre + "ln.b"], eps)
        attractors.append(_linear(_pool(s, config.causal), p, pre + "proj.w", pre + "proj.b"))
    return attractors[0], attractors[1]


def output_logits(E: Var, a_main: Var, a_bg: Var) -> Var:
    """E A^T with A = [a_main; a_bg]; per-step attractors when they carry a time axis."""
    B, T, D = E.shape
    if a_main.ndim == 2:
        A = nc.concat([a_main.reshape(B, 1, D), a_bg.reshape(B, 1, D)], axis=1)
        return E @ nc.swap_last(A)
    A = nc.concat([a_main.reshape(B, T, 1, D), a_bg.reshape(B, T, 1, D)], axis=2)
    return (E.reshape(B, T, 1, D) * A).sum(axis=-1)


def output_head(E, A) -> Var:
    """sigmoid(E A^T) for E (T, D) and A (2, D): per-frame main / background probabilities."""
    E, A = nc.as_var(E), nc.as_var(A)
    return nc.sigmoid(E @ nc.swap_last(A))


def forward_logits(features, config: ModelConfig, p: Mapping[str, Var], train: bool = False,
                   rng: np.random.Generator | None = None) -> Var:
    _, squeeze = _as_batch(features)
    E = encoder_forward(features, config, p, train, rng)
    logits = output_logits(E, *saa_forward(E, config, p))
    return logits.reshape(*logits.shape[1:]) if squeeze else logits


def forward(features, config: ModelConfig, p: Mapping[str, Var], train: bool = False,
            rng: np.random.Generator | None = None) -> Var:
    """Frame probabilities (T, 2) or (B, T, 2); column 0 main, column 1 background."""
    return nc.sigmoid(forward_logits(features, config, p, train, rng))


def predict(features, config: ModelConfig, params: Mapping[str, np.ndarray], batch_size: int = 16) -> np.ndarray:
    """Inference on raw arrays: (T, F) -> (T, 2) or (B, T, F) -> (B, T, 2)."""
    p = bind(params)
    x = np.asarray(features)
    if x.ndim == 2:
        return forward(x.astype(params["enc.in.w"].dtype), config, p).value
    out = [forward(x[i:i + batch_size].astype(params["enc.in.w"].dtype), config, p).value
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out, axis=0)
