"""The trainable lyrics encoder.

A stack of pre-norm transformer encoder blocks over windows of decoder
latents, collapsed over time by generalized-mean (GeM), mean, or CLS-token
pooling, then projected to a compact embedding.  A second variant bypasses
the transformer entirely (window average followed by a two-layer MLP), kept
for ablation comparisons.

Everything is built on the :mod:`wealy.autodiff` tape so the training loss
can be differentiated end to end, including the learnable GeM exponent.
Evaluation-mode forwards are pure functions of (params, config, window).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DomainError, NumericError, ShapeError
from .store import Window

POOLINGS = ("gem", "mean", "cls")
VARIANTS = ("transformer", "avg_mlp")


@dataclass
class EncoderConfig:
    """Architecture hyperparameters.

    Defaults match the full-scale configuration; tests and desk-scale
    experiments shrink everything.
    """

    d_in: int = 1280
    d_h: int = 768
    n_blocks: int = 4
    n_heads: int = 12
    d_ffn: int = 1024
    dropout_p: float = 0.1
    d_e: int = 512
    pooling: str = "gem"
    variant: str = "transformer"
    gem_p_init: float = 3.0
    gem_eps: float = 1e-6
    use_positional: bool = True

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ConfigurationError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("d_in", "d_h", "n_blocks", "n_heads", "d_ffn", "d_e"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.d_h % self.n_heads != 0:
            raise ConfigurationError(
                f"d_h ({self.d_h}) must be divisible by n_heads ({self.n_heads})"
            )
        if not (0 <= self.dropout_p < 1):
            raise ConfigurationError("dropout_p must lie in [0, 1)")
        if self.gem_p_init < 1:
            raise ConfigurationError("gem_p_init must be >= 1")
        if self.gem_eps <= 0:
            raise ConfigurationError("gem_eps must be > 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "EncoderConfig":
        data = json.loads(blob)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class EncoderParams:
    """All learnable arrays, keyed by a stable dotted name, float32."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams({k: v.copy() for k, v in self.arrays.items()})

    def total_size(self) -> int:
        return sum(int(a.size) for a in self.arrays.values())


@dataclass
class Embedding:
    values: np.ndarray
    source_track: str = ""
    window_start: int = 0


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """The ordered name -> shape map for a configuration.

    Weights are stored (fan_in, fan_out) so the forward pass is ``x @ W``.
    """
    shapes: dict[str, tuple[int, ...]] = {}
    if config.variant == "avg_mlp":
        shapes["mlp.w1"] = (config.d_in, config.d_h)
        shapes["mlp.b1"] = (config.d_h,)
        shapes["mlp.w2"] = (config.d_h, config.d_e)
        shapes["mlp.b2"] = (config.d_e,)
        return shapes
    shapes["in_proj.weight"] = (config.d_in, config.d_h)
    shapes["in_proj.bias"] = (config.d_h,)
    for i in range(config.n_blocks):
        p = f"block{i}"
        shapes[f"{p}.ln1.gain"] = (config.d_h,)
        shapes[f"{p}.ln1.bias"] = (config.d_h,)
        for mat in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{mat}"] = (config.d_h, config.d_h)
        # No key bias: softmax is invariant to the row-constant shift it
        # would add, so the parameter would be unidentifiable.
        for vec in ("bq", "bv", "bo"):
            shapes[f"{p}.attn.{vec}"] = (config.d_h,)
        shapes[f"{p}.ln2.gain"] = (config.d_h,)
        shapes[f"{p}.ln2.bias"] = (config.d_h,)
        shapes[f"{p}.ffn.w1"] = (config.d_h, config.d_ffn)
        shapes[f"{p}.ffn.b1"] = (config.d_ffn,)
        shapes[f"{p}.ffn.w2"] = (config.d_ffn, config.d_h)
        shapes[f"{p}.ffn.b2"] = (config.d_h,)
    shapes["final_norm.gain"] = (config.d_h,)
    shapes["final_norm.bias"] = (config.d_h,)
    if config.pooling == "gem":
        shapes["gem_p"] = (1,)
    if config.pooling == "cls":
        shapes["cls_vector"] = (config.d_h,)
    shapes["out_proj.weight"] = (config.d_h, config.d_e)
    shapes["out_proj.bias"] = (config.d_e,)
    return shapes


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Deterministic initialization.

    Weight matrices (and the CLS vector) are uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)); biases start at zero, layer-norm gains
    at one, and the GeM exponent at ``gem_p_init``.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name == "gem_p":
            arr = np.full(shape, config.gem_p_init, dtype=np.float32)
        elif leaf == "gain":
            arr = np.ones(shape, dtype=np.float32)
        elif leaf.startswith("b"):
            arr = np.zeros(shape, dtype=np.float32)
        else:
            if len(shape) == 2:
                fan_in, fan_out = shape
            else:
                fan_in = fan_out = shape[0]
            a = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-a, a, size=shape).astype(np.float32)
        arrays[name] = arr
    return EncoderParams(arrays)


_PE_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def positional_encoding(k: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal absolute positional encodings, shape (k, d)."""
    key = (k, d, np.dtype(dtype).name)
    cached = _PE_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(k, dtype=np.float64)[:, None]
    half = (d + 1) // 2
    freq = np.exp(-np.log(10000.0) * (2.0 * np.arange(half) / d))[None, :]
    angles = pos * freq
    pe = np.zeros((k, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    pe = pe.astype(dtype)
    _PE_CACHE[key] = pe
    return pe


def gem_pool(seq: np.ndarray, p: float, eps: float) -> np.ndarray:
    """Generalized-mean pooling over rows: ((1/k) sum max(x, eps)^p)^(1/p).

    p=1 is the arithmetic mean of the clamped inputs; large p approaches the
    per-dimension maximum.
    """
    if p < 1:
        raise DomainError(f"GeM exponent must be >= 1, got {p}")
    if eps <= 0:
        raise DomainError(f"GeM eps must be > 0, got {eps}")
    seq = np.asarray(seq)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError("gem_pool expects a non-empty (k, d) matrix")
    clamped = np.maximum(seq, eps)
    return np.power(np.mean(np.power(clamped, p), axis=0), 1.0 / p)


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------

def params_to_tensors(
    params: EncoderParams, dtype=np.float32, trainable: bool = True
) -> dict[str, ad.Tensor]:
    make = ad.parameter if trainable else ad.Tensor
    return {name: make(arr.astype(dtype)) for name, arr in params.arrays.items()}


def _attention(h, pt, prefix, config, rng):
    b, t, d = h.shape
    heads, dk = config.n_heads, config.d_h // config.n_heads

    def split_heads(x):
        return ad.transpose(ad.reshape(x, (b, t, heads, dk)), (0, 2, 1, 3))

    q = split_heads(ad.add(ad.matmul(h, pt[f"{prefix}.wq"]), pt[f"{prefix}.bq"]))
    k = split_heads(ad.matmul(h, pt[f"{prefix}.wk"]))
    v = split_heads(ad.add(ad.matmul(h, pt[f"{prefix}.wv"]), pt[f"{prefix}.bv"]))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    att = ad.softmax(scores)
    if rng is not None:
        att = ad.dropout(att, config.dropout_p, rng)
    ctx = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (b, t, d))
    return ad.add(ad.matmul(ctx, pt[f"{prefix}.wo"]), pt[f"{prefix}.bo"])


def _block(h, pt, i, config, rng):
    # Pre-norm layout: norm -> attention -> residual, norm -> FFN -> residual.
    n1 = ad.layer_norm(h, pt[f"block{i}.ln1.gain"], pt[f"block{i}.ln1.bias"])
    h = ad.add(h, _attention(n1, pt, f"block{i}.attn", config, rng))
    n2 = ad.layer_norm(h, pt[f"block{i}.ln2.gain"], pt[f"block{i}.ln2.bias"])
    f = ad.gelu(ad.add(ad.matmul(n2, pt["block%d.ffn.w1" % i]), pt[f"block{i}.ffn.b1"]))
    if rng is not None:
        f = ad.dropout(f, config.dropout_p, rng)
    f = ad.add(ad.matmul(f, pt[f"block{i}.ffn.w2"]), pt[f"block{i}.ffn.b2"])
    return ad.add(h, f)


def encode_graph(
    pt: Mapping[str, ad.Tensor],
    config: EncoderConfig,
    windows: np.ndarray,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> ad.Tensor:
    """Build the forward graph for a (B, k, d_in) batch; returns (B, d_e).

    Pass ``rng`` to enable dropout (training mode); without it the graph is a
    deterministic function of the parameters.
    """
    windows = np.asarray(windows)
    if windows.ndim != 3:
        raise ShapeError(f"expected (batch, k, d_in) windows, got shape {windows.shape}")
    b, k, d_in = windows.shape
    if d_in != config.d_in:
        raise ShapeError(f"window width {d_in} does not match configured d_in {config.d_in}")
    x = ad.constant(windows, dtype=dtype)

    if config.variant == "avg_mlp":
        h = ad.reduce_mean(x, axis=1)
        h = ad.gelu(ad.add(ad.matmul(h, pt["mlp.w1"]), pt["mlp.b1"]))
        if rng is not None:
            h = ad.dropout(h, config.dropout_p, rng)
        return ad.add(ad.matmul(h, pt["mlp.w2"]), pt["mlp.b2"])

    h = ad.add(ad.matmul(x, pt["in_proj.weight"]), pt["in_proj.bias"])
    if config.use_positional:
        h = ad.shift(h, positional_encoding(k, config.d_h, dtype))
    if config.pooling == "cls":
        cls = ad.broadcast_to(ad.reshape(pt["cls_vector"], (1, 1, config.d_h)), (b, 1, config.d_h))
        h = ad.concat([cls, h], axis=1)
    for i in range(config.n_blocks):
        h = _block(h, pt, i, config, rng)
    h = ad.layer_norm(h, pt["final_norm.gain"], pt["final_norm.bias"])

    if config.pooling == "gem":
        clamped = ad.clamp_min(h, config.gem_eps)
        powed = ad.power_pair(clamped, pt["gem_p"])
        inv_p = ad.power(pt["gem_p"], -1.0)
        pooled = ad.power_pair(ad.reduce_mean(powed, axis=1), inv_p)
    elif config.pooling == "mean":
        pooled = ad.reduce_mean(h, axis=1)
    else:
        pooled = ad.take_index(h, 0, axis=1)
    return ad.add(ad.matmul(pooled, pt["out_proj.weight"]), pt["out_proj.bias"])


def forward_batch(
    params: EncoderParams,
    config: EncoderConfig,
    windows: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> np.ndarray:
    """Embed a (B, k, d_in) batch of windows; returns a (B, d_e) array."""
    if mode not in ("eval", "train"):
        raise ConfigurationError(f"mode must be 'eval' or 'train', got {mode!r}")
    if mode == "train" and rng is None:
        raise ConfigurationError("train mode requires an explicit random generator")
    pt = params_to_tensors(params, dtype=dtype, trainable=False)
    out = encode_graph(pt, config, windows, rng if mode == "train" else None, dtype=dtype)
    z = out.value
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite values in encoder output")
    return z


def forward(
    params: EncoderParams,
    config: EncoderConfig,
    window: Window,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> Embedding:
    """Embed a single window."""
    z = forward_batch(params, config, window.data[None, :, :], mode, rng, dtype)[0]
    return Embedding(values=z, source_track=window.source_track, window_start=window.start_index)
