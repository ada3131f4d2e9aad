"""AdamW with decoupled weight decay and the warmup-cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .encoder import EncoderParams
from .errors import ConfigurationError, DomainError, NumericError


@dataclass
class TrainConfig:
    lr_base: float = 1e-4
    weight_decay: float = 1e-3
    warmup_epochs: int = 50
    lr_min: float = 1e-6
    max_epochs: int = 1000
    batch_size: int = 64
    patience: int = 20
    k: int = 1500
    tau: float = 0.1
    loss: str = "nt_xent"
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    triplet_margin: float = 0.3

    def __post_init__(self):
        if self.batch_size % 2 != 0 or self.batch_size < 2:
            raise ConfigurationError("batch_size must be even and >= 2")
        if not (0 <= self.warmup_epochs < self.max_epochs):
            raise ConfigurationError("warmup_epochs must be < max_epochs")
        for name in ("lr_base", "lr_min", "tau", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.loss not in ("nt_xent", "triplet"):
            raise ConfigurationError(f"unknown loss {self.loss!r}")
        if self.k < 1 or self.patience < 1:
            raise ConfigurationError("k and patience must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: EncoderParams) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
            t=0,
        )


def lr_at_epoch(e: int, config: TrainConfig) -> float:
    """Linear warmup to lr_base, then cosine decay to lr_min at max_epochs.

    Epochs are 0-based here; e = warmup_epochs - 1 is the last warmup epoch
    and hits lr_base exactly.
    """
    if not (0 <= e < config.max_epochs):
        raise DomainError(f"epoch {e} outside [0, {config.max_epochs})")
    if e < config.warmup_epochs:
        return config.lr_base * (e + 1) / config.warmup_epochs
    progress = (e - config.warmup_epochs) / (config.max_epochs - config.warmup_epochs)
    return config.lr_min + (config.lr_base - config.lr_min) * 0.5 * (1.0 + np.cos(np.pi * progress))


def adamw_step(
    params: EncoderParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> tuple[EncoderParams, OptimizerState]:
    """One bias-corrected AdamW update, in place.

    Weight decay is decoupled (p *= 1 - lr*wd after the adaptive step), so a
    zero-gradient step shrinks every parameter by exactly that factor.  The
    GeM exponent is clamped back to >= 1 afterwards.
    """
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.arrays.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
        if config.weight_decay:
            p *= 1.0 - lr * config.weight_decay
    if "gem_p" in params.arrays:
        np.maximum(params.arrays["gem_p"], 1.0, out=params.arrays["gem_p"])
    return params, state
