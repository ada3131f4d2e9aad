"""Exact gradients for the encoder, plus the finite-difference harness.

``loss_and_gradients`` is the single entry point the trainer uses: it builds
the forward graph for a window batch, applies a caller-supplied loss over the
embedding tensor, and backpropagates.  ``check_gradients`` verifies those
gradients against central finite differences in 64-bit mode; the acceptance
suite runs it on tiny configurations.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, EncoderParams, encode_graph, init_params, params_to_tensors
from .errors import NumericError
from .losses import nt_xent_graph

LossGraphFn = Callable[[ad.Tensor], ad.Tensor]


def loss_and_gradients(
    params: EncoderParams,
    config: EncoderConfig,
    loss_fn: LossGraphFn,
    windows: np.ndarray,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and its exact reverse-mode gradients for every parameter.

    ``loss_fn`` maps the (B, d_e) embedding tensor to a scalar tensor.
    Parameters that do not influence the loss get zero gradients.
    """
    pt = params_to_tensors(params, dtype=dtype, trainable=True)
    z = encode_graph(pt, config, windows, rng, dtype=dtype)
    loss = loss_fn(z)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError(f"loss is not finite: {value}")
    loss.backward()
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for name, t in pt.items()
    }
    return value, grads


def compute_gradients(
    params: EncoderParams,
    config: EncoderConfig,
    loss_fn: LossGraphFn,
    windows: np.ndarray,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """Gradient set only; see :func:`loss_and_gradients`."""
    return loss_and_gradients(params, config, loss_fn, windows, rng, dtype)[1]


def finite_difference_gradients(
    params: EncoderParams,
    config: EncoderConfig,
    loss_fn: LossGraphFn,
    windows: np.ndarray,
    step: float = 1e-4,
) -> dict[str, np.ndarray]:
    """Central-difference gradients, evaluated in float64.

    Perturbs one coordinate at a time, so only use this on tiny
    configurations; it is the independent reference the analytic path is
    judged against.
    """
    grads: dict[str, np.ndarray] = {}
    work = EncoderParams({k: v.astype(np.float64) for k, v in params.arrays.items()})

    def eval_loss() -> float:
        pt = params_to_tensors(work, dtype=np.float64, trainable=False)
        z = encode_graph(pt, config, windows, None, dtype=np.float64)
        return float(loss_fn(z).value)

    for name, arr in work.arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = eval_loss()
            flat[i] = orig - step
            down = eval_loss()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def _max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    # Scaled max-abs difference: the per-array gradient magnitude sets the
    # scale, so near-zero entries do not blow up the ratio.
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


def check_gradients(
    config: EncoderConfig,
    seed: int = 0,
    k: int = 4,
    batch_pairs: int = 2,
    tau: float = 0.1,
    step: float = 1e-4,
) -> dict[str, float]:
    """Analytic-vs-finite-difference report, one max relative error per array.

    Runs entirely in 64-bit mode on random parameters and a random window
    batch with the contrastive loss on top, so every learnable array
    (including the GeM exponent) participates in the graph.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    b = 2 * batch_pairs
    windows = rng.standard_normal((b, k, config.d_in))
    pair_of = np.arange(b).reshape(-1, 2)[:, ::-1].reshape(-1)

    def loss_fn(z: ad.Tensor) -> ad.Tensor:
        return nt_xent_graph(z, pair_of, tau)

    work = EncoderParams({k_: v.astype(np.float64) for k_, v in params.arrays.items()})
    _, analytic = loss_and_gradients(work, config, loss_fn, windows, None, dtype=np.float64)
    numeric = finite_difference_gradients(work, config, loss_fn, windows, step=step)
    return {name: _max_relative_error(analytic[name], numeric[name]) for name in analytic}
