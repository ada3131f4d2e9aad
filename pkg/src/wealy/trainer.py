"""Training loop: clique-paired batches, AdamW, early stopping on validation MAP.

A training batch holds ``batch_size/2`` distinct cliques, two versions each,
one random window per version; the loss pairs the two versions of every
clique.  After each epoch the validation split is embedded with the
deterministic head window (one embedding per track) and scored with mean
average precision; the best checkpoint wins and training stops after
``patience`` epochs without improvement.

Checkpoints are WCKP files:

    magic  b"WCKP"
    u32    version (currently 1)
    u32    config JSON length, then that many bytes of JSON
    per array: u16 name length, name UTF-8, u32 rank, u32 dims..., f32 payload

All integers little-endian; arrays appear in the canonical parameter order
and round-trip bit-exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .encoder import EncoderConfig, EncoderParams, forward_batch, init_params, param_shapes
from .errors import ConfigurationError, CorruptionError, FormatError, NumericError, StorageError
from .evaluation import DistanceMatrix, map_eval
from .gradcheck import loss_and_gradients
from .losses import nt_xent_graph, triplet_graph
from .optim import OptimizerState, TrainConfig, adamw_step, lr_at_epoch
from .store import DatasetManifest, LatentStore, first_window, sample_train_window

MIN_IMPROVEMENT = 1e-6
WCKP_MAGIC = b"WCKP"
WCKP_VERSION = 1


@dataclass
class WindowBatch:
    windows: np.ndarray  # (B, k, d_in)
    pair_of: np.ndarray  # (B,)
    track_ids: list[str]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_map: float
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_map: float = -1.0
    stopped_reason: str = ""

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(e)) + "\n" for e in self.epochs)


@dataclass
class TrainResult:
    params: EncoderParams
    encoder_config: EncoderConfig
    history: TrainHistory


def trainable_cliques(manifest: DatasetManifest) -> list[list]:
    """Train-split cliques with at least two members, in a stable order."""
    groups = manifest.cliques("train")
    return [sorted(members, key=lambda r: r.track_id)
            for _, members in sorted(groups.items()) if len(members) >= 2]


def build_batch(
    manifest: DatasetManifest,
    store: LatentStore,
    config: TrainConfig,
    rng: np.random.Generator,
    d_in: int,
) -> WindowBatch:
    """Sample one contrastive batch of windows."""
    cliques = trainable_cliques(manifest)
    n_cliques = config.batch_size // 2
    if len(cliques) < n_cliques:
        raise ConfigurationError(
            f"need >= {n_cliques} trainable cliques, found {len(cliques)}"
        )
    chosen = rng.choice(len(cliques), size=n_cliques, replace=False)
    windows = np.empty((config.batch_size, config.k, d_in), dtype=np.float32)
    pair_of = np.empty(config.batch_size, dtype=np.int64)
    track_ids: list[str] = []
    for j, ci in enumerate(chosen):
        members = cliques[ci]
        va, vb = rng.choice(len(members), size=2, replace=False)
        for slot, record in enumerate((members[va], members[vb])):
            idx = 2 * j + slot
            seq = store.get(record.track_id)
            w = sample_train_window(seq, config.k, rng, record.track_id)
            windows[idx] = w.data
            track_ids.append(record.track_id)
        pair_of[2 * j] = 2 * j + 1
        pair_of[2 * j + 1] = 2 * j
    return WindowBatch(windows, pair_of, track_ids)


def validation_map(
    params: EncoderParams,
    encoder_config: EncoderConfig,
    manifest: DatasetManifest,
    store: LatentStore,
    k: int,
) -> float:
    """MAP over the validation split, one head-window embedding per track."""
    records = manifest.by_split("val")
    ids = [r.track_id for r in records]
    windows = np.stack([first_window(store.get(t), k).data for t in ids])
    z = forward_batch(params, encoder_config, windows).astype(np.float64)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    zn = z / norms
    values = np.clip(1.0 - zn @ zn.T, 0.0, 2.0)
    dm = DistanceMatrix(query_ids=ids, candidate_ids=ids, values=values)
    clique_of = {r.track_id: r.clique_id for r in records}
    return map_eval(dm, clique_of).map


def _loss_builder(config: TrainConfig):
    if config.loss == "triplet":
        return lambda z, pair: triplet_graph(z, pair, config.triplet_margin)
    return lambda z, pair: nt_xent_graph(z, pair, config.tau)


def train(
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    manifest: DatasetManifest,
    store: LatentStore | None = None,
    checkpoint_path: str | Path | None = None,
    history_path: str | Path | None = None,
    log=None,
) -> TrainResult:
    """Run the full loop and return the best checkpoint plus the history.

    On a numeric failure mid-training the best checkpoint so far is written
    (when a path was given) before the error propagates.
    """
    store = store or LatentStore(manifest)
    val_records = manifest.by_split("val")
    val_groups: dict[str, int] = {}
    for r in val_records:
        val_groups[r.clique_id] = val_groups.get(r.clique_id, 0) + 1
    if not val_records or not any(n >= 2 for n in val_groups.values()):
        raise ConfigurationError("validation split needs at least one multi-member clique")

    n_trainable = len(trainable_cliques(manifest))
    if n_trainable < train_config.batch_size // 2:
        raise ConfigurationError(
            f"need >= {train_config.batch_size // 2} trainable cliques, found {n_trainable}"
        )
    batches_per_epoch = math.ceil(n_trainable / (train_config.batch_size // 2))

    params = init_params(encoder_config, train_config.seed)
    state = OptimizerState.for_params(params)
    master = np.random.default_rng(train_config.seed)
    batch_rng, dropout_rng = master.spawn(2)
    loss_graph = _loss_builder(train_config)

    history = TrainHistory()
    best_params = params.copy()
    epochs_since_best = 0
    history_fh = open(history_path, "w") if history_path else None
    try:
        for epoch in range(1, train_config.max_epochs + 1):
            lr = lr_at_epoch(epoch - 1, train_config)
            losses = []
            for _ in range(batches_per_epoch):
                batch = build_batch(manifest, store, train_config, batch_rng, encoder_config.d_in)
                loss_fn = lambda z: loss_graph(z, batch.pair_of)  # noqa: E731
                loss, grads = loss_and_gradients(
                    params, encoder_config, loss_fn, batch.windows, rng=dropout_rng
                )
                losses.append(loss)
                adamw_step(params, grads, state, lr, train_config)
            val_map = validation_map(params, encoder_config, manifest, store, train_config.k)
            stats = EpochStats(epoch=epoch, train_loss=float(np.mean(losses)),
                               val_map=val_map, lr=float(lr))
            history.epochs.append(stats)
            if history_fh:
                history_fh.write(json.dumps(asdict(stats)) + "\n")
                history_fh.flush()
            if log:
                log(f"epoch {epoch}: loss {stats.train_loss:.4f} val_map {val_map:.4f} lr {lr:.2e}")
            if val_map > history.best_val_map + MIN_IMPROVEMENT:
                history.best_val_map = val_map
                history.best_epoch = epoch
                best_params = params.copy()
                epochs_since_best = 0
                if checkpoint_path:
                    save_checkpoint(best_params, encoder_config, checkpoint_path)
            else:
                epochs_since_best += 1
                if epochs_since_best >= train_config.patience:
                    history.stopped_reason = "early_stopping"
                    break
        else:
            history.stopped_reason = "max_epochs"
    except NumericError:
        if checkpoint_path:
            save_checkpoint(best_params, encoder_config, checkpoint_path)
        raise
    finally:
        if history_fh:
            history_fh.close()
    if checkpoint_path:
        save_checkpoint(best_params, encoder_config, checkpoint_path)
    return TrainResult(params=best_params, encoder_config=encoder_config, history=history)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: EncoderParams, config: EncoderConfig, path: str | Path) -> None:
    blob = config.to_json().encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(WCKP_MAGIC)
            fh.write(struct.pack("<II", WCKP_VERSION, len(blob)))
            fh.write(blob)
            for name, arr in params.arrays.items():
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> tuple[EncoderParams, EncoderConfig]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != WCKP_MAGIC:
        raise FormatError(f"{path}: not a WCKP checkpoint")
    version, blob_len = struct.unpack("<II", raw[4:12])
    if version != WCKP_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    config = EncoderConfig.from_json(raw[offset:offset + blob_len].decode("utf-8"))
    offset += blob_len
    arrays: dict[str, np.ndarray] = {}
    while offset < len(raw):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
        arrays[name] = arr.copy()
    params = EncoderParams(arrays)
    expected = param_shapes(config)
    if set(expected) != set(arrays) or any(arrays[n].shape != tuple(s) for n, s in expected.items()):
        raise CorruptionError(f"{path}: arrays do not match the stored configuration")
    return params, config
