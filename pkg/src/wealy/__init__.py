"""Lyrics-aware version retrieval: contrastive latent adaptation + evaluation."""

from .encoder import (
    Embedding,
    EncoderConfig,
    EncoderParams,
    forward,
    forward_batch,
    gem_pool,
    init_params,
)
from .errors import WealyError
from .evaluation import (
    DistanceMatrix,
    EvalReport,
    average_precision,
    bootstrap_ci,
    distance_matrix,
    embed_track,
    load_distances,
    map_eval,
    oracle_distance_matrix,
    oracle_is_valid,
    random_baseline,
    save_distances,
    track_similarity,
)
from .fusion import align_matrices, fuse
from .losses import ContrastiveBatch, LossConfig, cosine_sim, nt_xent, triplet_loss
from .optim import OptimizerState, TrainConfig, adamw_step, lr_at_epoch
from .store import (
    DatasetManifest,
    LatentSequence,
    LatentStore,
    TrackRecord,
    Window,
    first_window,
    load_manifest,
    read_latents,
    sample_train_window,
    save_manifest,
    test_windows,
    validate_manifest,
    write_latents,
)
from .synth import SynthSpec, synth_dataset
from .trainer import TrainHistory, TrainResult, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ContrastiveBatch",
    "DatasetManifest",
    "DistanceMatrix",
    "Embedding",
    "EncoderConfig",
    "EncoderParams",
    "EvalReport",
    "LatentSequence",
    "LatentStore",
    "LossConfig",
    "OptimizerState",
    "SynthSpec",
    "TrackRecord",
    "TrainConfig",
    "TrainHistory",
    "TrainResult",
    "WealyError",
    "Window",
    "adamw_step",
    "align_matrices",
    "average_precision",
    "bootstrap_ci",
    "cosine_sim",
    "distance_matrix",
    "embed_track",
    "first_window",
    "forward",
    "forward_batch",
    "fuse",
    "gem_pool",
    "init_params",
    "load_checkpoint",
    "load_distances",
    "load_manifest",
    "lr_at_epoch",
    "map_eval",
    "nt_xent",
    "oracle_distance_matrix",
    "oracle_is_valid",
    "random_baseline",
    "read_latents",
    "sample_train_window",
    "save_checkpoint",
    "save_distances",
    "save_manifest",
    "synth_dataset",
    "test_windows",
    "track_similarity",
    "train",
    "triplet_loss",
    "validate_manifest",
    "write_latents",
]
