"""Scikit-learn style estimators wrapping the trainable models.

These are thin composition layers over the functional core so the encoder
and the TF-IDF baseline can sit in familiar fit/transform workflows with
``get_params``/``set_params`` support.  ``fit`` takes a manifest (the data
here is variable-length sequences behind files, not a rectangular X), while
``transform`` maps latent sequences to chunk-embedding matrices.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .baselines import TfIdfModel, tfidf_distance_matrix, tfidf_fit
from .encoder import EncoderConfig, EncoderParams
from .evaluation import DistanceMatrix, embed_tracks
from .optim import TrainConfig
from .store import DatasetManifest, LatentSequence, LatentStore
from .trainer import load_checkpoint, train


class ContrastiveLyricsEncoder(BaseEstimator, TransformerMixin):
    """Contrastively trained window encoder with an estimator interface.

    Parameters mirror the encoder and trainer configurations; ``fit`` trains
    on a manifest's train/val splits, ``transform`` embeds latent sequences
    into per-chunk embedding matrices.
    """

    def __init__(
        self,
        d_in: int = 1280,
        d_h: int = 768,
        n_blocks: int = 4,
        n_heads: int = 12,
        d_ffn: int = 1024,
        dropout_p: float = 0.1,
        d_e: int = 512,
        pooling: str = "gem",
        variant: str = "transformer",
        k: int = 1500,
        overlap: float = 0.9,
        lr_base: float = 1e-4,
        weight_decay: float = 1e-3,
        warmup_epochs: int = 50,
        max_epochs: int = 1000,
        batch_size: int = 64,
        patience: int = 20,
        tau: float = 0.1,
        loss: str = "nt_xent",
        seed: int = 0,
    ):
        self.d_in = d_in
        self.d_h = d_h
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.d_ffn = d_ffn
        self.dropout_p = dropout_p
        self.d_e = d_e
        self.pooling = pooling
        self.variant = variant
        self.k = k
        self.overlap = overlap
        self.lr_base = lr_base
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.patience = patience
        self.tau = tau
        self.loss = loss
        self.seed = seed

    def _configs(self) -> tuple[TrainConfig, EncoderConfig]:
        encoder = EncoderConfig(
            d_in=self.d_in, d_h=self.d_h, n_blocks=self.n_blocks, n_heads=self.n_heads,
            d_ffn=self.d_ffn, dropout_p=self.dropout_p, d_e=self.d_e,
            pooling=self.pooling, variant=self.variant,
        )
        trainer = TrainConfig(
            lr_base=self.lr_base, weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs, max_epochs=self.max_epochs,
            batch_size=self.batch_size, patience=self.patience, k=self.k,
            tau=self.tau, loss=self.loss, seed=self.seed,
        )
        return trainer, encoder

    def fit(self, manifest: DatasetManifest, y=None, **train_kwargs):
        trainer_config, encoder_config = self._configs()
        result = train(trainer_config, encoder_config, manifest, **train_kwargs)
        self.params_ = result.params
        self.encoder_config_ = result.encoder_config
        self.history_ = result.history
        return self

    @classmethod
    def from_checkpoint(cls, path) -> "ContrastiveLyricsEncoder":
        params, config = load_checkpoint(path)
        est = cls(**{f: getattr(config, f) for f in (
            "d_in", "d_h", "n_blocks", "n_heads", "d_ffn", "dropout_p", "d_e",
            "pooling", "variant",
        )})
        est.params_ = params
        est.encoder_config_ = config
        return est

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit() or from_checkpoint() first")

    def transform(self, sequences: Mapping[str, LatentSequence]) -> dict[str, np.ndarray]:
        """Per-track chunk-embedding matrices for a track_id -> sequence mapping."""
        self._check_fitted()
        return embed_tracks(self.params_, self.encoder_config_, sequences, self.k, self.overlap)

    def set_weights(self, params: EncoderParams, config: EncoderConfig):
        self.params_ = params
        self.encoder_config_ = config
        return self


class TfidfLyricsRetriever(BaseEstimator):
    """TF-IDF over transcriptions with a distance-matrix interface."""

    def fit(self, corpus: Mapping[str, str | None], y=None):
        self.model_: TfIdfModel = tfidf_fit(corpus)
        return self

    def distance_matrix(self, queries: Sequence[str], candidates: Sequence[str]) -> DistanceMatrix:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() first")
        return tfidf_distance_matrix(self.model_, queries, candidates)
