"""Reference systems: TF-IDF cosine over transcriptions and raw-latent averaging.

Both emit the same DistanceMatrix the trained encoder does, so every baseline
plugs into ``map_eval`` unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .encoder import EncoderConfig
from .errors import DomainError, IdLookupError
from .evaluation import DistanceMatrix, clean_transcription
from .optim import TrainConfig
from .store import DatasetManifest, LatentStore
from .trainer import TrainResult, train


@dataclass
class TfIdfModel:
    vocabulary: dict[str, int]
    idf: np.ndarray
    doc_vectors: dict[str, dict[int, float]]


def _tokenize(text: str | None) -> list[str]:
    return clean_transcription(text or "").split()


def tfidf_fit(corpus: Mapping[str, str | None]) -> TfIdfModel:
    """Fit TF-IDF on raw counts with the smoothed idf ln((1+D)/(1+df)) + 1.

    Document vectors are L2-normalized; an empty transcription yields an
    empty vector.
    """
    if not corpus:
        raise DomainError("corpus must be non-empty")
    tokenized = {doc_id: _tokenize(text) for doc_id, text in corpus.items()}
    vocabulary: dict[str, int] = {}
    df: dict[int, int] = {}
    for tokens in tokenized.values():
        for tok in set(tokens):
            idx = vocabulary.setdefault(tok, len(vocabulary))
            df[idx] = df.get(idx, 0) + 1
    n_docs = len(corpus)
    idf = np.array(
        [math.log((1 + n_docs) / (1 + df[i])) + 1.0 for i in range(len(vocabulary))],
        dtype=np.float64,
    )
    doc_vectors: dict[str, dict[int, float]] = {}
    for doc_id, tokens in tokenized.items():
        weights: dict[int, float] = {}
        for tok in tokens:
            idx = vocabulary[tok]
            weights[idx] = weights.get(idx, 0.0) + idf[idx]
        norm = math.sqrt(sum(w * w for w in weights.values()))
        doc_vectors[doc_id] = {i: w / norm for i, w in weights.items()} if norm else {}
    return TfIdfModel(vocabulary=vocabulary, idf=idf, doc_vectors=doc_vectors)


def _sparse_cosine(a: dict[int, float], b: dict[int, float]) -> float:
    # Vectors are unit-norm, so the dot product is the cosine.
    if len(b) < len(a):
        a, b = b, a
    return min(1.0, sum(w * b.get(i, 0.0) for i, w in a.items()))


def tfidf_distance_matrix(
    model: TfIdfModel, queries: Sequence[str], candidates: Sequence[str]
) -> DistanceMatrix:
    """1 - cosine over the fitted vectors; empty-vector pairs get distance 1."""
    for doc_id in list(queries) + list(candidates):
        if doc_id not in model.doc_vectors:
            raise IdLookupError(f"document {doc_id!r} was not in the fitted corpus")
    values = np.ones((len(queries), len(candidates)), dtype=np.float64)
    for i, q in enumerate(queries):
        qv = model.doc_vectors[q]
        if not qv:
            continue
        for j, c in enumerate(candidates):
            cv = model.doc_vectors[c]
            if cv:
                values[i, j] = 1.0 - _sparse_cosine(qv, cv)
    return DistanceMatrix(list(queries), list(candidates), values)


def average_latents(manifest: DatasetManifest, store: LatentStore, ids: Sequence[str]) -> np.ndarray:
    """Per-track column mean over the full latent matrix (no windowing)."""
    means = np.empty((len(ids), manifest.d), dtype=np.float64)
    for i, track_id in enumerate(ids):
        means[i] = store.get(track_id).data.astype(np.float64).mean(axis=0)
    return means


def avgemb_distance_matrix(
    manifest: DatasetManifest, store: LatentStore | None = None, ids: Sequence[str] | None = None
) -> DistanceMatrix:
    """Cosine distance between raw averaged latents, without any training."""
    store = store or LatentStore(manifest)
    ids = list(ids) if ids is not None else [r.track_id for r in manifest.records]
    means = average_latents(manifest, store, ids)
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    normed = means / safe
    values = np.clip(1.0 - normed @ normed.T, 0.0, 2.0)
    # Zero-norm means carry no direction; give them maximal distance.
    dead = (norms[:, 0] == 0)
    values[dead, :] = 1.0
    values[:, dead] = 1.0
    return DistanceMatrix(ids, list(ids), values)


def avg_mlp_pipeline(
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    manifest: DatasetManifest,
    store: LatentStore | None = None,
    **train_kwargs,
) -> TrainResult:
    """Train the average+MLP ablation end to end with the shared trainer."""
    if encoder_config.variant != "avg_mlp":
        raise DomainError("avg_mlp_pipeline requires an avg_mlp encoder configuration")
    return train(train_config, encoder_config, manifest, store, **train_kwargs)
