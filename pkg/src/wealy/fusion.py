"""Distance-level late fusion of an audio-content matrix with a lyrics matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DomainError
from .evaluation import DistanceMatrix


@dataclass
class FusionConfig:
    alpha: float = 1.5

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise DomainError("alpha must be finite and >= 0")


def fuse(d_audio: DistanceMatrix, d_lyrics: DistanceMatrix, alpha: float = 1.5) -> DistanceMatrix:
    """Elementwise d_audio + alpha * d_lyrics.

    Id lists must already be identical and identically ordered; use
    :func:`align_matrices` first if they are merely equal as sets.  No
    rescaling is applied to either matrix; alpha absorbs the scale.
    """
    FusionConfig(alpha)
    if d_audio.query_ids != d_lyrics.query_ids or d_audio.candidate_ids != d_lyrics.candidate_ids:
        raise AlignmentError("matrices have different id lists or orderings; align them first")
    values = d_audio.values + alpha * d_lyrics.values
    return DistanceMatrix(list(d_audio.query_ids), list(d_audio.candidate_ids), values)


def align_matrices(a: DistanceMatrix, b: DistanceMatrix) -> tuple[DistanceMatrix, DistanceMatrix]:
    """Reorder *b*'s rows and columns to *a*'s id ordering.

    The id sets must match exactly; the error message names the differing ids.
    """
    for kind, ids_a, ids_b in (
        ("query", a.query_ids, b.query_ids),
        ("candidate", a.candidate_ids, b.candidate_ids),
    ):
        diff = set(ids_a) ^ set(ids_b)
        if diff:
            raise AlignmentError(f"{kind} id sets differ: {sorted(diff)}")
    if a.query_ids == b.query_ids and a.candidate_ids == b.candidate_ids:
        return a, b
    qidx = [b.query_ids.index(q) for q in a.query_ids]
    cidx = [b.candidate_ids.index(c) for c in a.candidate_ids]
    values = b.values[np.ix_(qidx, cidx)]
    return a, DistanceMatrix(list(a.query_ids), list(a.candidate_ids), values)
