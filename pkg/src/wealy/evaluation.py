"""Retrieval evaluation: chunk embeddings, best-match distances, MAP, baselines.

Track-level similarity is the maximum pairwise cosine similarity between the
two tracks' chunk embeddings ("best match"); distances are 1 minus that.
Rankings therefore only depend on the order of distances, and ``map_eval`` is
invariant under any strictly increasing transform of the matrix.

Distance matrices travel as WDST files:

    magic  b"WDST"
    u32    version (currently 1)
    u32    nq, u32 nc
    nq times: u16 id length, id UTF-8   (query ids)
    nc times: u16 id length, id UTF-8   (candidate ids)
    f32[]  nq * nc values, little-endian, row-major

This is also the ingestion format for externally computed audio-content
distances consumed by the fusion stage.
"""

from __future__ import annotations

import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .encoder import Embedding, EncoderConfig, EncoderParams, forward_batch
from .errors import (
    CorruptionError,
    DomainError,
    FormatError,
    IdLookupError,
    StorageError,
    ValidationError,
)
from .store import DatasetManifest, LatentSequence, test_windows
from .validation import worker_count

WDST_MAGIC = b"WDST"
WDST_VERSION = 1


@dataclass
class DistanceMatrix:
    query_ids: list[str]
    candidate_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != (len(self.query_ids), len(self.candidate_ids)):
            raise ValidationError(
                f"distance matrix shape {v.shape} does not match id lists "
                f"({len(self.query_ids)} x {len(self.candidate_ids)})"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("distance matrix contains non-finite values")
        self.values = v

    def row(self, query_id: str) -> np.ndarray:
        try:
            return self.values[self.query_ids.index(query_id)]
        except ValueError:
            raise IdLookupError(f"unknown query id {query_id!r}") from None


@dataclass
class EvalReport:
    map: float
    ci_halfwidth: float
    per_query_ap: list[float]
    n_queries: int

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "ci_halfwidth": self.ci_halfwidth,
            "n_queries": self.n_queries,
        }


# ---------------------------------------------------------------------------
# Embedding extraction and best-match distances
# ---------------------------------------------------------------------------

def embed_track(
    params: EncoderParams,
    config: EncoderConfig,
    seq: LatentSequence,
    k: int,
    overlap: float,
    track_id: str = "",
) -> list[Embedding]:
    """One eval-mode embedding per overlapping test window, in window order."""
    wins = test_windows(seq, k, overlap, track_id)
    batch = np.stack([w.data for w in wins])
    z = forward_batch(params, config, batch)
    return [
        Embedding(values=z[i], source_track=track_id, window_start=wins[i].start_index)
        for i in range(len(wins))
    ]


def embed_tracks(
    params: EncoderParams,
    config: EncoderConfig,
    sequences: Mapping[str, LatentSequence],
    k: int,
    overlap: float,
) -> dict[str, np.ndarray]:
    """Chunk-embedding matrices for many tracks; parallel over tracks.

    The worker count honours WEALY_THREADS; output order is input order
    either way.
    """
    ids = list(sequences)

    def one(track_id: str) -> np.ndarray:
        embs = embed_track(params, config, sequences[track_id], k, overlap, track_id)
        return np.stack([e.values for e in embs])

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            mats = list(pool.map(one, ids))
    else:
        mats = [one(t) for t in ids]
    return dict(zip(ids, mats))


def _normalized(chunks: np.ndarray) -> np.ndarray:
    z = np.asarray(chunks, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise DomainError("each track needs at least one chunk embedding")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("chunk embeddings must be nonzero")
    return z / norms


def track_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Best-match similarity: max cosine over all chunk pairs; symmetric."""
    return float(np.clip(_normalized(a) @ _normalized(b).T, -1.0, 1.0).max())


def distance_matrix(
    embeddings: Mapping[str, np.ndarray],
    queries: Sequence[str],
    candidates: Sequence[str],
) -> DistanceMatrix:
    """Best-match cosine distance (1 - max pairwise similarity), in [0, 2]."""
    for track_id in list(queries) + list(candidates):
        if track_id not in embeddings:
            raise IdLookupError(f"no embeddings for track {track_id!r}")
    normed = {t: _normalized(embeddings[t]) for t in set(queries) | set(candidates)}
    values = np.empty((len(queries), len(candidates)), dtype=np.float64)
    symmetric = list(queries) == list(candidates)
    for i, q in enumerate(queries):
        start = i if symmetric else 0
        for j in range(start, len(candidates)):
            sim = float(np.clip(normed[q] @ normed[candidates[j]].T, -1.0, 1.0).max())
            values[i, j] = 1.0 - sim
            if symmetric:
                values[j, i] = values[i, j]
    return DistanceMatrix(list(queries), list(candidates), values)


# ---------------------------------------------------------------------------
# Average precision and MAP
# ---------------------------------------------------------------------------

def average_precision(
    distances_row: np.ndarray,
    candidate_ids: Sequence[str],
    relevant: Iterable[str],
    query_id: str,
) -> float:
    """AP for one query row; the query itself is dropped from the candidates.

    Candidates are ranked by ascending distance, ties broken by ascending
    candidate id so the result is seed-free.
    """
    row = np.asarray(distances_row, dtype=np.float64)
    if row.shape != (len(candidate_ids),):
        raise ValidationError("row length does not match candidate list")
    keep = [i for i, c in enumerate(candidate_ids) if c != query_id]
    relevant = set(relevant) - {query_id}
    if not relevant:
        raise DomainError(f"query {query_id!r} has no relevant candidates")
    order = sorted(keep, key=lambda i: (row[i], candidate_ids[i]))
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, start=1):
        if candidate_ids[i] in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def map_eval(
    dm: DistanceMatrix,
    cliques: "DatasetManifest | Mapping[str, str]",
    seed: int = 0,
    n_resamples: int = 1000,
) -> EvalReport:
    """MAP over all queries whose clique has another member in the pool.

    ``cliques`` is a manifest or a plain track_id -> clique_id mapping;
    queries without a relevant candidate are skipped (their AP is undefined).
    """
    clique_of = (
        {r.track_id: r.clique_id for r in cliques.records}
        if isinstance(cliques, DatasetManifest)
        else dict(cliques)
    )
    for track_id in list(dm.query_ids) + list(dm.candidate_ids):
        if track_id not in clique_of:
            raise IdLookupError(f"no clique label for track {track_id!r}")
    by_clique: dict[str, set[str]] = {}
    for c in dm.candidate_ids:
        by_clique.setdefault(clique_of[c], set()).add(c)
    per_query: list[float] = []
    n_eligible = 0
    for i, q in enumerate(dm.query_ids):
        relevant = by_clique.get(clique_of[q], set()) - {q}
        if not relevant:
            continue
        n_eligible += 1
        per_query.append(average_precision(dm.values[i], dm.candidate_ids, relevant, q))
    if n_eligible == 0:
        raise DomainError("no query has a relevant candidate")
    mean_ap = float(np.mean(per_query))
    half = bootstrap_ci(per_query, n_resamples=n_resamples, seed=seed)
    return EvalReport(map=mean_ap, ci_halfwidth=half, per_query_ap=per_query, n_queries=n_eligible)


def bootstrap_ci(
    per_query_ap: Sequence[float],
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> float:
    """Percentile-bootstrap half-width of the mean AP over queries."""
    ap = np.asarray(per_query_ap, dtype=np.float64)
    if ap.size == 0:
        raise DomainError("bootstrap needs at least one AP value")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, ap.size, size=(n_resamples, ap.size))
    means = ap[idx].mean(axis=1)
    lo, hi = np.percentile(means, [50 * (1 - level), 100 - 50 * (1 - level)])
    return float((hi - lo) / 2.0)


def random_baseline(ids: Sequence[str], seed: int = 0) -> DistanceMatrix:
    """Uniform-random distances in (0, 1), symmetrized from the upper triangle."""
    n = len(ids)
    rng = np.random.default_rng(seed)
    values = rng.uniform(1e-12, 1.0, size=(n, n))
    upper = np.triu(values, 1)
    values = upper + upper.T + np.diag(np.diag(values))
    return DistanceMatrix(list(ids), list(ids), values)


# ---------------------------------------------------------------------------
# Non-instrumental oracle
# ---------------------------------------------------------------------------

_BRACKETS = re.compile(r"\[[^\]]*\]|\([^)]*\)")
_NON_WORD = re.compile(r"[^a-z0-9' ]+")

DEFAULT_FILLER_TOKENS = frozenset(
    {"la", "na", "da", "hmm", "mmm", "oh", "ah", "uh"}
)
DEFAULT_TAG_WORDS = frozenset({"instrumental", "music", "humming"})
FILLER_COVERAGE_LIMIT = 0.8
REPETITION_LIMIT = 0.7


def clean_transcription(text: str) -> str:
    """Lowercase, drop bracketed annotations and punctuation, collapse spaces."""
    lowered = text.lower()
    no_annotations = _BRACKETS.sub(" ", lowered)
    plain = _NON_WORD.sub(" ", no_annotations)
    return " ".join(plain.split())


def _bracket_tags(text: str) -> list[str]:
    return [m.group(0).lower() for m in _BRACKETS.finditer(text.lower())]


def _ngram_stats(tokens: list[str], n: int) -> tuple[int, int, float]:
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    if not grams:
        return 0, 0, 1.0
    counts: dict[tuple, int] = {}
    for g in grams:
        counts[g] = counts.get(g, 0) + 1
    repeated = sum(c for c in counts.values() if c > 1)
    return len(grams), len(counts), repeated / len(grams)


def _max_phrase_coverage(tokens: list[str]) -> float:
    # Largest fraction of the text claimed by non-overlapping repeats of a
    # single phrase of 3..8 words.
    best = 0.0
    total = len(tokens)
    for n in range(3, min(8, total // 2) + 1):
        seen: set[tuple] = set()
        for i in range(total - n + 1):
            phrase = tuple(tokens[i:i + n])
            if phrase in seen:
                continue
            seen.add(phrase)
            count = 0
            j = 0
            while j <= total - n:
                if tuple(tokens[j:j + n]) == phrase:
                    count += 1
                    j += n
                else:
                    j += 1
            best = max(best, count * n / total)
    return best


def oracle_is_valid(
    text: str | None,
    filler_tokens: frozenset[str] = DEFAULT_FILLER_TOKENS,
    tag_words: frozenset[str] = DEFAULT_TAG_WORDS,
) -> tuple[bool, list[str]]:
    """Transcription validity rules; returns (valid, failed rule labels).

    (i) at least 10 words, (ii) at least 5 alphanumeric characters,
    (iii) limited bigram/trigram repetition (at most 70% repeats, at least 3
    unique bigrams and 2 unique trigrams), (iv) no single phrase covering
    more than half the text, (v) no purely musical content (bracketed tags
    like "instrumental", or filler syllables covering more than 80% of the
    tokens).
    """
    failed: list[str] = []
    raw = text or ""
    cleaned = clean_transcription(raw)
    tokens = cleaned.split()

    if len(tokens) < 10:
        failed.append("i")
    if sum(ch.isalnum() for ch in cleaned) < 5:
        failed.append("ii")
    _, uniq_bi, rep_bi = _ngram_stats(tokens, 2)
    _, uniq_tri, rep_tri = _ngram_stats(tokens, 3)
    if uniq_bi < 3 or uniq_tri < 2 or max(rep_bi, rep_tri) > REPETITION_LIMIT:
        failed.append("iii")
    if tokens and _max_phrase_coverage(tokens) > 0.5:
        failed.append("iv")
    musical = any(any(w in tag for w in tag_words) for tag in _bracket_tags(raw))
    if tokens and not musical:
        filler = sum(1 for t in tokens if t in filler_tokens)
        musical = filler / len(tokens) > FILLER_COVERAGE_LIMIT
    if musical:
        failed.append("v")
    return not failed, failed


def oracle_distance_matrix(
    manifest: "DatasetManifest | Mapping[str, str]",
    validity: Mapping[str, bool],
    ids: Sequence[str] | None = None,
) -> DistanceMatrix:
    """Zero distance only for same-clique pairs whose both transcriptions are valid."""
    clique_of = (
        {r.track_id: r.clique_id for r in manifest.records}
        if isinstance(manifest, DatasetManifest)
        else dict(manifest)
    )
    ids = list(ids) if ids is not None else list(clique_of)
    for track_id in ids:
        if track_id not in validity:
            raise ValidationError(f"validity missing for track {track_id!r}")
    values = np.ones((len(ids), len(ids)), dtype=np.float64)
    for i, a in enumerate(ids):
        for j, b in enumerate(ids):
            if clique_of[a] == clique_of[b] and validity[a] and validity[b]:
                values[i, j] = 0.0
    return DistanceMatrix(ids, list(ids), values)


# ---------------------------------------------------------------------------
# WDST files
# ---------------------------------------------------------------------------

def save_distances(dm: DistanceMatrix, path: str | Path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(WDST_MAGIC)
            fh.write(struct.pack("<III", WDST_VERSION, len(dm.query_ids), len(dm.candidate_ids)))
            for track_id in list(dm.query_ids) + list(dm.candidate_ids):
                encoded = track_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
            fh.write(np.ascontiguousarray(dm.values, dtype="<f4").tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_distances(path: str | Path) -> DistanceMatrix:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != WDST_MAGIC:
        raise FormatError(f"{path}: not a WDST file")
    version, nq, nc = struct.unpack("<III", raw[4:16])
    if version != WDST_VERSION:
        raise FormatError(f"{path}: unsupported WDST version {version}")
    offset = 16
    ids: list[str] = []
    for _ in range(nq + nc):
        if offset + 2 > len(raw):
            raise CorruptionError(f"{path}: truncated id table")
        (n,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        ids.append(raw[offset:offset + n].decode("utf-8"))
        offset += n
    expected = nq * nc * 4
    if len(raw) - offset != expected:
        raise CorruptionError(
            f"{path}: payload is {len(raw) - offset} bytes, header promises {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=nq * nc, offset=offset).reshape(nq, nc)
    return DistanceMatrix(ids[:nq], ids[nq:], values.astype(np.float64))
