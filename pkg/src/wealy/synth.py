"""Synthetic dataset generator: a desk-scale stand-in for real extractions.

Every clique owns a random unit "lyrics signature"; versions of the clique
emit rows that mix that signature (projected into latent space by a shared
random map) with per-row noise and a slowly drifting nuisance component drawn
from a second shared subspace.  Which rows carry signal, their gains, and the
drift path are version-specific, so versions of one clique agree in content
but not row-by-row; plain averaging is partially poisoned by the drift while
a trained model can learn to suppress it.

Transcriptions share a per-clique word pool so the text-based baselines and
the validity oracle have something real to chew on.  Everything is
deterministic given the seed, down to the written bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .store import DatasetManifest, LatentSequence, TrackRecord, save_manifest, write_latents

SIGNAL_FRACTION = 0.6   # share of rows carrying the clique signature
GAIN_JITTER = 0.25      # per-row amplitude jitter on signal rows
DRIFT_RATIO = 0.75      # drift magnitude relative to noise_sigma
DRIFT_RHO = 0.99        # AR(1) coefficient of the drift path

_COMMON_WORDS = [f"c{i:02d}" for i in range(40)]
_TOPIC_WORDS = [f"w{i:03d}" for i in range(400)]
_LANGUAGES = ["en", "en", "en", "es", "en", "fr", "de"]


@dataclass
class SynthSpec:
    n_cliques: int = 200
    versions_min: int = 2
    versions_max: int = 4
    d: int = 32
    m_min: int = 150
    m_max: int = 400
    signature_dim: int = 8
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_cliques", "versions_min", "versions_max", "d", "m_min", "m_max",
                     "signature_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.versions_min > self.versions_max or self.m_min > self.m_max:
            raise ValidationError("ranges must be ordered min <= max")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")


def _split_assignment(n_cliques: int, rng: np.random.Generator) -> list[str]:
    order = rng.permutation(n_cliques)
    n_train = round(0.7 * n_cliques)
    n_val = round(0.15 * n_cliques)
    split = [""] * n_cliques
    for rank, ci in enumerate(order):
        if rank < n_train:
            split[ci] = "train"
        elif rank < n_train + n_val:
            split[ci] = "val"
        else:
            split[ci] = "test"
    return split


def _transcription(clique_words: list[str], rng: np.random.Generator, n_words: int = 30) -> str:
    words = []
    for _ in range(n_words):
        if rng.random() < 0.7:
            words.append(clique_words[int(rng.integers(len(clique_words)))])
        else:
            words.append(_COMMON_WORDS[int(rng.integers(len(_COMMON_WORDS)))])
    return " ".join(words)


def _version_latents(
    base: np.ndarray,
    drift_map: np.ndarray,
    m: int,
    spec: SynthSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    d, s_dim = spec.d, spec.signature_dim
    signal = (rng.random(m) < SIGNAL_FRACTION).astype(np.float64)
    gains = 1.0 + GAIN_JITTER * rng.standard_normal(m)
    rows = (signal * gains)[:, None] * base[None, :]
    if spec.noise_sigma > 0:
        coef = rng.standard_normal(s_dim)
        path = np.empty((m, s_dim))
        decay = np.sqrt(1.0 - DRIFT_RHO ** 2)
        for t in range(m):
            path[t] = coef
            coef = DRIFT_RHO * coef + decay * rng.standard_normal(s_dim)
        rows += DRIFT_RATIO * spec.noise_sigma * (path @ drift_map)
        rows += spec.noise_sigma * rng.standard_normal((m, d)) / np.sqrt(d)
    return rows.astype(np.float32)


def synth_dataset(spec: SynthSpec, out_dir: str | Path) -> DatasetManifest:
    """Generate WLAT files and a manifest under *out_dir*; returns the manifest."""
    out_dir = Path(out_dir)
    latent_dir = out_dir / "latents"
    latent_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    d, s_dim = spec.d, spec.signature_dim
    sig_map = rng.standard_normal((s_dim, d)) / np.sqrt(d)
    drift_map = rng.standard_normal((s_dim, d)) / np.sqrt(s_dim * d)
    splits = _split_assignment(spec.n_cliques, rng)

    records: list[TrackRecord] = []
    for ci in range(spec.n_cliques):
        clique_id = f"clique{ci:04d}"
        sig = rng.standard_normal(s_dim)
        sig /= np.linalg.norm(sig)
        base = sig @ sig_map
        base /= np.linalg.norm(base)
        word_idx = rng.choice(len(_TOPIC_WORDS), size=12, replace=False)
        clique_words = [_TOPIC_WORDS[int(i)] for i in word_idx]
        n_versions = int(rng.integers(spec.versions_min, spec.versions_max + 1))
        for vi in range(n_versions):
            track_id = f"{clique_id}_v{vi}"
            m = int(rng.integers(spec.m_min, spec.m_max + 1))
            latents = _version_latents(base, drift_map, m, spec, rng)
            rel_path = f"latents/{track_id}.wlat"
            write_latents(LatentSequence(latents), out_dir / rel_path)
            records.append(TrackRecord(
                track_id=track_id,
                clique_id=clique_id,
                split=splits[ci],
                latent_path=rel_path,
                transcription=_transcription(clique_words, rng),
                language=_LANGUAGES[ci % len(_LANGUAGES)],
                duration_s=round(m / 5.0, 1),
            ))

    manifest = DatasetManifest(records=records, dataset_name="synthetic", d=d, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.jsonl")
    return manifest
