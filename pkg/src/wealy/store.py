"""Latent-sequence storage, dataset manifests, and windowing.

This module is the bridge between whatever produced the per-track latent
matrices (a speech-model extractor, or the synthetic generator) and the
training/evaluation pipeline.  Latents live in WLAT files, one per track:

    magic  b"WLAT"
    u32    format version (currently 1)
    u32    m   number of rows (latents)
    u32    d   latent dimension
    f32[]  m * d values, little-endian, row-major

All integers are little-endian.  Dataset metadata is a JSON-lines manifest
with exactly the fields ``track_id``, ``clique_id``, ``split``,
``latent_path``, ``transcription``, ``language``, ``duration_s`` (the last
three nullable); ``latent_path`` is resolved relative to the manifest's
directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptionError,
    FormatError,
    StorageError,
    ValidationError,
)

WLAT_MAGIC = b"WLAT"
WLAT_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class LatentSequence:
    """One track's latent matrix, shape (m, d), float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValidationError(f"latent matrix must be 2-d and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("latent matrix contains non-finite values")
        self.data = arr

    @property
    def m(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class Window:
    """A fixed-length slice (k rows) of a latent sequence."""

    data: np.ndarray
    source_track: str = ""
    start_index: int = 0

    @property
    def k(self) -> int:
        return self.data.shape[0]


@dataclass
class TrackRecord:
    track_id: str
    clique_id: str
    split: str
    latent_path: str
    transcription: str | None = None
    language: str | None = None
    duration_s: float | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(
                f"track {self.track_id!r}: split must be one of {SPLITS}, got {self.split!r}"
            )


@dataclass
class DatasetManifest:
    records: list[TrackRecord]
    dataset_name: str = ""
    d: int | None = None
    root: Path = field(default_factory=Path)

    def resolve(self, record: TrackRecord) -> Path:
        return self.root / record.latent_path

    def by_split(self, split: str) -> list[TrackRecord]:
        return [r for r in self.records if r.split == split]

    def cliques(self, split: str | None = None) -> dict[str, list[TrackRecord]]:
        """Group records by clique id, optionally restricted to one split."""
        groups: dict[str, list[TrackRecord]] = {}
        for r in self.records:
            if split is not None and r.split != split:
                continue
            groups.setdefault(r.clique_id, []).append(r)
        return groups


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# ---------------------------------------------------------------------------
# WLAT files
# ---------------------------------------------------------------------------

def write_latents(seq: LatentSequence, path: str | Path) -> None:
    """Write *seq* to a WLAT file. Read back with :func:`read_latents`."""
    if not np.all(np.isfinite(seq.data)):
        raise ValidationError("refusing to write non-finite latents")
    payload = np.ascontiguousarray(seq.data, dtype="<f4").tobytes()
    header = WLAT_MAGIC + struct.pack("<III", WLAT_VERSION, seq.m, seq.d)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_latents(path: str | Path) -> LatentSequence:
    """Read a WLAT file, checking magic, version, and payload length."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != WLAT_MAGIC:
        raise FormatError(f"{path}: not a WLAT file")
    version, m, d = struct.unpack("<III", raw[4:16])
    if version != WLAT_VERSION:
        raise FormatError(f"{path}: unsupported WLAT version {version}")
    expected = m * d * 4
    body = raw[16:]
    if len(body) != expected:
        raise CorruptionError(
            f"{path}: payload is {len(body)} bytes, header promises {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(m, d)
    return LatentSequence(data.copy())


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

_MANIFEST_FIELDS = (
    "track_id", "clique_id", "split", "latent_path",
    "transcription", "language", "duration_s",
)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest as JSON-lines, one record per line."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for r in manifest.records:
                row = {
                    "track_id": r.track_id,
                    "clique_id": r.clique_id,
                    "split": r.split,
                    "latent_path": r.latent_path,
                    "transcription": r.transcription,
                    "language": r.language,
                    "duration_s": r.duration_s,
                }
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_manifest(path: str | Path, dataset_name: str | None = None) -> DatasetManifest:
    """Load a JSON-lines manifest.

    The latent dimension ``d`` is taken from the first readable latent file
    and may be None if none resolves; :func:`validate_manifest` reports any
    disagreement across files.
    """
    path = Path(path)
    records: list[TrackRecord] = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                missing = [k for k in ("track_id", "clique_id", "split", "latent_path") if k not in row]
                if missing:
                    raise FormatError(f"{path}:{lineno}: missing fields {missing}")
                records.append(TrackRecord(
                    track_id=row["track_id"],
                    clique_id=row["clique_id"],
                    split=row["split"],
                    latent_path=row["latent_path"],
                    transcription=row.get("transcription"),
                    language=row.get("language"),
                    duration_s=row.get("duration_s"),
                ))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc

    manifest = DatasetManifest(
        records=records,
        dataset_name=dataset_name or path.stem,
        root=path.parent,
    )
    for r in records:
        p = manifest.resolve(r)
        if p.is_file():
            try:
                manifest.d = read_latents(p).d
            except FormatError:
                continue
            break
    return manifest


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    """Check per-record and cross-record invariants, without raising.

    Problems become report entries: duplicate ids and broken/mismatched
    latent files are errors; a train clique with a single member is only a
    warning (it cannot form a positive pair, so it is skipped in training).
    """
    report = ValidationReport()
    seen: set[str] = set()
    for r in manifest.records:
        if r.track_id in seen:
            report.errors.append(f"duplicate track_id {r.track_id!r}")
        seen.add(r.track_id)
        p = manifest.resolve(r)
        if not p.is_file():
            report.errors.append(f"{r.track_id}: missing latent file {r.latent_path}")
            continue
        try:
            seq = read_latents(p)
        except (FormatError, StorageError) as exc:
            report.errors.append(f"{r.track_id}: unreadable latent file ({exc})")
            continue
        if manifest.d is not None and seq.d != manifest.d:
            report.errors.append(
                f"{r.track_id}: latent dimension {seq.d} != manifest dimension {manifest.d}"
            )
    for clique_id, members in manifest.cliques("train").items():
        if len(members) < 2:
            report.warnings.append(
                f"untrainable clique {clique_id!r}: only {len(members)} train member(s)"
            )
    return report


class LatentStore:
    """Read-through cache of the latent sequences behind a manifest.

    Files are immutable after write, so cached reads are safe to share
    across threads; misses raise the underlying storage/format errors.
    """

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._paths = {r.track_id: manifest.resolve(r) for r in manifest.records}
        self._cache: dict[str, LatentSequence] = {}

    def get(self, track_id: str) -> LatentSequence:
        seq = self._cache.get(track_id)
        if seq is None:
            if track_id not in self._paths:
                raise ValidationError(f"unknown track_id {track_id!r}")
            seq = read_latents(self._paths[track_id])
            self._cache[track_id] = seq
        return seq


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------

def _tile_to_k(data: np.ndarray, k: int) -> np.ndarray:
    # Cyclic tiling for sequences shorter than k; avoids zero-padding, which
    # would distort attention statistics.
    m = data.shape[0]
    reps = -(-k // m)
    return np.concatenate([data] * reps, axis=0)[:k]


def sample_train_window(
    seq: LatentSequence, k: int, rng: np.random.Generator, source_track: str = ""
) -> Window:
    """Draw one training window: a uniform-random k-row slice of *seq*.

    Sequences shorter than k are tiled cyclically to length k.  The draw is
    deterministic given the generator state.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if seq.m < k:
        return Window(_tile_to_k(seq.data, k), source_track, 0)
    start = int(rng.integers(0, seq.m - k + 1))
    return Window(seq.data[start:start + k].copy(), source_track, start)


def first_window(seq: LatentSequence, k: int, source_track: str = "") -> Window:
    """The deterministic head window: rows [0, k), tiled if the track is short."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if seq.m < k:
        return Window(_tile_to_k(seq.data, k), source_track, 0)
    return Window(seq.data[:k].copy(), source_track, 0)


def test_windows(
    seq: LatentSequence, k: int, overlap: float, source_track: str = ""
) -> list[Window]:
    """Overlapping evaluation windows covering the whole sequence.

    Stride is ``max(1, round(k * (1 - overlap)))``.  Windows start at 0,
    stride, 2*stride, ... while they fit; if the last one does not reach the
    final row, an extra end-aligned window (start = m - k) is appended so the
    tail is never dropped.  A short sequence yields a single tiled window.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not (0 <= overlap < 1):
        raise ValidationError(f"overlap must lie in [0, 1), got {overlap}")
    if seq.m < k:
        return [Window(_tile_to_k(seq.data, k), source_track, 0)]
    stride = max(1, round(k * (1 - overlap)))
    starts = list(range(0, seq.m - k + 1, stride))
    if starts[-1] + k < seq.m:
        starts.append(seq.m - k)
    return [Window(seq.data[s:s + k].copy(), source_track, s) for s in starts]
