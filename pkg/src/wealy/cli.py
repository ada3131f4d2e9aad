"""Command-line entry point.

Every subcommand prints one machine-readable JSON line on success and exits
0; validation/configuration problems exit 1 and file-format or I/O problems
exit 2.  Set WEALY_THREADS to allow parallel workers where supported.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import avgemb_distance_matrix, tfidf_distance_matrix, tfidf_fit
from .encoder import EncoderConfig
from .errors import (
    AlignmentError,
    ConfigurationError,
    DomainError,
    FormatError,
    IdLookupError,
    StorageError,
    ValidationError,
    WealyError,
)
from .evaluation import (
    load_distances,
    map_eval,
    oracle_distance_matrix,
    oracle_is_valid,
    random_baseline,
    save_distances,
)
from .evaluation import distance_matrix as best_match_distance_matrix
from .evaluation import embed_tracks
from .fusion import align_matrices, fuse
from .optim import TrainConfig
from .store import LatentStore, load_manifest, validate_manifest
from .synth import SynthSpec, synth_dataset
from .trainer import load_checkpoint, train

USAGE_EXIT = 1
IO_EXIT = 2


def _emit(payload: dict) -> None:
    print(json.dumps(payload))


def _require_file(path: str, flag: str) -> str:
    if not Path(path).is_file():
        raise ValidationError(f"{flag}: no such file: {path}")
    return path


def _load_manifest(path: str):
    manifest = load_manifest(_require_file(path, "--manifest"))
    if not manifest.records:
        raise ValidationError(f"manifest {path} holds no records")
    return manifest


def _split_ids(manifest, split: str | None) -> list[str]:
    records = manifest.records if split is None else manifest.by_split(split)
    if not records:
        raise ValidationError(f"no records in split {split!r}")
    return [r.track_id for r in records]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = SynthSpec(
        n_cliques=args.cliques,
        versions_min=args.versions[0],
        versions_max=args.versions[1],
        d=args.d,
        m_min=args.m[0],
        m_max=args.m[1],
        signature_dim=args.signature_dim,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    manifest = synth_dataset(spec, args.out)
    _emit({
        "manifest": str(Path(args.out) / "manifest.jsonl"),
        "n_tracks": len(manifest.records),
        "n_cliques": args.cliques,
    })


def cmd_manifest_validate(args) -> int | None:
    manifest = _load_manifest(args.manifest)
    report = validate_manifest(manifest)
    _emit({
        "manifest": args.manifest,
        "ok": report.ok,
        "errors": report.errors,
        "warnings": report.warnings,
    })
    if not report.ok:
        return USAGE_EXIT
    return None


def cmd_train(args) -> None:
    with open(_require_file(args.config, "--config"), encoding="utf-8") as fh:
        raw = json.load(fh)
    train_config = TrainConfig.from_dict(raw)
    encoder_config = EncoderConfig(**raw.get("encoder", {}))
    manifest = _load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.wckp"
    history = out_dir / "history.jsonl"
    log = None if args.quiet else lambda msg: print(msg, file=sys.stderr)
    result = train(
        train_config, encoder_config, manifest,
        checkpoint_path=ckpt, history_path=history, log=log,
    )
    _emit({
        "checkpoint": str(ckpt),
        "history": str(history),
        "best_epoch": result.history.best_epoch,
        "best_val_map": result.history.best_val_map,
        "epochs_run": len(result.history.epochs),
        "stopped_reason": result.history.stopped_reason,
    })


def cmd_embed(args) -> None:
    params, config = load_checkpoint(_require_file(args.ckpt, "--ckpt"))
    manifest = _load_manifest(args.manifest)
    store = LatentStore(manifest)
    ids = _split_ids(manifest, args.split)
    sequences = {t: store.get(t) for t in ids}
    embeddings = embed_tracks(params, config, sequences, args.k, args.overlap)
    dm = best_match_distance_matrix(embeddings, ids, ids)
    save_distances(dm, args.out)
    _emit({
        "distances": args.out,
        "n_tracks": len(ids),
        "chunks_total": int(sum(v.shape[0] for v in embeddings.values())),
    })


def cmd_eval(args) -> None:
    dm = load_distances(_require_file(args.distances, "--distances"))
    manifest = _load_manifest(args.manifest)
    report = map_eval(dm, manifest, seed=args.seed)
    _emit({"distances": args.distances, **report.to_dict()})


def cmd_baseline(args) -> None:
    manifest = _load_manifest(args.manifest)
    ids = _split_ids(manifest, args.split)
    if args.kind == "tfidf":
        model = tfidf_fit({r.track_id: r.transcription for r in manifest.records})
        dm = tfidf_distance_matrix(model, ids, ids)
    elif args.kind == "avgemb":
        dm = avgemb_distance_matrix(manifest, LatentStore(manifest), ids)
    elif args.kind == "random":
        dm = random_baseline(ids, seed=args.seed)
    else:  # oracle
        wanted = set(ids)
        validity = {
            r.track_id: oracle_is_valid(r.transcription)[0]
            for r in manifest.records if r.track_id in wanted
        }
        dm = oracle_distance_matrix(manifest, validity, ids)
    save_distances(dm, args.out)
    _emit({"baseline": args.kind, "distances": args.out, "n_tracks": len(ids)})


def cmd_fuse(args) -> None:
    audio = load_distances(_require_file(args.audio, "--audio"))
    lyrics = load_distances(_require_file(args.lyrics, "--lyrics"))
    if args.align:
        audio, lyrics = align_matrices(audio, lyrics)
    fused = fuse(audio, lyrics, args.alpha)
    save_distances(fused, args.out)
    _emit({"fused": args.out, "alpha": args.alpha})


def cmd_sweep_alpha(args) -> None:
    audio = load_distances(args.audio)
    lyrics = load_distances(args.lyrics)
    audio, lyrics = align_matrices(audio, lyrics)
    manifest = _load_manifest(args.manifest)
    alphas = []
    maps = []
    alpha = args.min
    while alpha <= args.max + 1e-12:
        report = map_eval(fuse(audio, lyrics, alpha), manifest, seed=args.seed)
        alphas.append(round(alpha, 6))
        maps.append(report.map)
        alpha += args.step
    best = int(np.argmax(maps))
    _emit({"alphas": alphas, "maps": maps, "best_alpha": alphas[best], "best_map": maps[best]})


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wealy",
        description="Lyrics-aware version retrieval: training, baselines, evaluation, fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--cliques", type=int, default=200)
    p.add_argument("--versions", type=int, nargs=2, default=[2, 4], metavar=("MIN", "MAX"))
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--m", type=int, nargs=2, default=[150, 400], metavar=("MIN", "MAX"))
    p.add_argument("--signature-dim", type=int, default=8)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("manifest", help="manifest utilities")
    msub = p.add_subparsers(dest="manifest_command", required=True)
    pv = msub.add_parser("validate", help="check a manifest and its latent files")
    pv.add_argument("--manifest", required=True)
    pv.set_defaults(func=cmd_manifest_validate)

    p = sub.add_parser("train", help="train the encoder")
    p.add_argument("--config", required=True, help="JSON file with TrainConfig fields (+ optional 'encoder' object)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", default="runs/latest")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a split and write best-match distances")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--overlap", type=float, default=0.9)
    p.add_argument("--k", type=int, default=1500)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="mean average precision of a distance matrix")
    p.add_argument("--distances", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="reference distance matrices")
    p.add_argument("kind", choices=["tfidf", "avgemb", "random", "oracle"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("fuse", help="late-fuse two distance matrices")
    p.add_argument("--audio", required=True)
    p.add_argument("--lyrics", required=True)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--align", action="store_true", help="reorder the lyrics matrix to the audio ids first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("sweep-alpha", help="MAP for a range of fusion weights")
    p.add_argument("--audio", required=True)
    p.add_argument("--lyrics", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--min", type=float, default=0.0)
    p.add_argument("--max", type=float, default=3.0)
    p.add_argument("--step", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sweep_alpha)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except (ValidationError, ConfigurationError, DomainError, AlignmentError, IdLookupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (FormatError, StorageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_EXIT
    except WealyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
