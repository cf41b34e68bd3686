"""Operator entry point.

Subcommands: synth, preprocess, extract-features, train, eval, report.
Every run is reproducible from (seed, config, data); the env var UBP_SEED
overrides the configured seed. Exit codes: 0 success, 1 data errors,
2 config errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    EpochTensor,
    OCCIPITAL_PARIETAL_17,
    STANDARD_63,
    SyntheticSpec,
    average_repetitions,
    build_feature_cache,
    crop_and_downsample,
    generate_synthetic,
    read_epochs,
    read_feature_cache,
    read_pnm,
    read_raster,
    select_channels,
    toy_vision_encoder,
    write_epochs,
    write_feature_cache,
    write_raster,
)
from .errors import ConfigError, UbpError
from .evaluation import evaluate, rank_csv_bytes, rank_gallery, report_json_bytes
from .numkernel import Rng, l2_normalize_rows
from .training import TrainConfig, fit
from .encoder import forward

_EXIT_DATA = 1
_EXIT_CONFIG = 2


def _load_json_config(path, allowed: set, what: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {what} config {path}: {e}") from None
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {what} config: {sorted(unknown)}")
    return raw


def _apply_seed_override(cfg: dict) -> dict:
    env = os.environ.get("UBP_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"UBP_SEED must be an integer, got {env!r}") from None
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SYNTH_KEYS = {f.name for f in fields(SyntheticSpec)} | {
    "seed", "test_fraction", "feature_dim", "r0", "c", "blur_lambda", "subject_id",
}


def cmd_synth(args) -> int:
    cfg = _load_json_config(args.spec, _SYNTH_KEYS, "synth")
    cfg = _apply_seed_override(cfg)
    seed = int(cfg.pop("seed", 0))
    test_fraction = float(cfg.pop("test_fraction", 0.2))
    feature_dim = int(cfg.pop("feature_dim", 64))
    r0 = float(cfg.pop("r0", 0.25))
    c = float(cfg.pop("c", 10.0))
    blur_lambda = float(cfg.pop("blur_lambda", 2.0))
    subject_id = str(cfg.pop("subject_id", "synth01"))
    try:
        spec = SyntheticSpec(**cfg)
    except UbpError as e:
        raise ConfigError(f"invalid generator settings: {e}") from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(spec, Rng(seed), test_fraction=test_fraction,
                            subject_id=subject_id)

    write_epochs(out / "train.ubpe", ds.train)
    write_epochs(out / "test.ubpe", ds.test)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    for image_id, img in sorted(ds.images.items()):
        write_raster(img_dir / f"{image_id:06d}.ubpi", img)
    cache = build_feature_cache(
        ds.images,
        lambda im: toy_vision_encoder(im, feature_dim, seed),
        r_levels=(r0 - c, r0, r0 + c),
        blur_lambda=blur_lambda,
        backbone_tag=f"toy-d{feature_dim}-s{seed}",
    )
    write_feature_cache(out / "features.ubpf", cache)

    effective = dict(cfg, seed=seed, test_fraction=test_fraction,
                     feature_dim=feature_dim, r0=r0, c=c,
                     blur_lambda=blur_lambda, subject_id=subject_id)
    artifacts = sorted(
        p for p in out.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    )
    manifest = {
        "seed": seed,
        "config": effective,
        "config_hash": _config_hash(effective),
        "gallery_size": len(ds.truth.test_ids),
        "n_train_images": len(ds.truth.train_ids),
        "n_train_samples": ds.train.n_samples,
        "n_test_samples": ds.test.n_samples,
        "artifacts": [
            {"path": str(p.relative_to(out)), "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in artifacts
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(artifacts)} artifacts to {out}")
    return 0


def _parse_channels(spec: str):
    if spec == "op17":
        return OCCIPITAL_PARIETAL_17
    items = [s.strip() for s in spec.split(",") if s.strip()]
    out = []
    for item in items:
        out.append(int(item) if item.lstrip("-").isdigit() else item)
    return out


def cmd_preprocess(args) -> int:
    e = read_epochs(args.input)
    if e.channel_names is None and e.n_channels == len(STANDARD_63):
        e.channel_names = list(STANDARD_63)
    if args.channels:
        e = select_channels(e, _parse_channels(args.channels))
    if args.window or args.factor != 1:
        window = tuple(float(v) for v in args.window.split(":")) if args.window else (
            0.0, 1000.0 * e.n_timepoints / e.sample_rate)
        e = crop_and_downsample(e, window, args.factor)
    if args.average:
        e = average_repetitions(e)
    write_epochs(args.output, e)
    print(f"{e.n_samples} samples x {e.n_channels} ch x {e.n_timepoints} pts "
          f"@ {e.sample_rate} Hz -> {args.output}")
    return 0


def cmd_extract_features(args) -> int:
    manifest = _load_json_config(args.images, {"images", "r0", "c", "lambda", "dim", "seed"},
                                 "extract")
    entries = manifest.get("images", [])
    if not entries:
        raise ConfigError("extract manifest lists no images")
    r0 = float(manifest.get("r0", 0.25))
    c = float(manifest.get("c", 10.0))
    lam = float(manifest.get("lambda", 2.0))
    dim = int(manifest.get("dim", 64))
    seed = int(manifest.get("seed", 0))

    images = {}
    for entry in entries:
        path = Path(entry["path"])
        if path.suffix == ".ubpi":
            img = read_raster(path)
        else:
            img = read_pnm(path)
        images[int(entry["id"])] = img
    cache = build_feature_cache(
        images,
        lambda im: toy_vision_encoder(im, dim, seed),
        r_levels=(r0 - c, r0, r0 + c),
        blur_lambda=lam,
        backbone_tag=f"toy-d{dim}-s{seed}",
    )
    write_feature_cache(args.out, cache)
    print(f"encoded {len(images)} images at 3 levels -> {args.out}")
    return 0


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} | {"train", "cache", "out"}


def cmd_train(args) -> int:
    raw = _load_json_config(args.config, _TRAIN_KEYS, "train")
    raw = _apply_seed_override(raw)
    train_paths = raw.pop("train", None)
    cache_path = raw.pop("cache", None)
    out_dir = Path(raw.pop("out", "."))
    if args.out:
        out_dir = Path(args.out)
    if not train_paths or not cache_path:
        raise ConfigError("train config must name 'train' epoch file(s) and a 'cache'")
    cfg = TrainConfig(**raw)

    if isinstance(train_paths, str):
        train_paths = [train_paths]
    tensors = [read_epochs(p) for p in train_paths]
    cache = read_feature_cache(cache_path)
    datasets = tensors[0] if cfg.mode == "intra" and len(tensors) == 1 else tensors

    checkpoint, report = fit(cfg, datasets, cache)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.ubpc"
    save_checkpoint(ckpt_path, checkpoint)
    (out_dir / "train_log.jsonl").write_text(report.log_lines())
    summary = {
        "subject": report.subject,
        "mode": report.mode,
        "seed": report.seed,
        "config_hash": report.config_hash,
        "best_epoch": report.best_epoch,
        "best_val_top1": round(report.best_val_top1, 4),
        "epochs_run": len(report.logs),
        "train_subjects": report.train_subjects,
    }
    (out_dir / "train_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"best val top-1 {report.best_val_top1:.2f}% at epoch {report.best_epoch}; "
          f"checkpoint -> {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    test = read_epochs(args.data)
    cache = read_feature_cache(args.cache)
    report = evaluate(checkpoint, test, cache, gallery_blur=args.gallery_blur)
    payload = report_json_bytes(report)
    if args.out:
        Path(args.out).write_bytes(payload)
    sys.stdout.write(payload.decode())
    if args.ranks:
        cfg = TrainConfig(**checkpoint.config)
        gallery_ids = np.array(sorted(int(i) for i in np.unique(test.image_ids)),
                               dtype=np.uint32)
        gallery = l2_normalize_rows(cache.matrix(gallery_ids, "base").astype(np.float64))
        x = test.data.reshape(test.n_samples, -1).astype(np.float32)
        h, _ = forward(checkpoint.params, x, train=False,
                       normalize=cfg.normalize_embeddings)
        id_to_row = {int(g): r for r, g in enumerate(gallery_ids)}
        true_rows = np.array([id_to_row[int(i)] for i in test.image_ids])
        res = rank_gallery(np.asarray(h, dtype=np.float64), gallery, true_indices=true_rows)
        Path(args.ranks).write_bytes(rank_csv_bytes(res, test.image_ids, gallery_ids))
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.reports:
        rec = json.loads(Path(path).read_text())
        rows.append(rec)
    lines = ["subject,top1,top5,map,mean_similarity"]
    for rec in rows:
        lines.append(f"{rec['subject']},{rec['top1']},{rec['top5']},"
                     f"{rec['map']},{rec['mean_similarity']}")
    means = {k: float(np.mean([r[k] for r in rows])) for k in
             ("top1", "top5", "map", "mean_similarity")}
    lines.append(f"mean,{round(means['top1'], 6)},{round(means['top5'], 6)},"
                 f"{round(means['map'], 6)},{round(means['mean_similarity'], 6)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubp",
        description="Blur-prior contrastive training and zero-shot retrieval evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with features")
    p.add_argument("--spec", required=True, help="JSON file of generator settings")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="select channels, crop, decimate, average")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--channels", default=None,
                   help="comma list of names/indices, or 'op17'")
    p.add_argument("--window", default=None, help="start:end in ms")
    p.add_argument("--factor", type=int, default=1, help="decimation factor")
    p.add_argument("--average", action="store_true", help="average repetitions")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("extract-features",
                       help="encode images at the three blur levels (toy encoder)")
    p.add_argument("--images", required=True, help="JSON manifest of {id, path} entries")
    p.add_argument("--out", required=True, help="output feature cache file")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", help="train an encoder from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test epoch file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.add_argument("--ranks", default=None, help="write the CSV rank dump here")
    p.add_argument("--gallery-blur", choices=("base", "none"), default="base")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="summarize evaluation reports as CSV")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return _EXIT_CONFIG
    except UbpError as e:
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_DATA
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return _EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
