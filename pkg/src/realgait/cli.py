"""``realgait`` command line: extract, gei, train, embed, eval.

Stages talk only through on-disk artifacts, so each can be rerun alone.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .evaluation import EmbeddingStore, EvaluationError, run_protocol
from .gei import gei_cluster, gei_full, gei_piecewise
from .io import (DataError, SilhouetteTreeSource, find_video, read_images, read_sequence, read_video,
                 to_model_input, write_extracted, write_geis)
from .manifest import ManifestError, build_probe_gallery, load_manifest
from .model import ModelConfig, RealGait, embed, load_checkpoint
from .sampling import SamplingConfig, eval_indices
from .silhouette import GMMParams, InputVariant, extract_video
from .training import Trainer, TrainSchedule, TrainingError, initialize

log = logging.getLogger("realgait")


class CLIError(RuntimeError):
    pass


def _require(cfg, key: str) -> Path:
    value = cfg[key]
    if not value:
        raise CLIError(f"{key} is not set (use --set {key}=... or the config file)")
    return Path(value)


# --- builders from config ---------------------------------------------------------

def gmm_params(cfg) -> GMMParams:
    return GMMParams(cfg["extract.history"], cfg["extract.var_threshold"], cfg["extract.detect_shadows"],
                     cfg["extract.learning_rate"], cfg["extract.morphology"])


def input_variant(cfg) -> InputVariant:
    return InputVariant(cfg["extract.pedestrian_mode"], cfg["extract.background_mode"], cfg["extract.bins"])


def sampling_config(cfg) -> SamplingConfig:
    return SamplingConfig(cfg["sampling.mode"], cfg["sampling.m"], cfg["sampling.u"], cfg["sampling.l"],
                          cfg["sampling.s"], cfg["sampling.strict_paper_bound"], cfg["sampling.eval_max_frames"])


def model_config(cfg) -> ModelConfig:
    return ModelConfig(cfg["model.input_size"], cfg["model.in_channels"], cfg["model.use_alignment"],
                       cfg["model.block23_stride"], cfg["model.pyramid_u"], cfg["model.pyramid_v"],
                       cfg["model.patch_dim"], cfg["model.ppm_variant"], cfg["model.channel_scale"])


def train_schedule(cfg) -> TrainSchedule:
    return TrainSchedule(phases=cfg["train.phases"], margin=cfg["train.margin"], seed=cfg["run.seed"],
                         p=cfg["train.p"], k=cfg["train.k"], checkpoint_every=cfg["train.checkpoint_every"],
                         log_every=cfg["train.log_every"], loss_average=cfg["train.loss_average"],
                         deterministic=cfg["run.deterministic"], prefetch=cfg["train.prefetch"])


# --- extract --------------------------------------------------------------------

def _extract_one(job):
    record, video_path, out_root, gmm, variant = job
    indices, frames = read_video(video_path, record.frame_range)
    result = extract_video(frames, indices, record, gmm, variant)
    write_extracted(out_root, record, result, variant)
    return record.video_id, len(result.images), list(result.dropped)


def cmd_extract(cfg, args) -> int:
    manifest = load_manifest(_require(cfg, "paths.manifest"))
    video_root = _require(cfg, "paths.videos")
    out_root = _require(cfg, "paths.silhouettes")
    records = manifest.videos(None)
    if args.videos:
        wanted = set(args.videos)
        records = [r for r in records if r.video_id in wanted]
        missing = wanted - {r.video_id for r in records}
        if missing:
            raise CLIError(f"videos not in manifest: {sorted(missing)}")
    # resolve every input before writing anything
    jobs = [(r, find_video(video_root, r.video_id), out_root, gmm_params(cfg), input_variant(cfg))
            for r in records]
    out_root.mkdir(parents=True, exist_ok=True)
    done = []
    try:
        results = []
        for res in _map_iter(_extract_one, jobs, cfg["run.workers"]):
            results.append(res)
            done.append(res[0])
    except BaseException:
        for vid in done:
            shutil.rmtree(out_root / vid, ignore_errors=True)
        raise
    summary = {vid: {"kept": kept, "dropped": dropped} for vid, kept, dropped in sorted(results)}
    with open(out_root / "extract_summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    total_drop = sum(len(v["dropped"]) for v in summary.values())
    print(f"extracted {len(summary)} video(s) into {out_root}; {total_drop} frame(s) dropped")
    for vid, v in summary.items():
        if v["dropped"]:
            print(f"  {vid}: kept {v['kept']}, dropped frames {v['dropped']}")
    return 0


def _map_iter(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        for i in items:
            yield fn(i)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(fn, items)


# --- gei ------------------------------------------------------------------------

def _gei_one(job):
    video_dir, out_dir, kinds, k, penalty, min_seg, seed = job
    seq = read_sequence(video_dir)
    geis, segments = {}, None
    if "full" in kinds:
        geis["full"] = [gei_full(seq)]
    if "cluster" in kinds:
        geis["cluster"] = gei_cluster(seq, min(k, len(seq)), seed)
    if "piecewise" in kinds:
        geis["piecewise"], segments = gei_piecewise(seq, penalty, min_seg)
    write_geis(out_dir, geis, segments)
    return seq.video_id, {kind: len(v) for kind, v in geis.items()}


def cmd_gei(cfg, args) -> int:
    manifest = load_manifest(_require(cfg, "paths.manifest"))
    sil_root = _require(cfg, "paths.silhouettes")
    out_root = _require(cfg, "paths.geis")
    kinds = set(cfg["gei.kinds"])
    unknown = kinds - {"full", "cluster", "piecewise"}
    if unknown:
        raise CLIError(f"unknown GEI kinds {sorted(unknown)}")
    jobs = []
    for rec in manifest.videos(None):
        vdir = sil_root / rec.video_id
        if not vdir.is_dir():
            raise DataError(f"no silhouettes for video {rec.video_id!r} under {sil_root}; run extract first")
        jobs.append((vdir, out_root / rec.video_id, kinds, cfg["gei.clusters"], cfg["gei.penalty"],
                     cfg["gei.min_segment"], cfg["run.seed"]))
    results = list(_map_iter(_gei_one, jobs, cfg["run.workers"]))
    print(f"wrote GEIs for {len(results)} video(s) into {out_root}")
    return 0


# --- train ----------------------------------------------------------------------

def _train_source(cfg, manifest, model_cfg: ModelConfig) -> SilhouetteTreeSource:
    sil_root = _require(cfg, "paths.silhouettes")
    by_subject: dict[str, list[str]] = {}
    for rec in manifest.videos("train"):
        if not (sil_root / rec.video_id).is_dir():
            raise DataError(f"no silhouettes for training video {rec.video_id!r}; run extract first")
        by_subject.setdefault(rec.subject_id, []).append(rec.video_id)
    if not by_subject:
        raise CLIError("the manifest has no training videos")
    return SilhouetteTreeSource(sil_root, by_subject, model_cfg.input_size, model_cfg.in_channels)


def cmd_train(cfg, args) -> int:
    manifest = load_manifest(_require(cfg, "paths.manifest"))
    out_dir = _require(cfg, "paths.train_dir")
    if args.resume:
        if not (out_dir / "latest").exists():
            raise CLIError(f"--resume: no 'latest' checkpoint pointer in {out_dir}")
        probe_model, _ = load_checkpoint(out_dir / (out_dir / "latest").read_text().strip() / "model.pt")
        source = _train_source(cfg, manifest, probe_model.cfg)
        trainer = Trainer.resume(out_dir, source)
        print(f"resuming at iteration {trainer.state.iteration}")
    else:
        if (out_dir / "latest").exists() and not args.force:
            raise CLIError(f"{out_dir} already holds a run; use --resume or --force")
        model_cfg = model_config(cfg)
        source = _train_source(cfg, manifest, model_cfg)
        torch.manual_seed(cfg["run.seed"])
        model = initialize(RealGait(model_cfg))
        trainer = Trainer(model, source, sampling_config(cfg), train_schedule(cfg), out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "config.json", "w") as fh:
            json.dump(cfg.to_json(), fh, indent=1, sort_keys=True)
    state = trainer.run(args.iterations)
    print(f"stopped at iteration {state.iteration}, loss {state.last_loss:.6g}")
    return 0


# --- embed ----------------------------------------------------------------------

def _checkpoint_path(cfg) -> Path:
    if cfg["paths.checkpoint"]:
        return Path(cfg["paths.checkpoint"])
    train_dir = _require(cfg, "paths.train_dir")
    pointer = train_dir / "latest"
    if not pointer.exists():
        raise CLIError(f"no checkpoint: set paths.checkpoint or train into {train_dir}")
    return train_dir / pointer.read_text().strip() / "model.pt"


def cmd_embed(cfg, args) -> int:
    manifest = load_manifest(_require(cfg, "paths.manifest"))
    sil_root = _require(cfg, "paths.silhouettes")
    out_root = _require(cfg, "paths.embeddings")
    model, _ = load_checkpoint(_checkpoint_path(cfg))
    model.eval()
    torch.set_num_threads(max(1, cfg["run.workers"]))
    records = manifest.videos(None if args.split == "all" else args.split)
    store = EmbeddingStore()
    size, channels = model.cfg.input_size, model.cfg.in_channels
    for rec in records:
        vdir = sil_root / rec.video_id
        if not vdir.is_dir():
            raise DataError(f"no silhouettes for video {rec.video_id!r}; run extract first")
        images = read_images(vdir)
        idx = eval_indices(len(images), cfg["sampling.eval_max_frames"]) - 1
        frames = to_model_input(images[idx], size, channels)
        store.add(rec.video_id, rec.subject_id, rec.camera_id, embed(model, frames, cfg["model.embed_chunk"]))
    store.save(out_root)
    print(f"embedded {len(store)} video(s) into {out_root}")
    return 0


# --- eval -----------------------------------------------------------------------

def cmd_eval(cfg, args) -> int:
    manifest = load_manifest(_require(cfg, "paths.manifest"))
    store = EmbeddingStore.load(_require(cfg, "paths.embeddings"))
    overrides = None
    if cfg["eval.probe_overrides"]:
        overrides = json.loads(Path(cfg["eval.probe_overrides"]).read_text())
    specs = build_probe_gallery(manifest, cfg["eval.protocol"], overrides)
    num_patches = None
    if cfg["eval.metric"] == "patch_mean":
        num_patches = model_config(cfg).num_patches
    report = run_protocol(specs, store, cfg["eval.ranks"], cfg["eval.fars"], cfg["eval.metric"], num_patches)
    text = report.render()
    out = Path(cfg["paths.report"]) if cfg["paths.report"] else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as fh:
            json.dump(report.to_json(), fh, indent=1)
        (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


# --- entry point ----------------------------------------------------------------

COMMANDS = {"extract": cmd_extract, "gei": cmd_gei, "train": cmd_train, "embed": cmd_embed, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    epilog = ("configuration keys (set with --set KEY=VALUE, a --config file, or "
              f"{cfgmod.ENV_PREFIX}KEY with dots written as '__'):\n" + cfgmod.describe_keys())
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON or key=value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    common.add_argument("--workers", type=int, help="shorthand for --set run.workers=N")
    det = common.add_mutually_exclusive_group()
    det.add_argument("--deterministic", dest="deterministic", action="store_true",
                     help="serialize work for bit-exact reruns (default)")
    det.add_argument("--nondeterministic", dest="deterministic", action="store_false",
                     help="allow the prefetch thread")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="realgait", description="Gait recognition pipeline in the wild.",
                                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=epilog,
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter
    p = sub.add_parser("extract", parents=[common], formatter_class=fmt, epilog=epilog,
                       help="background subtraction, cropping and normalization per video")
    p.add_argument("--videos", nargs="*", help="limit to these video ids")
    sub.add_parser("gei", parents=[common], formatter_class=fmt, epilog=epilog,
                   help="full, cluster and piecewise gait energy images")
    p = sub.add_parser("train", parents=[common], formatter_class=fmt, epilog=epilog,
                       help="train the recognition network")
    p.add_argument("--resume", action="store_true", help="continue from the 'latest' checkpoint")
    p.add_argument("--force", action="store_true", help="start over in a non-empty train directory")
    p.add_argument("--iterations", type=int, help="stop after this many more iterations")
    p = sub.add_parser("embed", parents=[common], formatter_class=fmt, epilog=epilog,
                       help="write one embedding per video")
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    sub.add_parser("eval", parents=[common], formatter_class=fmt, epilog=epilog,
                   help="rank-n or DIR@FAR report for the configured protocol")
    return parser


def resolve_config(args, environ=None) -> cfgmod.RunConfig:
    overrides = cfgmod.parse_assignments(getattr(args, "set", []))
    for flag, key in (("seed", "run.seed"), ("workers", "run.workers"), ("deterministic", "run.deterministic")):
        if hasattr(args, flag):
            overrides[key] = getattr(args, flag)
    return cfgmod.load_config(getattr(args, "config", None), overrides, environ)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        np.random.seed(cfg["run.seed"])
        return COMMANDS[args.command](cfg, args)
    except (CLIError, cfgmod.ConfigError, DataError, ManifestError, EvaluationError, TrainingError,
            ValueError, OSError) as exc:
        print(f"realgait {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
