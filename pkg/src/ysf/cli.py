"""``ysf`` command line: synth, train, finetune, eval, predict, report.

Every command accepts ``--config FILE`` (JSON written by a previous run or by
hand); explicit flags override values from the file. The effective config is
saved as ``config.json`` in the output directory.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Error lines
start with ``error:``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import CheckpointError, checkpoint_id, load_checkpoint, save_checkpoint
from .data import ImageSample, SplitSpec, export_corpus, ingest_dataset, load_image
from .evaluator import EvalReport, evaluate, export_masks, export_roc, score_frames
from .model import ModelConfig, UnimplementedVariantError, Variant
from .synthetic import ATTACKS, synthetic_corpus
from .trainer import FinetuneConfig, TrainConfig, finetune, train

log = logging.getLogger("ysf")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CLI_VARIANTS = [v.value for v in Variant]
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    variant: Optional[str] = None  # None: Proposed_New, or the checkpoint's variant
    seed: int = 0
    epochs: Optional[int] = None
    batch_size: int = 64
    lr: float = 0.001
    data: Optional[str] = None
    manifest: str = "manifest.csv"
    out: Optional[str] = None
    checkpoint: Optional[str] = None
    level: str = "frame"
    workers: int = 1
    force: bool = False
    # synth
    attack: str = "smooth_blob"
    train_videos: int = 20
    val_videos: int = 4
    test_videos: int = 4
    frames: int = 10
    eval_frames: Optional[int] = None
    # ingestion
    frames_train: int = 200
    frames_eval: int = 10
    # finetune
    frames_per_video: int = 10
    ft_train_videos: int = 100
    ft_eval_videos: int = 40
    # eval / predict
    split: str = "test"
    test_name: str = ""
    export_masks: bool = False
    fake_only_pixels: bool = False
    input: Optional[str] = None
    runs: Optional[list] = None

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _default_workers():
    try:
        return max(1, int(os.environ.get("YSF_NUM_WORKERS", "1")))
    except ValueError:
        return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS  # unset flags stay out of the namespace so config values survive
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON run config; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="parallel workers (default $YSF_NUM_WORKERS or 1)")
    common.add_argument("--force", action="store_true", default=S, help="overwrite existing outputs")

    model_flags = argparse.ArgumentParser(add_help=False, argument_default=S)
    model_flags.add_argument("--variant", choices=CLI_VARIANTS)
    model_flags.add_argument("--epochs", type=int)
    model_flags.add_argument("--batch-size", dest="batch_size", type=int)
    model_flags.add_argument("--lr", type=float)

    data_flags = argparse.ArgumentParser(add_help=False, argument_default=S)
    data_flags.add_argument("--data", help="dataset root containing the manifest")
    data_flags.add_argument("--manifest", help="manifest path relative to --data")
    data_flags.add_argument("--frames-train", dest="frames_train", type=int)
    data_flags.add_argument("--frames-eval", dest="frames_eval", type=int)

    p = _Parser(prog="ysf", description="Y-shaped autoencoder for manipulated-face detection and segmentation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], argument_default=S, help="generate a synthetic corpus")
    s.add_argument("--attack", choices=ATTACKS)
    s.add_argument("--train-videos", dest="train_videos", type=int, help="videos per class")
    s.add_argument("--val-videos", dest="val_videos", type=int)
    s.add_argument("--test-videos", dest="test_videos", type=int)
    s.add_argument("--frames", type=int, help="frames per training video")
    s.add_argument("--eval-frames", dest="eval_frames", type=int, help="frames per val/test video")

    sub.add_parser("train", parents=[common, model_flags, data_flags], argument_default=S,
                   help="train a model")

    f = sub.add_parser("finetune", parents=[common, model_flags, data_flags], argument_default=S,
                       help="fine-tune a checkpoint on a small unseen-attack budget")
    f.add_argument("--checkpoint", help="base checkpoint")
    f.add_argument("--frames-per-video", dest="frames_per_video", type=int)
    f.add_argument("--train-videos", dest="ft_train_videos", type=int, help="training videos per class")
    f.add_argument("--eval-videos", dest="ft_eval_videos", type=int, help="evaluation videos per class")

    e = sub.add_parser("eval", parents=[common, data_flags], argument_default=S, help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--level", choices=["frame", "video"])
    e.add_argument("--split", choices=["train", "val", "test"])
    e.add_argument("--test-name", dest="test_name")
    e.add_argument("--export-masks", dest="export_masks", action="store_true", default=S)
    e.add_argument("--fake-only-pixels", dest="fake_only_pixels", action="store_true", default=S)

    pr = sub.add_parser("predict", parents=[common], argument_default=S, help="score images")
    pr.add_argument("--checkpoint")
    pr.add_argument("--input", help="image file or directory of images")

    r = sub.add_parser("report", parents=[common], argument_default=S, help="tabulate evaluation runs")
    r.add_argument("runs", nargs="*", help="run directories")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    values.update({k: v for k, v in vars(args).items() if k in known})
    values["command"] = args.command
    if "workers" not in values:
        values["workers"] = _default_workers()
    return RunConfig(**values)


def _prepare_out(cfg: RunConfig, required=True) -> Optional[Path]:
    if cfg.out is None:
        if required:
            raise UsageError("--out is required")
        return None
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()):
        if not cfg.force:
            raise UsageError(f"output directory {out} exists and is not empty (use --force)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_config(cfg: RunConfig) -> ModelConfig:
    mc = ModelConfig(Variant(cfg.variant or Variant.PROPOSED_NEW.value))
    if not mc.runnable:
        raise UsageError(f"unimplemented: residual preprocessing (variant {cfg.variant})")
    return mc


def _require_path(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required")
    if not Path(value).exists():
        raise UsageError(f"{flag} path does not exist: {value}")
    return Path(value)


def _load_splits(cfg: RunConfig, splits):
    root = _require_path(cfg.data, "--data")
    if not (root / cfg.manifest).is_file():
        raise UsageError(f"manifest not found: {root / cfg.manifest}")
    spec = SplitSpec(frames_train=cfg.frames_train, frames_eval=cfg.frames_eval)
    return ingest_dataset(root, cfg.manifest, spec, splits=splits, workers=cfg.workers)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(learning_rate=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed)


def cmd_synth(cfg: RunConfig) -> int:
    for n in ("train_videos", "val_videos", "test_videos"):
        if getattr(cfg, n) < 0:
            raise UsageError(f"--{n.replace('_', '-')} must be >= 0")
    if cfg.train_videos + cfg.val_videos + cfg.test_videos < 1 or cfg.frames < 1:
        raise UsageError("nothing to generate")
    out = _prepare_out(cfg)
    corpus = synthetic_corpus(cfg.seed, cfg.attack, cfg.train_videos, cfg.val_videos, cfg.test_videos,
                              cfg.frames, cfg.eval_frames)
    mpath = export_corpus({k: v for k, v in corpus.items() if v}, out, cfg.manifest)
    cfg.save(out / "config.json")
    print(f"wrote {sum(len(v) for v in corpus.values())} frames and {mpath}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    mc = _model_config(cfg)
    if cfg.epochs is not None and cfg.epochs < 1:
        raise UsageError("nothing to train: --epochs must be >= 1")
    tc = _train_config(cfg)
    out = _prepare_out(cfg)
    cfg.save(out / "config.json")
    splits = _load_splits(cfg, ("train", "val"))
    if not splits["train"] or not splits["val"]:
        raise UsageError("manifest needs non-empty train and val splits")
    result = train(mc, splits["train"], splits["val"], tc, log_path=out / "train_log.jsonl",
                   on_epoch=lambda r: print(r.to_json(), flush=True))
    save_checkpoint(out / "checkpoint.ysf", result.model,
                    {"best_epoch": result.best_epoch, "val_acc": result.best_val_acc,
                     "train_config": tc.resolved(mc).to_dict()})
    print(f"best epoch {result.best_epoch} (val acc {result.best_val_acc:.4f}) -> {out / 'checkpoint.ysf'}")
    return EXIT_OK


def _eval_record(report: EvalReport, name, variant, ckpt) -> dict:
    return report.to_record(name, variant, checkpoint_id(ckpt))


def cmd_finetune(cfg: RunConfig) -> int:
    ckpt = _require_path(cfg.checkpoint, "--checkpoint")
    base, _ = load_checkpoint(ckpt)
    if cfg.variant is not None and cfg.variant != base.config.variant.value:
        raise UsageError(f"checkpoint variant {base.config.variant.value} does not match --variant {cfg.variant}")
    cfg.variant = base.config.variant.value
    ft = FinetuneConfig(frames_per_video=cfg.frames_per_video, train_videos_per_class=cfg.ft_train_videos,
                        eval_videos_per_class=cfg.ft_eval_videos,
                        epochs=50 if cfg.epochs is None else cfg.epochs, base_checkpoint=str(ckpt))
    if ft.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    tc = _train_config(cfg)
    out = _prepare_out(cfg)
    cfg.save(out / "config.json")
    # finetune's own budget applies; load every frame the budget could use
    cfg.frames_train = cfg.frames_eval = max(cfg.frames_per_video, 1)
    splits = _load_splits(cfg, ("train", "val", "test"))
    test = splits["test"] or None
    res = finetune(base, splits["train"], splits["val"], ft, tc, test_samples=test,
                   log_path=out / "train_log.jsonl", on_epoch=lambda r: print(r.to_json(), flush=True))
    save_checkpoint(out / "checkpoint.ysf", res.model, {"best_epoch": res.best_epoch, "base": checkpoint_id(ckpt)})
    name = cfg.test_name or "finetune"
    record = {"variant": cfg.variant, "test": name,
              "before": _eval_record(res.before, name, cfg.variant, ckpt),
              "after": _eval_record(res.after, name, cfg.variant, out / "checkpoint.ysf")}
    (out / "finetune_report.json").write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    print(res.before.table("before fine-tuning"))
    print(res.after.table("after fine-tuning"))
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    ckpt = _require_path(cfg.checkpoint, "--checkpoint")
    model, _ = load_checkpoint(ckpt)
    out = _prepare_out(cfg)
    cfg.save(out / "config.json")
    samples = _load_splits(cfg, (cfg.split,))[cfg.split]
    if not samples:
        raise UsageError(f"split {cfg.split!r} is empty")
    frames = score_frames(model, samples)
    report = evaluate(model, samples, level=cfg.level, fake_only_pixels=cfg.fake_only_pixels, frames=frames)
    variant = model.config.variant.value
    record = _eval_record(report, cfg.test_name or cfg.split, variant, ckpt)
    (out / "report.json").write_text(json.dumps(record, indent=2, sort_keys=True), encoding="utf-8")
    table = report.table(f"{variant} on {cfg.test_name or cfg.split}")
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    export_roc(frames.scores, frames.labels, out / "roc.json")
    if cfg.export_masks:
        export_masks(frames, out / "masks")
    print(table)
    return EXIT_OK


def _image_paths(path: Path):
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [path]


def cmd_predict(cfg: RunConfig) -> int:
    ckpt = _require_path(cfg.checkpoint, "--checkpoint")
    src = _require_path(cfg.input, "--input")
    model, _ = load_checkpoint(ckpt)
    paths = _image_paths(src)
    if not paths:
        raise UsageError(f"no images found in {src}")
    out = _prepare_out(cfg)
    cfg.save(out / "config.json")
    side = model.config.input_side
    samples = [ImageSample(load_image(p, side=side), 0, np.zeros((1, side, side), np.uint8), p.stem, 0)
               for p in paths]
    frames = score_frames(model, samples)
    export_masks(frames, out / "masks")
    rows = []
    for p, score in zip(paths, frames.scores):
        rows.append({"image": str(p), "score": float(score), "label": "fake" if score > 0.5 else "real",
                     "mask": f"masks/{p.stem}_0000.png" if frames.seg is not None else None})
        print(f"{p.name}\t{score:.6f}\t{rows[-1]['label']}")
    (out / "predictions.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
    return EXIT_OK


def _pct(x):
    return "—" if x is None else f"{100 * x:.2f}"


def _delta(before, after):
    if before is None or after is None:
        return "—"
    d = 100 * (after - before)
    arrow = "↑" if d > 0 else ("↓" if d < 0 else "=")
    return f"{100 * after:.2f} ({arrow} {d:+.2f})"


def render_report(runs: list[Path]) -> str:
    rows = []
    for run in runs:
        eval_path, ft_path = run / "report.json", run / "finetune_report.json"
        try:
            if ft_path.is_file():
                rec = json.loads(ft_path.read_text(encoding="utf-8"))
                b, a = rec["before"]["metrics"], rec["after"]["metrics"]
                rows.append((rec["variant"], _delta(b["cls_accuracy"], a["cls_accuracy"]),
                             _delta(b["eer"], a["eer"]),
                             _delta(b["seg_pixel_accuracy"], a["seg_pixel_accuracy"])))
            elif eval_path.is_file():
                rec = json.loads(eval_path.read_text(encoding="utf-8"))
                m = rec["metrics"]
                rows.append((rec["variant"], _pct(m["cls_accuracy"]), _pct(m["eer"]),
                             _pct(m["seg_pixel_accuracy"])))
            else:
                raise UsageError(f"{run}: no report.json or finetune_report.json")
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise UsageError(f"{run}: corrupt run record ({e})") from e
    header = ("Method", "Acc (%)", "EER (%)", "Seg Acc (%)")
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(4)]
    fmt = lambda r: " | ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                               for i, (c, w) in enumerate(zip(r, widths)))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(("", "Classification", "", "Segmentation")), fmt(header), sep] + [fmt(r) for r in rows])


def cmd_report(cfg: RunConfig) -> int:
    if not cfg.runs:
        raise UsageError("report needs at least one run directory")
    runs = [_require_path(r, "run") for r in cfg.runs]
    table = render_report(runs)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "finetune": cmd_finetune, "eval": cmd_eval,
            "predict": cmd_predict, "report": cmd_report}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg.variant is not None and cfg.variant not in CLI_VARIANTS:
            raise UsageError(f"unknown variant {cfg.variant!r}")
        torch.set_num_threads(max(1, cfg.workers))
        return COMMANDS[cfg.command](cfg)
    except (UsageError, UnimplementedVariantError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
