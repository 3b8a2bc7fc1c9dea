"""Produce the committed regression fixtures for the desk-scale end-to-end checks.

    python scripts/reference_runs.py seen        # Proposed_New, seed 0
    python scripts/reference_runs.py multitask   # Proposed_New vs Proposed_Old, seeds 0-2
    python scripts/reference_runs.py finetune    # smooth_blob -> polygon transfer, seeds 0-2

Each run writes a checkpoint, a training log and a JSON record under
tests/fixtures/reference/. Runs whose record already exists are skipped.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import torch

from ysf.checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from ysf.evaluator import evaluate
from ysf.fixtures import FINETUNE, REFERENCE_DIR, SEEN, finetune_corpora, seen_corpus
from ysf.losses import LossWeights
from ysf.model import ModelConfig, Variant
from ysf.trainer import FinetuneConfig, TrainConfig, finetune, train

log = logging.getLogger("reference")


def _host():
    return {"cpu_count": os.cpu_count(), "torch_threads": torch.get_num_threads(),
            "machine": platform.machine(), "torch": torch.__version__}


def run_seen(variant: str, seed: int, out: Path, weights: LossWeights | None = None):
    name = f"{variant.lower()}_seed{seed}"
    record_path = out / f"{name}.json"
    if record_path.exists():
        log.info("skip %s (exists)", name)
        return json.loads(record_path.read_text())
    corpus = seen_corpus()
    mc = ModelConfig(Variant(variant))
    tc = TrainConfig(batch_size=SEEN["batch_size"], epochs=SEEN["epochs"], seed=seed, loss_weights=weights)
    t0 = time.perf_counter()
    result = train(mc, corpus["train"], corpus["val"], tc, log_path=out / f"{name}.log.jsonl",
                   on_epoch=lambda r: log.info("%s epoch %d val_acc=%.4f total=%.4f", name, r.epoch,
                                               r.val_acc, r.total))
    train_time = time.perf_counter() - t0
    ckpt = out / f"{name}.ysf"
    save_checkpoint(ckpt, result.model, {"best_epoch": result.best_epoch, "val_acc": result.best_val_acc,
                                         "seed": seed, "fixture": "seen"})
    model, _ = load_checkpoint(ckpt)
    report = evaluate(model, corpus["test"], level="frame")
    total_time = time.perf_counter() - t0
    record = {"variant": variant, "seed": seed, "checkpoint": ckpt.name, "checkpoint_id": checkpoint_id(ckpt),
              "best_epoch": result.best_epoch, "report": report.to_dict(), "train_seconds": train_time,
              "total_seconds": total_time, "host": _host(),
              "train_config": tc.resolved(mc).to_dict()}
    record_path.write_text(json.dumps(record, indent=2, sort_keys=True))
    log.info("%s done: %s", name, report)
    return record


def run_finetune(seed: int, out: Path):
    name = f"finetune_seed{seed}"
    record_path = out / f"{name}.json"
    if record_path.exists():
        log.info("skip %s (exists)", name)
        return json.loads(record_path.read_text())
    base_rec = run_seen("Proposed_New", seed, out)
    base, _ = load_checkpoint(out / base_rec["checkpoint"])
    corp = finetune_corpora()
    ft = FinetuneConfig(epochs=FINETUNE["epochs"])
    tc = TrainConfig(batch_size=SEEN["batch_size"], seed=seed)
    t0 = time.perf_counter()
    res = finetune(base, corp["train"], corp["eval"], ft, tc, test_samples=corp["test"],
                   log_path=out / f"{name}.log.jsonl",
                   on_epoch=lambda r: log.info("%s epoch %d val_acc=%.4f", name, r.epoch, r.val_acc))
    elapsed = time.perf_counter() - t0
    ckpt = out / f"{name}.ysf"
    save_checkpoint(ckpt, res.model, {"best_epoch": res.best_epoch, "seed": seed, "fixture": "finetune"})
    record = {"seed": seed, "checkpoint": ckpt.name, "before": res.before.to_dict(),
              "after": res.after.to_dict(), "seconds": elapsed, "host": _host()}
    record_path.write_text(json.dumps(record, indent=2, sort_keys=True))
    return record


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("which", choices=["seen", "multitask", "finetune"])
    ap.add_argument("--out", type=Path, default=REFERENCE_DIR)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    if args.which == "seen":
        run_seen("Proposed_New", 0, args.out)
    elif args.which == "multitask":
        for seed in args.seeds:
            run_seen("Proposed_New", seed, args.out)
            run_seen("Proposed_Old", seed, args.out)
    else:
        for seed in args.seeds:
            run_finetune(seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
