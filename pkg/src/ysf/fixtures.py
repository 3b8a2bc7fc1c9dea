"""Desk-scale synthetic fixtures shared by the reference runs and the
acceptance suite."""

from __future__ import annotations

from pathlib import Path

from .synthetic import synthetic_corpus

REFERENCE_DIR = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "reference"

# 200 train / 40 val / 40 test frames per class, 10 frames per video
SEEN = {"seed": 0, "attack": "smooth_blob", "train_videos": 20, "val_videos": 4, "test_videos": 4,
        "frames": 10, "epochs": 25, "batch_size": 16}

# fine-tuning budget: 10 frames/video, 100 train and 40 eval videos per class
FINETUNE = {"seed": 0, "attack": "polygon", "train_videos": 100, "eval_videos": 40, "test_videos": 4,
            "frames": 10, "epochs": 50}


def seen_corpus():
    return synthetic_corpus(SEEN["seed"], SEEN["attack"], SEEN["train_videos"], SEEN["val_videos"],
                            SEEN["test_videos"], SEEN["frames"])


def finetune_corpora():
    c = synthetic_corpus(FINETUNE["seed"], FINETUNE["attack"], FINETUNE["train_videos"],
                         FINETUNE["eval_videos"], FINETUNE["test_videos"], FINETUNE["frames"],
                         first_video=1000)
    return {"train": c["train"], "eval": c["val"], "test": c["test"]}

