"""Self-describing checkpoint files.

A checkpoint is a numpy ``.npz`` archive (zip of ``.npy`` members, each a
length-prefixed header followed by raw array bytes). Members:

``__meta__``
    uint8 array holding UTF-8 JSON with keys ``format`` (``"setloc-checkpoint"``),
    ``version``, ``model`` (ModelConfig fields), ``vocabulary`` (BSSIDs in index
    order), ``norm_stats``, ``scaler`` (MLP input bounds or null), ``classes``,
    ``experiment``, ``train`` (TrainConfig fields) and ``seeds``.
``param/<name>``
    One float64 array per model parameter, e.g. ``param/embedding``.

Pickle is never used, so loading an untrusted file cannot execute code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ExperimentSpec
from .encoding import MinMaxScaler, Vocabulary
from .models import Localizer, ModelConfig, build_model
from .training import NormStats, TrainConfig

FORMAT = "setloc-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Localizer
    stats: NormStats
    experiment: ExperimentSpec | None = None
    train_config: TrainConfig | None = None
    classes: list = field(default_factory=list)


def save_checkpoint(path, model: Localizer, stats: NormStats, *, experiment: ExperimentSpec | None = None,
                    train_config: TrainConfig | None = None, classes=()) -> None:
    scaler = getattr(model, "scaler", None)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model": model.config.to_dict(),
        "vocabulary": model.vocab.bssids,
        "norm_stats": stats.to_dict(),
        "scaler": None if scaler is None else {"lo": scaler.lo, "hi": scaler.hi},
        "classes": list(classes),
        "experiment": experiment.to_dict() if experiment else None,
        "train": train_config.to_dict() if train_config else None,
        "seeds": {
            "model": model.config.seed,
            "fallback": model.config.fallback_seed,
            "split": experiment.split_seed if experiment else None,
            "train": train_config.seed if train_config else None,
        },
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, value in model.state_dict().items():
        arrays[f"param/{name}"] = value
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, *, expect_arch: str | None = None) -> Checkpoint:
    try:
        archive = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise CheckpointError(f"{path}: missing __meta__ member")
        meta = json.loads(archive["__meta__"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unexpected format {meta.get('format')!r}")
        state = {k[len("param/"):]: archive[k] for k in archive.files if k.startswith("param/")}
    config = ModelConfig(**meta["model"])
    if expect_arch is not None and config.arch != expect_arch:
        raise CheckpointError(f"{path}: checkpoint holds a {config.arch} model, expected {expect_arch}")
    vocab = Vocabulary.from_list(meta["vocabulary"])
    model = build_model(config, vocab=vocab)
    if meta["scaler"] is not None:
        model.scaler = MinMaxScaler(**meta["scaler"])
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: parameters do not match the {config.arch} config ({exc})") from exc
    exp = ExperimentSpec.from_dict(meta["experiment"]) if meta.get("experiment") else None
    tc = TrainConfig(**meta["train"]) if meta.get("train") else None
    return Checkpoint(model, NormStats(**meta["norm_stats"]), exp, tc, meta.get("classes", []))
