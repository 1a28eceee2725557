"""``setloc`` command line: simulate, train, eval, benchmark.

Exit status is 0 on success, 2 for usage errors and 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (
    ExperimentSpec,
    assemble_experiment,
    default_experiment,
    default_world,
    generate_synthetic,
    load_scans,
    save_scans,
    save_tag_map,
    save_wide,
    world_tag_map,
)
from .evaluation import export_plot_data, format_table, report_row, write_report
from .models import ARCHS, ModelConfig, build_model
from .training import TrainConfig, train, write_history

logger = logging.getLogger("setloc")

EXIT_USAGE = 2
EXIT_RUNTIME = 1

DEFAULT_SCANS = {"E1": 600, "E2": 1800, "E3": 1800}


class UsageError(Exception):
    pass


def _env_seed() -> int:
    raw = os.environ.get("SETLOC_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SETLOC_SEED must be an integer, got {raw!r}") from None


@dataclass
class RunManifest:
    """Everything needed to reproduce one training run."""

    experiment: ExperimentSpec
    model: ModelConfig
    train: TrainConfig
    data: dict = field(default_factory=dict)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return {"experiment": self.experiment.to_dict(), "model": self.model.to_dict(),
                "train": self.train.to_dict(), "data": self.data, "output_dir": self.output_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(ExperimentSpec.from_dict(d["experiment"]), ModelConfig(**d["model"]),
                   TrainConfig(**d["train"]), d.get("data", {}), d.get("output_dir", "runs/default"))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthetic_source(experiment: str, n_scans: int | None, seed: int, world_seed: int = 0) -> dict:
    experiment = experiment.upper()
    n = DEFAULT_SCANS[experiment] if n_scans is None else n_scans
    if n < 1:
        raise UsageError(f"--scans must be at least 1, got {n}")
    return {"synthetic": {"experiment": experiment, "n_scans": n, "seed": seed, "world_seed": world_seed}}


def load_source(source: dict):
    if "synthetic" in source:
        cfg = source["synthetic"]
        world = default_world(cfg["experiment"], seed=cfg.get("world_seed", 0))
        return generate_synthetic(world, cfg["n_scans"], cfg["seed"])
    if "path" in source:
        return load_scans(source["path"], source.get("tag_map"))
    raise UsageError("manifest data must name a CSV path or a synthetic world")


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    exp = args.experiment.upper()
    if args.scans is not None and args.scans < 1:
        raise UsageError(f"--scans must be at least 1, got {args.scans}")
    try:
        world = default_world(exp, seed=args.world_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n = args.scans if args.scans is not None else DEFAULT_SCANS[exp]
    scans = generate_synthetic(world, n, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scans(scans, out / "scans.csv")
    save_wide(scans, out / "scans_wide.csv")
    save_tag_map(world_tag_map(world), out / "tags.json")
    print(f"wrote {len(scans)} scans to {out / 'scans.csv'}")
    return 0


def _manifest_from_args(args) -> RunManifest:
    seed = args.seed
    if args.manifest:
        manifest = RunManifest.read(args.manifest)
    else:
        if not args.arch or not args.experiment:
            raise UsageError("train needs --manifest or both --arch and --experiment")
        exp = default_experiment(args.experiment, multi_task=args.multi_task, split_seed=seed)
        # num_classes stays 0 until run_training counts the classes in the split
        model = ModelConfig(args.arch, multi_task=args.multi_task, seed=seed)
        train_cfg = TrainConfig(seed=seed)
        if args.data:
            data = {"path": str(Path(args.data).resolve())}
            if args.tags:
                data["tag_map"] = str(Path(args.tags).resolve())
        else:
            data = synthetic_source(exp.id, args.scans, seed)
        manifest = RunManifest(exp, model, train_cfg, data, args.out or f"runs/{exp.id.lower()}-{args.arch}")
    overrides = {k: v for k, v in (("lr", args.lr), ("epochs", args.epochs),
                                   ("accumulation_window", args.window)) if v is not None}
    if overrides:
        manifest.train = TrainConfig(**{**manifest.train.to_dict(), **overrides})
    if args.out:
        manifest.output_dir = args.out
    return manifest


def run_training(manifest: RunManifest) -> dict:
    """Train, evaluate on the held-out split and write all run artifacts."""
    scans = load_source(manifest.data)
    splits = assemble_experiment(scans, manifest.experiment)
    cfg = manifest.model
    if cfg.multi_task:
        cfg = ModelConfig(**{**cfg.to_dict(), "num_classes": len(splits.classes)})
        manifest.model = cfg
    model = build_model(cfg, splits.train)
    result = train(model, splits, manifest.experiment, manifest.train)
    out = Path(manifest.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    classes = splits.classes if cfg.multi_task else []
    save_checkpoint(out / "checkpoint.npz", result.model, result.stats, experiment=manifest.experiment,
                    train_config=manifest.train, classes=classes)
    write_history(result.history, out / "history.csv")
    manifest.write(out / "manifest.json")
    metrics = export_plot_data(result.model, splits.test, result.stats, out / "plot_data.csv",
                               classes=classes, class_field=manifest.experiment.class_field)
    row = report_row(manifest.experiment.id, cfg.arch, metrics)
    write_report([row], out / "metrics.csv")
    return row


def cmd_train(args) -> int:
    manifest = _manifest_from_args(args)
    row = run_training(manifest)
    print(f"{row['experiment']} {row['model']}: test error {row['mean_error_m']:.2f} ± "
          f"{row['std_error_m']:.2f} (m); artifacts in {manifest.output_dir}")
    return 0


def evaluate_run(checkpoint_path, data: dict | None = None, out_dir=None, *,
                 expect_arch: str | None = None) -> dict:
    ckpt_path = Path(checkpoint_path)
    ckpt = load_checkpoint(ckpt_path, expect_arch=expect_arch)
    if data is None:
        manifest_path = ckpt_path.parent / "manifest.json"
        if not manifest_path.exists():
            raise UsageError(f"no dataset given and no manifest.json next to {ckpt_path}")
        data = RunManifest.read(manifest_path).data
    if ckpt.experiment is None:
        raise CheckpointError(f"{ckpt_path}: checkpoint does not record its experiment")
    splits = assemble_experiment(load_source(data), ckpt.experiment)
    out = Path(out_dir) if out_dir else ckpt_path.parent
    out.mkdir(parents=True, exist_ok=True)
    metrics = export_plot_data(ckpt.model, splits.test, ckpt.stats, out / "eval_plot_data.csv",
                               classes=ckpt.classes, class_field=ckpt.experiment.class_field)
    row = report_row(ckpt.experiment.id, ckpt.model.config.arch, metrics)
    write_report([row], out / "eval_metrics.csv")
    return row


def cmd_eval(args) -> int:
    data = None
    if args.data:
        data = {"path": args.data, **({"tag_map": args.tags} if args.tags else {})}
    elif args.synthetic:
        ckpt = load_checkpoint(args.checkpoint)
        exp = ckpt.experiment.id if ckpt.experiment else "E1"
        data = synthetic_source(exp, args.scans, args.seed)
    row = evaluate_run(args.checkpoint, data, args.out, expect_arch=args.arch)
    print(f"{row['experiment']} {row['model']}: {row['mean_error_m']:.2f} ± {row['std_error_m']:.2f} (m)"
          + ("" if row["class_accuracy"] is None else f", class accuracy {row['class_accuracy']:.3f}"))
    return 0


def benchmark(run_root) -> list[dict]:
    root = Path(run_root)
    ckpts = sorted(root.glob("*/checkpoint.npz"))
    manifests = sorted(root.glob("*/manifest.json"))
    for m in manifests:
        if not (m.parent / "checkpoint.npz").exists():
            raise FileNotFoundError(f"missing checkpoint for run {m.parent.name}: {m.parent / 'checkpoint.npz'}")
    if len(ckpts) < 2:
        raise UsageError(f"benchmark needs at least two trained runs under {root}, found {len(ckpts)}")
    rows = [evaluate_run(c) for c in ckpts]
    experiments = {r["experiment"] for r in rows}
    if len(experiments) > 1:
        raise ValueError(f"runs under {root} mix experiments {sorted(experiments)}")
    order = {a: i for i, a in enumerate(ARCHS)}
    rows.sort(key=lambda r: order.get(r["model"], len(order)))
    return rows


def cmd_benchmark(args) -> int:
    rows = benchmark(args.runs)
    print(format_table(rows))
    write_report(rows, Path(args.runs) / "benchmark.csv")
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="setloc", description="Set-based RSSI localization experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    exp_choices = ["e1", "e2", "e3", "E1", "E2", "E3"]
    p = sub.add_parser("simulate", help="write a synthetic dataset and tag map")
    p.add_argument("--experiment", choices=exp_choices, default="e1")
    p.add_argument("--scans", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--world-seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one model and evaluate it on the held-out split")
    p.add_argument("--manifest")
    p.add_argument("--experiment", choices=exp_choices)
    p.add_argument("--arch", choices=ARCHS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data")
    src.add_argument("--synthetic", action="store_true")
    p.add_argument("--tags")
    p.add_argument("--scans", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--multi-task", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on its experiment's test split")
    p.add_argument("checkpoint")
    p.add_argument("--arch", choices=ARCHS, help="fail unless the checkpoint holds this architecture")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data")
    src.add_argument("--synthetic", action="store_true")
    p.add_argument("--tags")
    p.add_argument("--scans", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="compare every run under a directory")
    p.add_argument("runs")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _env_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"setloc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, CheckpointError, FloatingPointError, RuntimeError) as exc:
        print(f"setloc: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
