"""
Training on a single floor
==========================

Fit the Set Transformer and the MLP baseline on the single-floor synthetic
world and compare both against predicting the training centroid.
Takes about two minutes on one core.
"""

import math

from setloc.data import assemble_experiment, default_experiment, default_world, generate_synthetic
from setloc.evaluation import Metrics, evaluate, format_table, report_row
from setloc.models import ModelConfig, build_model
from setloc.training import TrainConfig, fit_norm_stats, train

spec = default_experiment("E1")
scans = generate_synthetic(default_world("E1"), 600, seed=7)
splits = assemble_experiment(scans, spec)
print(f"{len(splits.train)} train / {len(splits.val)} val / {len(splits.test)} test scans")

stats = fit_norm_stats(splits.train)
centroid = Metrics.from_errors([math.hypot(s.position[0] - stats.mu_x, s.position[1] - stats.mu_y)
                                for s in splits.test])
rows = [report_row("E1", "centroid", centroid)]

for arch in ("mlp", "set_transformer"):
    model = build_model(ModelConfig(arch), splits.train)
    result = train(model, splits, spec, TrainConfig(epochs=30))
    print(f"{arch}: best validation error {result.best_val_error:.2f} m at epoch {result.best_epoch}")
    rows.append(report_row("E1", arch, evaluate(result.model, splits.test, result.stats)))

print()
print(format_table(rows))
