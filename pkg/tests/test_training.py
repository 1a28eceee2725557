import math

import numpy as np
import pytest

from setloc import autograd as ag
from setloc.autograd import Tensor
from setloc.data import (
    ExperimentSpec,
    Scan,
    Splits,
    assemble_experiment,
    default_experiment,
    default_world,
    generate_synthetic,
)
from setloc.models import ModelConfig, Prediction, build_model
from setloc.training import (
    DegenerateAxisError,
    NormStats,
    TrainConfig,
    fit_norm_stats,
    mean_error,
    read_history,
    regression_loss,
    total_loss,
    train,
    write_history,
)

from helpers import random_scan


def _at(x, y):
    return Scan([("aa", -50.0)], (x, y))


def _pred(xy, logits=None):
    return Prediction(Tensor(np.asarray(xy, dtype=float), requires_grad=True),
                      None if logits is None else Tensor(np.asarray(logits, dtype=float)))


# normalization statistics

def test_two_point_stats():
    s = fit_norm_stats([_at(0, 0), _at(2, 2)])
    assert (s.mu_x, s.mu_y, s.sigma_x, s.sigma_y) == (1.0, 1.0, 1.0, 1.0)


def test_normalize_centroid_is_origin():
    rng = np.random.default_rng(0)
    s = fit_norm_stats([_at(*rng.uniform(0, 50, 2)) for _ in range(30)])
    np.testing.assert_allclose(s.normalize((s.mu_x, s.mu_y)), [0.0, 0.0], atol=1e-15)


def test_stats_match_two_pass_reference():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-500, 500, (1000, 2)) + [4.5e5, 5.4e6]  # UTM-sized offsets
    s = fit_norm_stats([_at(x, y) for x, y in pts])
    for axis, mu, sigma in ((0, s.mu_x, s.sigma_x), (1, s.mu_y, s.sigma_y)):
        col = [float(v) for v in pts[:, axis]]
        ref_mu = math.fsum(col) / len(col)
        ref_sigma = math.sqrt(math.fsum((v - ref_mu) ** 2 for v in col) / len(col))
        assert abs(mu - ref_mu) <= 1e-9 * abs(ref_mu)
        assert abs(sigma - ref_sigma) <= 1e-9 * ref_sigma


@pytest.mark.parametrize("pts", [[(1, 0), (1, 5)], [(0, 3), (4, 3)], [(2, 2)]])
def test_degenerate_axis(pts):
    with pytest.raises(DegenerateAxisError):
        fit_norm_stats([_at(*p) for p in pts])


def test_nonpositive_sigma_rejected():
    with pytest.raises(DegenerateAxisError):
        NormStats(0.0, 0.0, 0.0, 1.0)


def test_round_trip():
    rng = np.random.default_rng(2)
    s = NormStats(4.5e5, 12.0, 5.4e6, 7.5)
    pts = rng.uniform(-1e3, 1e3, (500, 2)) + [4.5e5, 5.4e6]
    back = np.array([s.denormalize(s.normalize(p)) for p in pts])
    assert np.max(np.abs(back - pts) / np.abs(pts)) < 1e-9


# losses

@pytest.mark.parametrize("residual,expected", [((0, 0), 0.0), ((1, 0), 1.0), ((3, 4), 25.0)])
def test_regression_loss(residual, expected):
    target = np.array([0.25, -1.5])
    assert regression_loss(_pred(target + residual), target).item() == expected


def test_regression_loss_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        regression_loss(_pred([np.nan, 0.0]), [0.0, 0.0])


def test_lambda_zero_is_regression_only():
    p = _pred([0.3, 0.1], [2.0, -1.0, 0.5])
    parts = total_loss(p, [1.0, 1.0], 2, lam=0.0)
    assert parts.total.item() == regression_loss(p, [1.0, 1.0]).item()


@pytest.mark.parametrize("c", [2, 3, 7])
def test_uniform_logits_cost_log_c(c):
    parts = total_loss(_pred([0.0, 0.0], np.zeros(c)), [0.0, 0.0], 0)
    assert parts.cls == pytest.approx(math.log(c), abs=1e-12)


def test_total_is_sum_of_parts():
    rng = np.random.default_rng(3)
    for _ in range(20):
        xy, target, logits = rng.normal(size=2), rng.normal(size=2), rng.normal(size=4) * 3
        label, lam = int(rng.integers(4)), float(rng.uniform(0, 2))
        reg = float(np.sum((xy - target) ** 2))
        cls = float(np.log(np.sum(np.exp(logits))) - logits[label])
        got = total_loss(_pred(xy, logits), target, label, lam).total.item()
        assert got == pytest.approx(reg + lam * cls, rel=1e-12)


@pytest.mark.parametrize("label", [-1, 3, 10])
def test_label_out_of_range(label):
    with pytest.raises(ValueError):
        total_loss(_pred([0, 0], [0.0, 0.0, 0.0]), [0, 0], label)


def test_label_presence_must_match_head():
    with pytest.raises(ValueError):
        total_loss(_pred([0, 0]), [0, 0], 1)
    with pytest.raises(ValueError):
        total_loss(_pred([0, 0], [0.0, 0.0]), [0, 0], None)


def test_config_validation():
    for bad in ({"lr": 0}, {"epochs": 0}, {"accumulation_window": 0}, {"early_stop_patience": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        ExperimentSpec("E1", val_fraction=0.5)


# training loop

def _small_splits(rng, n_train=12, n_val=4):
    bssids = [f"aa:{i:02x}" for i in range(8)]
    make = lambda: random_scan(rng, 4, bssids)
    return Splits([make() for _ in range(n_train)], [make() for _ in range(n_val)], [make()])


def test_constant_model_loss_decreases():
    scan = Scan([("aa", -50.0), ("bb", -70.0)], (3.0, 4.0))
    other = Scan([("aa", -60.0)], (0.0, 0.0))
    splits = Splits([scan] * 8 + [other], [scan], [scan])
    model = build_model(ModelConfig("mlp", hidden=4), splits.train)
    for p in (model.fc1.weight, model.fc2.weight):
        p.data[...] = 0.0
        p.requires_grad = False
    for layer in (model.fc1, model.fc2):
        layer.bias.data[...] = 0.5  # keep ReLUs active
    result = train(model, splits, ExperimentSpec("E1"),
                   TrainConfig(epochs=5, accumulation_window=1, early_stop_patience=10, lr=1e-2))
    losses = [h["train_loss"] for h in result.history]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_frozen_model_with_zero_patience_stops_after_first_epoch():
    rng = np.random.default_rng(4)
    splits = _small_splits(rng)
    model = build_model(ModelConfig("attention", hidden=8), splits.train)
    before = model.state_dict()
    for p in model.parameters():
        p.requires_grad = False
    result = train(model, splits, ExperimentSpec("E1"), TrainConfig(epochs=20, early_stop_patience=0))
    assert [h["epoch"] for h in result.history] == [1]
    assert result.best_epoch == 0
    assert all(np.array_equal(before[k], v) for k, v in model.state_dict().items())


def test_empty_splits_rejected():
    rng = np.random.default_rng(5)
    splits = _small_splits(rng)
    model = build_model(ModelConfig("mlp"), splits.train)
    with pytest.raises(ValueError):
        train(model, Splits(splits.train, [], splits.test), ExperimentSpec("E1"), TrainConfig(epochs=1))


def _quick_run(seed):
    rng = np.random.default_rng(6)
    splits = _small_splits(rng, 40, 10)
    model = build_model(ModelConfig("set_transformer", width=8, hidden=8, seed=1), splits.train)
    return train(model, splits, ExperimentSpec("E1"),
                 TrainConfig(epochs=3, accumulation_window=4, seed=seed, lr=1e-2)), splits


def test_same_seed_same_weights():
    a, _ = _quick_run(0)
    b, _ = _quick_run(0)
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert a.history == b.history


def test_returned_weights_achieve_best_validation():
    result, splits = _quick_run(1)
    recorded = [result.initial_val_error] + [h["val_error_m"] for h in result.history]
    assert result.best_val_error == min(recorded)
    assert mean_error(result.model, splits.val, result.stats) == result.best_val_error


def test_multitask_step_logs_add_up():
    rng = np.random.default_rng(7)
    bssids = [f"aa:{i:02x}" for i in range(8)]
    scans = [random_scan(rng, 4, bssids) for _ in range(40)]
    for i, s in enumerate(scans):
        s.floor = 1 + i % 2
    spec = ExperimentSpec("E3", class_field="floor", multi_task=True)
    splits = Splits(scans[:30], scans[30:36], scans[36:], classes=[1, 2])
    model = build_model(ModelConfig("attention", hidden=8, multi_task=True, num_classes=2), splits.train)
    result = train(model, splits, spec, TrainConfig(epochs=2, accumulation_window=7))
    assert len(result.steps) == 2 * 5
    for step in result.steps:
        assert abs(step.total - (step.reg + step.cls)) <= 1e-9 * max(1.0, abs(step.total))


def test_history_round_trip(tmp_path):
    hist = [{"epoch": 1, "train_loss": 0.1 + 1e-17, "val_error_m": 3.25}, {"epoch": 2, "train_loss": 1 / 3,
                                                                             "val_error_m": 2.0}]
    write_history(hist, tmp_path / "h.csv")
    assert read_history(tmp_path / "h.csv") == hist
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,train_loss,val_error_m"


def test_e1_beats_centroid_baseline():
    world = default_world("E1")
    spec = default_experiment("E1")
    splits = assemble_experiment(generate_synthetic(world, 300, seed=3), spec)
    stats = fit_norm_stats(splits.train)
    baseline = np.mean([np.hypot(*(np.asarray(s.position) - stats.mu)) for s in splits.val])
    model = build_model(ModelConfig("attention"), splits.train)
    result = train(model, splits, spec, TrainConfig(epochs=8))
    assert result.best_val_error < baseline
