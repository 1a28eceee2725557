import math

import numpy as np
import pytest

from setloc.autograd import Tensor
from setloc.data import Scan
from setloc.evaluation import (
    PLOT_COLUMNS,
    Metrics,
    euclidean_error,
    evaluate,
    export_plot_data,
    format_table,
    read_plot_data,
    read_report,
    report_row,
    write_report,
)
from setloc.models import ModelConfig, Prediction, build_model
from setloc.training import NormStats, fit_norm_stats

from helpers import random_scan


class Memorizer:
    """Returns the stored normalized position of each scan it was shown."""

    def __init__(self, scans, stats):
        self.table = {id(s): stats.normalize(s.position) for s in scans}

    def __call__(self, scan):
        return Prediction(Tensor(self.table[id(scan)]))


class Constant:
    def __init__(self, xy_norm=(0.0, 0.0), logits=None):
        self.xy, self.logits = np.asarray(xy_norm, dtype=float), logits

    def __call__(self, scan):
        return Prediction(Tensor(self.xy), None if self.logits is None else Tensor(np.asarray(self.logits)))


def _scans(rng, k=25):
    out = []
    for i in range(k):
        s = random_scan(rng, 3, position=(4.5e5 + rng.uniform(0, 80), 5.4e6 + rng.uniform(0, 40)))
        s.scan_id, s.floor = f"t{i}", 1 + i % 2
        out.append(s)
    return out


@pytest.mark.parametrize("pred,truth,expected", [
    ((2.0, 3.0), (2.0, 3.0), 0.0),
    ((3.0, 4.0), (0.0, 0.0), 5.0),
    ((1.0, 1.0), (0.0, 0.0), math.sqrt(2)),
])
def test_euclidean_error(pred, truth, expected):
    assert euclidean_error(pred, truth) == pytest.approx(expected, abs=1e-15)


def test_memorizing_model_has_zero_error():
    scans = _scans(np.random.default_rng(0))
    stats = fit_norm_stats(scans)
    m = evaluate(Memorizer(scans, stats), scans, stats)
    assert m.mean_error_m < 1e-6


def test_centroid_predictor_matches_closed_form():
    rng = np.random.default_rng(1)
    train, test = _scans(rng, 40), _scans(rng, 15)
    stats = fit_norm_stats(train)
    m = evaluate(Constant(), test, stats)
    cx = math.fsum(s.position[0] for s in train) / len(train)
    cy = math.fsum(s.position[1] for s in train) / len(train)
    expected = math.fsum(math.hypot(s.position[0] - cx, s.position[1] - cy) for s in test) / len(test)
    assert m.mean_error_m == pytest.approx(expected, rel=1e-9)


def test_always_class_zero_on_balanced_set():
    scans = _scans(np.random.default_rng(2), 20)
    stats = fit_norm_stats(scans)
    m = evaluate(Constant(logits=[1.0, 0.0]), scans, stats, classes=[1, 2], class_field="floor")
    assert m.class_accuracy == 0.5


def test_accuracy_absent_without_class_head():
    scans = _scans(np.random.default_rng(3), 6)
    assert evaluate(Constant(), scans, fit_norm_stats(scans)).class_accuracy is None


def test_empty_test_set():
    with pytest.raises(ValueError):
        evaluate(Constant(), [], NormStats(0, 1, 0, 1))


def test_summary_matches_single_pass_recomputation():
    rng = np.random.default_rng(4)
    scans = _scans(rng, 50)
    stats = fit_norm_stats(scans)
    m = evaluate(Constant((0.3, -0.2)), scans, stats)
    # Welford single pass
    mean = m2 = 0.0
    for k, e in enumerate(m.per_scan_errors, 1):
        delta = e - mean
        mean += delta / k
        m2 += delta * (e - mean)
    assert m.mean_error_m == pytest.approx(mean, rel=1e-9)
    assert m.std_error_m == pytest.approx(math.sqrt(m2 / len(m.per_scan_errors)), rel=1e-9)


def test_metrics_invariant_under_test_permutation():
    rng = np.random.default_rng(5)
    scans = _scans(rng, 40)
    stats = fit_norm_stats(scans)
    model = build_model(ModelConfig("attention"), scans)
    ref = evaluate(model, scans, stats)
    for _ in range(3):
        shuffled = [scans[i] for i in rng.permutation(len(scans))]
        m = evaluate(model, shuffled, stats)
        assert (m.mean_error_m, m.std_error_m) == (ref.mean_error_m, ref.std_error_m)


def test_denormalization_inverse():
    rng = np.random.default_rng(6)
    stats = NormStats(4.5e5, 23.0, 5.4e6, 11.0)
    p = rng.normal(size=(1000, 2)) * 3
    back = np.array([stats.normalize(stats.denormalize(v)) for v in p])
    assert np.max(np.abs(back - p)) < 1e-9


def test_plot_data_rows_and_errors(tmp_path):
    rng = np.random.default_rng(7)
    scans = _scans(rng, 30)
    stats = fit_norm_stats(scans)
    model = build_model(ModelConfig("set_transformer", multi_task=True, num_classes=2), scans)
    m = export_plot_data(model, scans, stats, tmp_path / "plot.csv", classes=[1, 2], class_field="floor")
    rows = read_plot_data(tmp_path / "plot.csv")
    assert tuple(rows[0].keys()) == PLOT_COLUMNS
    assert len(rows) == len(scans)
    assert [r["scan_id"] for r in rows] == [s.scan_id for s in scans]
    for r in rows:
        err = math.hypot(float(r["pred_x"]) - float(r["true_x"]), float(r["pred_y"]) - float(r["true_y"]))
        assert abs(err - float(r["error_m"])) <= 1e-9
        assert r["pred_floor"] in ("1", "2")
    assert m.class_accuracy is not None


def test_plot_data_is_deterministic(tmp_path):
    scans = _scans(np.random.default_rng(8), 10)
    stats = fit_norm_stats(scans)
    model = build_model(ModelConfig("lstm"), scans)
    export_plot_data(model, scans, stats, tmp_path / "a.csv")
    export_plot_data(model, scans, stats, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_plot_data(tmp_path / "a.csv")[0]["pred_floor"] == ""


def test_plot_data_unwritable_path(tmp_path):
    scans = _scans(np.random.default_rng(9), 3)
    stats = fit_norm_stats(scans)
    with pytest.raises(OSError):
        export_plot_data(Constant(), scans, stats, tmp_path / "missing" / "plot.csv")


def test_report_round_trip_and_table(tmp_path):
    rows = [report_row("E1", "lstm", Metrics.from_errors([1.0, 3.0])),
            report_row("E3", "set_transformer", Metrics.from_errors([2.0], class_accuracy=0.75))]
    write_report(rows, tmp_path / "r.csv")
    back = read_report(tmp_path / "r.csv")
    assert back[0]["mean_error_m"] == 2.0 and back[0]["std_error_m"] == 1.0
    assert back[0]["class_accuracy"] is None and back[1]["class_accuracy"] == 0.75
    table = format_table(back)
    assert "2.00 ± 1.00" in table and "0.750" in table
