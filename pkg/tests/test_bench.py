"""Latency statistics with injected clocks, ratios and the protocol defaults."""

import inspect

import numpy as np
import pytest

from svdcnn.architecture import ArchitectureSpec, build_model
from svdcnn.autograd import StateError
from svdcnn.bench import (
    LatencyStats,
    format_stats_row,
    latency_ratio,
    load_stats,
    measure_latency,
    save_stats,
)


def tiny_model():
    return build_model(
        ArchitectureSpec("svdcnn", depth=9, seq_len=8, pooled_len=1, n_classes=2, fc_hidden=4),
        seed=0,
    ).eval()


class FakeClock:
    """Returns scripted readings (seconds) on successive calls."""

    def __init__(self, readings):
        self.readings = list(readings)

    def __call__(self):
        return self.readings.pop(0)


class TestMeasure:
    def test_scripted_clock_gives_exact_stats(self):
        # per-rep (start, end) pairs elapse exactly 1, 2 and 3 ms
        clock = FakeClock([0.0, 0.001, 0.0, 0.002, 0.0, 0.003])
        stats = measure_latency(tiny_model(), np.zeros(8, dtype=np.int64), reps=3, warmup=0, clock=clock)
        assert stats.mean_ms == 2.0
        assert stats.std_ms == 1.0
        assert stats.reps == 3

    def test_deterministic_clock_is_reproducible(self):
        readings = [0.0, 0.004, 0.0, 0.002, 0.0, 0.006, 0.0, 0.008]
        a = measure_latency(tiny_model(), np.zeros(8, dtype=np.int64), reps=4, warmup=0, clock=FakeClock(readings))
        b = measure_latency(tiny_model(), np.zeros(8, dtype=np.int64), reps=4, warmup=0, clock=FakeClock(readings))
        assert (a.mean_ms, a.std_ms) == (b.mean_ms, b.std_ms)

    def test_default_reps_is_1000(self):
        signature = inspect.signature(measure_latency)
        assert signature.parameters["reps"].default == 1000
        assert signature.parameters["warmup"].default == 10

    def test_too_few_reps(self):
        with pytest.raises(ValueError, match="2 repetitions"):
            measure_latency(tiny_model(), np.zeros(8, dtype=np.int64), reps=1)

    def test_train_mode_rejected(self):
        model = tiny_model().train()
        with pytest.raises(StateError, match="eval"):
            measure_latency(model, np.zeros(8, dtype=np.int64), reps=2)

    def test_single_instance_only(self):
        with pytest.raises(ValueError, match="one instance"):
            measure_latency(tiny_model(), np.zeros((2, 8), dtype=np.int64), reps=2)

    def test_coarse_resolution_sets_warning(self):
        clock = FakeClock([0.0, 0.001, 0.0, 0.001])
        stats = measure_latency(
            tiny_model(), np.zeros(8, dtype=np.int64), reps=2, warmup=0, clock=clock, resolution_s=0.001
        )
        assert stats.resolution_warning
        fine = measure_latency(
            tiny_model(), np.zeros(8, dtype=np.int64), reps=2, warmup=0,
            clock=FakeClock([0.0, 0.001, 0.0, 0.001]), resolution_s=1e-9,
        )
        assert not fine.resolution_warning

    def test_real_clock_smoke(self):
        stats = measure_latency(tiny_model(), np.zeros(8, dtype=np.int64), reps=3, warmup=1)
        assert stats.mean_ms > 0
        assert stats.std_ms >= 0


class TestRatio:
    def test_reference_rows(self):
        fast = LatencyStats(mean_ms=5.53, std_ms=0.1, reps=10, warmup=0)
        slow = LatencyStats(mean_ms=25.88, std_ms=0.1, reps=10, warmup=0)
        assert latency_ratio(fast, slow) == 0.21
        a = LatencyStats(mean_ms=10.26, std_ms=0.1, reps=10, warmup=0)
        b = LatencyStats(mean_ms=65.80, std_ms=0.1, reps=10, warmup=0)
        assert latency_ratio(a, b) == 0.16

    def test_equal_means_give_one(self):
        s = LatencyStats(mean_ms=7.0, std_ms=0.0, reps=5, warmup=0)
        assert latency_ratio(s, s) == 1.00

    def test_zero_denominator(self):
        a = LatencyStats(mean_ms=1.0, std_ms=0.0, reps=2, warmup=0)
        b = LatencyStats(mean_ms=0.0, std_ms=0.0, reps=2, warmup=0)
        with pytest.raises(ValueError, match="positive"):
            latency_ratio(a, b)


class TestRecords:
    def test_json_roundtrip(self, tmp_path):
        stats = LatencyStats(mean_ms=3.25, std_ms=0.5, reps=100, warmup=10, environment="hostA")
        path = tmp_path / "run.json"
        save_stats(stats, path)
        assert load_stats(path) == stats

    def test_stats_validation(self):
        with pytest.raises(ValueError):
            LatencyStats(mean_ms=1.0, std_ms=-0.1, reps=5, warmup=0)
        with pytest.raises(ValueError):
            LatencyStats(mean_ms=1.0, std_ms=0.1, reps=1, warmup=0)

    def test_row_format_mentions_reps(self):
        stats = LatencyStats(mean_ms=3.25, std_ms=0.5, reps=100, warmup=10)
        row = format_stats_row("svdcnn", 9, stats)
        assert "3.25" in row and "reps=100" in row and "9" in row
