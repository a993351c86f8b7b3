"""Single-instance inference latency measurement.

Timings cover the network forward pass only, not text quantization. The
clock is injectable so the statistics are unit-testable without wall time.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .architecture import Model, round2
from .autograd import StateError


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    std_ms: float
    reps: int
    warmup: int
    environment: str = ""
    resolution_warning: bool = False

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError(f"need at least 2 repetitions, got {self.reps}")
        if self.std_ms < 0:
            raise ValueError(f"standard deviation cannot be negative, got {self.std_ms}")


def measure_latency(
    model: Model,
    indices,
    reps: int = 1000,
    warmup: int = 10,
    clock=None,
    environment: str = "",
    resolution_s: float | None = None,
) -> LatencyStats:
    """Mean and sample standard deviation (n-1) of single-instance forwards.

    Warmup passes are untimed. ``clock`` must return seconds on a monotonic
    scale; it defaults to ``time.perf_counter``. When the clock resolution is
    coarser than 1% of the measured mean, ``resolution_warning`` is set.
    """
    if reps < 2:
        raise ValueError(f"need at least 2 repetitions, got {reps}")
    if warmup < 0:
        raise ValueError(f"warmup cannot be negative, got {warmup}")
    if model.mode != "eval":
        raise StateError("model must be in eval mode for latency measurement")
    idx = np.asarray(indices)
    if idx.ndim == 1:
        idx = idx[None]
    if idx.shape[0] != 1:
        raise ValueError(f"latency is measured one instance at a time, got batch {idx.shape[0]}")
    if clock is None:
        clock = time.perf_counter
        if resolution_s is None:
            resolution_s = time.get_clock_info("perf_counter").resolution
    elif resolution_s is None:
        resolution_s = 0.0

    for _ in range(warmup):
        model.forward(idx)
    elapsed_ms = np.empty(reps, dtype=np.float64)
    for i in range(reps):
        start = clock()
        model.forward(idx)
        elapsed_ms[i] = (clock() - start) * 1000.0
    mean = float(np.mean(elapsed_ms))
    std = float(np.std(elapsed_ms, ddof=1))
    warning = mean > 0 and (resolution_s * 1000.0) > 0.01 * mean
    return LatencyStats(mean, std, reps, warmup, environment, warning)


def latency_ratio(a: LatencyStats, b: LatencyStats) -> float:
    """Mean-latency ratio a/b, rounded to 2 decimals."""
    if b.mean_ms <= 0:
        raise ValueError(f"denominator mean must be positive, got {b.mean_ms}")
    return round2(a.mean_ms / b.mean_ms)


def format_stats_row(label: str, depth: int, stats: LatencyStats) -> str:
    row = f"{label:<10} {depth:>3}  {stats.mean_ms:8.2f}ms ±{stats.std_ms:.2f}  reps={stats.reps}"
    if stats.environment:
        row += f"  [{stats.environment}]"
    if stats.resolution_warning:
        row += "  (timer resolution coarse relative to mean)"
    return row


def save_stats(stats: LatencyStats, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(stats), fh, indent=2)
        fh.write("\n")


def load_stats(path) -> LatencyStats:
    with open(path, encoding="utf-8") as fh:
        return LatencyStats(**json.load(fh))
