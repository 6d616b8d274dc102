"""Interval counting, pair scoring and offset synchronization.

Interval ``j`` at offset ``o`` is the half-open range
``[epoch + o + j*T, epoch + o + (j+1)*T)``. Synchronization tries the offsets
``k*T/100`` for ``k = 0..99`` and keeps the one with the most detected pairs,
preferring the smallest offset on ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError
from .trace import FlowTrace
from .watermark import WatermarkKey

SYNC_STEPS = 100
COUNTER_DTYPE = np.uint32


@dataclass(frozen=True, eq=False)
class DetectionResult:
    deltas: np.ndarray
    n_c: int
    watermarked: bool
    offset: float
    counts: np.ndarray

    @property
    def state_bytes(self) -> int:
        """Size of the per-flow interval counters."""
        return int(self.counts.nbytes)


def sync_offsets(T: float) -> np.ndarray:
    return np.arange(SYNC_STEPS) * T / SYNC_STEPS


def _bounds(epoch: float, offset, T: float, l: int) -> np.ndarray:
    return (epoch + np.asarray(offset))[..., None] + np.arange(2 * l + 1) * T


@lru_cache(maxsize=64)
def _sync_grid(epoch: float, T: float, l: int) -> np.ndarray:
    """Every interval boundary of every offset, ordered by (interval, offset).

    Entry ``SYNC_STEPS*m + k`` is the start of interval ``m`` at offset ``k``,
    built with the same float arithmetic as ``count_intervals``.
    """
    grid = _bounds(epoch, sync_offsets(T), T, l).T.ravel()
    if not np.all(np.diff(grid) > 0):
        raise ParameterError(f"T={T} too small to resolve {SYNC_STEPS} sync offsets")
    grid.setflags(write=False)
    return grid


def count_intervals(trace: FlowTrace, key: WatermarkKey, offset: float = 0.0) -> np.ndarray:
    """Packets per watermark interval; packets outside the span are ignored."""
    if not 0 <= offset < key.T:
        raise ParameterError(f"offset must be in [0, T), got {offset!r}")
    edges = np.searchsorted(trace.timestamps, _bounds(key.epoch, offset, key.T, key.l))
    return np.diff(edges).astype(COUNTER_DTYPE)


def score(counts, key: WatermarkKey, eta: int) -> tuple[np.ndarray, int]:
    """Per-pair ``N(HI_i) - N(LO_i)`` and the number of pairs strictly above ``eta``."""
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape[-1] != key.n_intervals:
        raise ParameterError(f"expected {key.n_intervals} interval counts, got {counts.shape[-1]}")
    deltas = counts[..., key.hi_intervals] - counts[..., key.lo_intervals]
    return deltas, int(np.count_nonzero(deltas > eta))


class Detector:
    """Detector bound to one key, with thresholds and the offset grid cached."""

    def __init__(self, key: WatermarkKey, eta: int = 1, theta: int | None = None):
        if theta is None:
            theta = max(1, key.l // 2)
        if not 1 <= theta <= key.l:
            raise ParameterError(f"theta must be in [1, {key.l}], got {theta!r}")
        if eta < 0:
            raise ParameterError(f"eta must be >= 0, got {eta!r}")
        self.key = key
        self.eta = int(eta)
        self.theta = int(theta)
        self._hi = key.hi_intervals
        self._lo = key.lo_intervals
        self._offsets = sync_offsets(key.T)
        self._grid = _sync_grid(key.epoch, key.T, key.l)

    def scan(self, trace: FlowTrace) -> np.ndarray:
        """Detected-pair count at every synchronization offset."""
        ts = trace.timestamps
        if ts.size == 0:
            return np.zeros(SYNC_STEPS, dtype=np.int64)
        # below[p] = packets lying before grid boundary p
        past = np.searchsorted(self._grid, ts, side="right")
        hist = np.bincount(past, minlength=self._grid.size + 1)
        below = np.cumsum(hist[: self._grid.size], dtype=np.int32).reshape(-1, SYNC_STEPS)
        counts = np.diff(below, axis=0)
        deltas = counts[self._hi] - counts[self._lo]
        return np.count_nonzero(deltas > self.eta, axis=0)

    def synchronize(self, trace: FlowTrace) -> tuple[float, int]:
        n_c = self.scan(trace)
        k = int(np.argmax(n_c))
        return float(self._offsets[k]), int(n_c[k])

    def detect(self, trace: FlowTrace) -> DetectionResult:
        offset, _ = self.synchronize(trace)
        counts = count_intervals(trace, self.key, offset)
        deltas, n_c = score(counts, self.key, self.eta)
        return DetectionResult(deltas, n_c, n_c >= self.theta, offset, counts)


def synchronize(trace: FlowTrace, key: WatermarkKey, eta: int) -> tuple[float, int]:
    return Detector(key, eta).synchronize(trace)


def detect(trace: FlowTrace, key: WatermarkKey, eta: int, theta: int) -> DetectionResult:
    """Synchronize, then score at the best offset; watermarked iff ``n_c >= theta``."""
    return Detector(key, eta, theta).detect(trace)
