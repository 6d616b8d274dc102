"""Flow mixing and network impairments (delay, jitter, loss, relay chains)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .trace import FlowTrace


@dataclass(frozen=True)
class ChannelModel:
    """Per-hop constant delay, zero-mean normal jitter and independent loss,
    repeated over ``stages`` relay hops."""

    base_delay: float = 0.05
    jitter_sigma: float = 0.01
    drop_prob: float = 0.0
    stages: int = 1

    def __post_init__(self):
        if not self.base_delay >= 0:
            raise ParameterError(f"base_delay must be >= 0, got {self.base_delay!r}")
        if not self.jitter_sigma >= 0:
            raise ParameterError(f"jitter_sigma must be >= 0, got {self.jitter_sigma!r}")
        if not 0 <= self.drop_prob <= 1:
            raise ParameterError(f"drop_prob must be in [0, 1], got {self.drop_prob!r}")
        if isinstance(self.stages, bool) or int(self.stages) != self.stages or self.stages < 1:
            raise ParameterError(f"stages must be an integer >= 1, got {self.stages!r}")

    @classmethod
    def noiseless(cls) -> ChannelModel:
        return cls(0.0, 0.0, 0.0, 1)


def mix(traces: Sequence[FlowTrace], out_id: str = "mixed") -> FlowTrace:
    """Merge flows into one: the sorted multiset union of their timestamps."""
    if not traces:
        return FlowTrace(out_id, np.empty(0))
    return FlowTrace(out_id, np.concatenate([t.timestamps for t in traces]))


def _hop(ts: np.ndarray, model: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    if model.drop_prob > 0:
        ts = ts[rng.random(ts.size) >= model.drop_prob]
    delay = np.full(ts.size, model.base_delay)
    if model.jitter_sigma > 0:
        delay += rng.normal(0.0, model.jitter_sigma, ts.size)
        np.maximum(delay, 0.0, out=delay)
    return ts + delay


def apply_channel(trace: FlowTrace, model: ChannelModel, rng_seed: int) -> FlowTrace:
    """Push a flow through ``model.stages`` hops.

    Each hop drops every packet independently with ``drop_prob`` and delays
    survivors by ``base_delay`` plus normal jitter, with the per-hop delay
    clipped at zero. Jitter may reorder packets; the output is re-sorted.
    """
    rng = np.random.default_rng(rng_seed)
    ts = trace.timestamps
    for _ in range(int(model.stages)):
        ts = _hop(ts, model, rng)
    return FlowTrace(trace.flow_id, ts)
