"""Background C&C traffic from bots answering broadcast commands.

Commands arrive as a Poisson process. Every bot independently answers each
command with one packet after a uniform random delay, so responses from all
bots cluster right after each command. A bot whose answer would break its
rate cap sends it in the next interval that has room.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import mix
from .errors import ParameterError
from .trace import FlowTrace
from .watermark import DEFAULT_RATE_CAP, rate_window


@dataclass(frozen=True)
class BotnetConfig:
    """Parameters of the simulated botnet.

    ``interval`` is the grid on which ``per_bot_rate_cap`` is enforced; the
    evaluation sets it to the watermark interval length.
    """

    bots: int = 100
    duration: float = 64.5
    command_rate: float = 0.2
    response_delay_lo: float = 0.5
    response_delay_hi: float = 2.0
    response_prob: float = 0.1
    per_bot_rate_cap: float = DEFAULT_RATE_CAP
    interval: float = 0.5
    start: float = 0.0

    def __post_init__(self):
        if isinstance(self.bots, bool) or int(self.bots) != self.bots or self.bots < 0:
            raise ParameterError(f"bots must be an integer >= 0, got {self.bots!r}")
        if not self.duration > 0:
            raise ParameterError(f"duration must be positive, got {self.duration!r}")
        if not self.command_rate >= 0:
            raise ParameterError(f"command_rate must be >= 0, got {self.command_rate!r}")
        if not 0 <= self.response_delay_lo <= self.response_delay_hi:
            raise ParameterError("need 0 <= response_delay_lo <= response_delay_hi")
        if not 0 <= self.response_prob <= 1:
            raise ParameterError(f"response_prob must be in [0, 1], got {self.response_prob!r}")
        if not self.per_bot_rate_cap > 0 or not self.interval > 0:
            raise ParameterError("per_bot_rate_cap and interval must be positive")
        if not self.start >= 0:
            raise ParameterError(f"start must be >= 0, got {self.start!r}")

    @property
    def expected_packets(self) -> float:
        return self.bots * self.command_rate * self.response_prob * self.duration


def enforce_rate_cap(
    times: np.ndarray, origin: float, interval: float, rate_cap: float
) -> np.ndarray:
    """Defer packets of one flow that exceed its rate window.

    Packets are handled in time order; an offending packet moves to the
    first later interval with room, keeping its position within the interval.
    """
    window, cap = rate_window(interval, rate_cap)
    times = np.sort(np.asarray(times, dtype=np.float64))
    if times.size < 2:
        return times
    pos = (times - origin) / interval
    slots = np.floor(pos)
    frac = pos - slots
    if window == 1:
        _, run = np.unique(slots, return_counts=True)
        if run.max() <= cap:
            return times
    elif np.all(np.diff(slots) >= window):
        return times
    out = times.copy()
    assigned: list[int] = []
    for k, j in enumerate(slots.astype(np.int64)):
        jj = max(j, assigned[-1]) if assigned else j
        # assigned is non-decreasing, so the window holds a suffix of it
        while len(assigned) >= cap and assigned[-cap] > jj - window:
            jj += 1
        assigned.append(jj)
        if jj != j:
            out[k] = origin + (jj + frac[k]) * interval
    return np.sort(out)


def simulate_bot_flows(config: BotnetConfig, rng_seed: int) -> list[FlowTrace]:
    """One flow per bot, restricted to ``[start, start + duration)``.

    Commands are drawn from ``response_delay_hi`` seconds before ``start`` so
    the response rate is already stationary when the window opens.
    """
    rng = np.random.default_rng(rng_seed)
    warmup = config.response_delay_hi
    horizon = config.duration + warmup
    n_cmd = rng.poisson(config.command_rate * horizon)
    commands = np.sort(config.start - warmup + horizon * rng.random(n_cmd))
    answered = rng.random((config.bots, n_cmd)) < config.response_prob
    delays = rng.uniform(config.response_delay_lo, config.response_delay_hi, (config.bots, n_cmd))
    end = config.start + config.duration
    flows = []
    for b in range(config.bots):
        t = commands[answered[b]] + delays[b][answered[b]]
        t = enforce_rate_cap(t, config.start, config.interval, config.per_bot_rate_cap)
        t = t[(t >= config.start) & (t < end)]
        flows.append(FlowTrace(f"bot-{b}", t))
    return flows


def simulate_background(
    config: BotnetConfig, rng_seed: int, flow_id: str = "background"
) -> FlowTrace:
    """Mixed C&C traffic of all simulated bots."""
    return mix(simulate_bot_flows(config, rng_seed), flow_id)


def background_for_span(config: BotnetConfig, epoch: float, span: float, T: float) -> BotnetConfig:
    """Fit a config to cover a watermark span plus one interval of slack."""
    return replace(config, start=epoch, duration=span + T, interval=T)

