"""Keys, insertion planning and share emission for the collaborative watermark.

The watermark spans ``2*l`` consecutive intervals of length ``T``. Each pair
``i`` owns one HI and one LO interval, chosen by a secret random labeling.
Insertion makes the mixture of all ``R`` captured flows carry exactly
``eta + psi`` more packets in HI than in LO, while every individual flow
stays under the per-flow rate cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllocationError, FeasibilityError, FormatError, ParameterError
from .trace import FlowTrace

HI = "HI"
LO = "LO"
DEFAULT_RATE_CAP = 0.5

# guards floor/ceil of products like 0.2 * 10 * 0.5 against float noise
_EPS = 1e-9


def _floor(x: float) -> int:
    return math.floor(x + _EPS)


def _ceil(x: float) -> int:
    return math.ceil(x - _EPS)


def rate_window(T: float, rate_cap: float) -> tuple[int, int]:
    """Interval-granularity form of a per-flow packet rate cap.

    Returns ``(window, cap)``: a flow may carry at most ``cap`` packets in any
    ``window`` consecutive intervals of length ``T``. When an interval admits
    at least one packet (``T * rate_cap >= 1``) the window is a single
    interval and ``cap = floor(T * rate_cap)``. Otherwise a flow gets one
    packet per ``ceil(1 / (T * rate_cap))`` intervals.
    """
    x = T * rate_cap
    if x >= 1 - _EPS:
        return 1, _floor(x)
    return _ceil(1.0 / x), 1


def windowed_counts(counts: np.ndarray, window: int) -> np.ndarray:
    """Sliding sums of ``window`` consecutive entries along the last axis."""
    counts = np.asarray(counts)
    if window <= 1:
        return counts
    n = counts.shape[-1]
    if n < window:
        return counts.sum(axis=-1, keepdims=True)
    c = np.cumsum(counts, axis=-1)
    c = np.concatenate([np.zeros(counts.shape[:-1] + (1,), c.dtype), c], axis=-1)
    return c[..., window:] - c[..., :-window]


@dataclass(frozen=True)
class WatermarkParams:
    """Insertion and detection parameters.

    ``eta`` is the detection threshold, ``psi`` the extra insertion margin,
    ``R`` the number of captured flows and ``rate_cap`` the per-flow packet
    rate ceiling in packets per second.
    """

    T: float = 0.5
    l: int = 64
    eta: int = 1
    psi: int = 1
    R: int = 10
    rate_cap: float = DEFAULT_RATE_CAP

    def __post_init__(self):
        if not (isinstance(self.T, (int, float)) and self.T > 0 and math.isfinite(self.T)):
            raise ParameterError(f"T must be a positive number, got {self.T!r}")
        for name in ("l", "eta", "psi", "R"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ParameterError(f"{name} must be an integer >= 1, got {value!r}")
        if not (self.rate_cap > 0 and math.isfinite(self.rate_cap)):
            raise ParameterError(f"rate_cap must be positive, got {self.rate_cap!r}")

    @property
    def span(self) -> float:
        return 2 * self.l * self.T

    @property
    def flow_window(self) -> tuple[int, int]:
        return rate_window(self.T, self.rate_cap)

    @property
    def interval_capacity(self) -> int:
        """Most packets the ``R`` flows can jointly place in one interval
        such that any run of intervals at that level stays schedulable."""
        window, cap = self.flow_window
        return self.R * cap if window == 1 else self.R // window

    def hi_range(self) -> tuple[int, int]:
        """Integer range for the HI count of a pair, inclusive.

        ``[ceil(T*R*rate_cap/2), floor(T*R*rate_cap)]``, with the upper end
        additionally limited by what the flows can carry.
        """
        budget = self.T * self.R * self.rate_cap
        return _ceil(budget / 2), min(_floor(budget), self.interval_capacity)

    def check_feasible(self) -> None:
        lo, hi = self.hi_range()
        if lo > hi:
            raise FeasibilityError(
                f"empty HI count range [{lo}, {hi}] for T={self.T}, R={self.R}, "
                f"rate_cap={self.rate_cap}"
            )
        if lo < self.eta + self.psi:
            raise FeasibilityError(
                f"eta + psi = {self.eta + self.psi} exceeds the smallest HI count {lo}; "
                f"LO counts would go negative (T={self.T}, R={self.R})"
            )

    @property
    def feasible(self) -> bool:
        try:
            self.check_feasible()
        except FeasibilityError:
            return False
        return True


@dataclass(frozen=True)
class WatermarkKey:
    """Secret interval labeling.

    ``labels[j]`` is ``(pair, role)`` for interval ``j``, with ``pair`` in
    ``1..l`` and ``role`` either ``"HI"`` or ``"LO"``.
    """

    T: float
    l: int
    labels: tuple
    epoch: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"T must be positive, got {self.T!r}")
        if self.l < 1:
            raise ParameterError(f"l must be >= 1, got {self.l!r}")
        labels = tuple((int(p), str(r)) for p, r in self.labels)
        if len(labels) != 2 * self.l:
            raise ParameterError(f"expected {2 * self.l} labels, got {len(labels)}")
        expected = {(p, r) for p in range(1, self.l + 1) for r in (HI, LO)}
        if set(labels) != expected:
            raise ParameterError("labels must assign each pair exactly one HI and one LO interval")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "epoch", float(self.epoch))

    @property
    def n_intervals(self) -> int:
        return 2 * self.l

    @property
    def span(self) -> float:
        return 2 * self.l * self.T

    def interval_start(self, j) -> np.ndarray | float:
        return self.epoch + np.asarray(j) * self.T

    @property
    def hi_intervals(self) -> np.ndarray:
        """Interval index of HI for pairs 1..l (array position ``i - 1``)."""
        return self._index(HI)

    @property
    def lo_intervals(self) -> np.ndarray:
        return self._index(LO)

    def _index(self, role: str) -> np.ndarray:
        out = np.empty(self.l, dtype=np.intp)
        for j, (p, r) in enumerate(self.labels):
            if r == role:
                out[p - 1] = j
        return out

    def to_text(self) -> str:
        lines = [f"T={self.T!r} l={self.l} epoch={self.epoch!r}"]
        lines += [f"{j} {p} {r}" for j, (p, r) in enumerate(self.labels)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, path=None) -> WatermarkKey:
        lines = text.splitlines()
        if not lines:
            raise FormatError("empty key file", path, 1)
        fields = {}
        for item in lines[0].split():
            name, sep, value = item.partition("=")
            if not sep or name not in ("T", "l", "epoch"):
                raise FormatError(f"bad header field {item!r}", path, 1)
            fields[name] = value
        try:
            T = float(fields["T"])
            l = int(fields["l"])
            epoch = float(fields.get("epoch", "0"))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad key header: {exc}", path, 1) from None
        body = [(n, s) for n, s in enumerate(lines[1:], start=2) if s.strip()]
        if len(body) != 2 * l:
            raise FormatError(f"expected {2 * l} label lines, found {len(body)}", path)
        labels = []
        for expected_j, (lineno, s) in enumerate(body):
            parts = s.split()
            if len(parts) != 3 or parts[2] not in (HI, LO):
                raise FormatError(f"expected '<interval> <pair> <HI|LO>', got {s!r}", path, lineno)
            try:
                j, p = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"non-integer index in {s!r}", path, lineno) from None
            if j != expected_j:
                raise FormatError(f"interval {j} out of order, expected {expected_j}", path, lineno)
            labels.append((p, parts[2]))
        try:
            return cls(T=T, l=l, labels=tuple(labels), epoch=epoch)
        except ParameterError as exc:
            raise FormatError(str(exc), path) from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> WatermarkKey:
        path = Path(path)
        return cls.from_text(path.read_text(), path)


def generate_key(seed: int, l: int, T: float, epoch: float = 0.0) -> WatermarkKey:
    """Draw a uniformly random HI/LO labeling of ``2*l`` intervals.

    The first ``l`` entries of a random permutation become HI_1..HI_l and the
    rest LO_1..LO_l, so every bijection is equally likely.
    """
    if isinstance(l, bool) or not isinstance(l, (int, np.integer)) or l < 1:
        raise ParameterError(f"l must be an integer >= 1, got {l!r}")
    if not (T > 0 and math.isfinite(T)):
        raise ParameterError(f"T must be positive, got {T!r}")
    perm = np.random.default_rng(seed).permutation(2 * l)
    labels = [None] * (2 * l)
    for i in range(l):
        labels[perm[i]] = (i + 1, HI)
        labels[perm[l + i]] = (i + 1, LO)
    return WatermarkKey(T=T, l=int(l), labels=tuple(labels), epoch=epoch)


@dataclass(frozen=True, eq=False)
class PairCounts:
    """Per-pair packet totals for the mixture, tied to interval positions."""

    hi_intervals: np.ndarray
    lo_intervals: np.ndarray
    n_hi: np.ndarray
    n_lo: np.ndarray

    @property
    def l(self) -> int:
        return len(self.n_hi)

    @property
    def totals(self) -> np.ndarray:
        """Planned mixture count N(j) for every interval."""
        out = np.zeros(2 * self.l, dtype=np.int64)
        out[self.hi_intervals] = self.n_hi
        out[self.lo_intervals] = self.n_lo
        return out


@dataclass(frozen=True, eq=False)
class InsertionPlan:
    """Counts plus the share matrix ``shares[f, j]`` (flow ``f``, interval ``j``)."""

    counts: PairCounts
    shares: np.ndarray

    @property
    def R(self) -> int:
        return self.shares.shape[0]

    @property
    def n_hi(self) -> np.ndarray:
        return self.counts.n_hi

    @property
    def n_lo(self) -> np.ndarray:
        return self.counts.n_lo


def plan_counts(key: WatermarkKey, params: WatermarkParams, rng_seed: int) -> PairCounts:
    """Draw N(HI_i) uniformly from the feasible integer range and set
    N(LO_i) = N(HI_i) - eta - psi."""
    if key.l != params.l or key.T != params.T:
        raise ParameterError("key and params disagree on l or T")
    params.check_feasible()
    lo, hi = params.hi_range()
    rng = np.random.default_rng(rng_seed)
    n_hi = rng.integers(lo, hi, size=params.l, endpoint=True)
    n_lo = n_hi - params.eta - params.psi
    return PairCounts(key.hi_intervals, key.lo_intervals, n_hi, n_lo)


def allocate_shares(counts: PairCounts, params: WatermarkParams, rng_seed: int) -> InsertionPlan:
    """Split each interval total across the ``R`` captured flows.

    Intervals are filled in time order; each packet goes to a flow picked
    uniformly among those that can still take a packet without breaking the
    rate window.
    """
    R = params.R
    window, cap = params.flow_window
    totals = counts.totals
    n = len(totals)
    shares = np.zeros((R, n), dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    for j, need in enumerate(totals):
        if need == 0:
            continue
        if window == 1:
            room = np.full(R, cap, dtype=np.int64)
        else:
            room = cap - shares[:, max(0, j - window + 1):j].sum(axis=1)
        if room.sum() < need:
            raise AllocationError(
                f"interval {j} needs {need} packets but the {R} flows can carry "
                f"only {int(room.sum())} under the rate cap"
            )
        if window == 1:
            for _ in range(need):
                f = rng.choice(np.flatnonzero(room > 0))
                room[f] -= 1
                shares[f, j] += 1
        else:
            free = np.flatnonzero(room > 0)
            shares[rng.choice(free, size=need, replace=False), j] = 1
    return InsertionPlan(counts, shares)


def verify_plan(plan: InsertionPlan, params: WatermarkParams) -> bool:
    """True iff every pair meets the detection threshold in the mixture and
    every flow respects the rate window."""
    s = np.asarray(plan.shares)
    if s.ndim != 2 or s.shape[0] != params.R or np.any(s < 0):
        return False
    mixture = s.sum(axis=0)
    c = plan.counts
    if np.any(mixture[c.hi_intervals] - mixture[c.lo_intervals] < params.eta):
        return False
    window, cap = params.flow_window
    return bool(np.all(windowed_counts(s, window) <= cap))


def emit_watermarked_flows(
    plan: InsertionPlan, key: WatermarkKey, rng_seed: int, prefix: str = "captured"
) -> list[FlowTrace]:
    """Place each flow's share of every interval uniformly at random inside it."""
    shares = np.asarray(plan.shares)
    if shares.shape[1] != key.n_intervals:
        raise ParameterError(
            f"plan has {shares.shape[1]} intervals but key has {key.n_intervals}"
        )
    rng = np.random.default_rng(rng_seed)
    starts = key.interval_start(np.arange(key.n_intervals + 1))
    flows = []
    for f in range(shares.shape[0]):
        j = np.repeat(np.arange(key.n_intervals), shares[f])
        lo, hi = starts[j], starts[j + 1]
        t = lo + (hi - lo) * rng.random(j.size)
        # keep rounding from landing a packet on the next interval's boundary
        t = np.minimum(t, np.nextafter(hi, -np.inf))
        flows.append(FlowTrace(f"{prefix}-{f}", t))
    return flows


def insert_watermark(
    key: WatermarkKey, params: WatermarkParams, seed: int, prefix: str = "captured"
) -> list[FlowTrace]:
    """Plan, allocate and emit in one call; sub-seeds derive from ``seed``."""
    s_counts, s_shares, s_emit = np.random.SeedSequence(seed).generate_state(3)
    counts = plan_counts(key, params, int(s_counts))
    plan = allocate_shares(counts, params, int(s_shares))
    return emit_watermarked_flows(plan, key, int(s_emit), prefix=prefix)
