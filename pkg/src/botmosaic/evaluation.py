"""Monte-Carlo evaluation: trials, crossover error rate, sweeps, benchmarks.

Pair-count samples from watermarked mixtures and from background-only flows
are each fitted with a normal by sample mean and standard deviation. The
crossover threshold is where the fitted false-negative rate of the first
equals the fitted false-positive rate of the second; the crossover error
rate (COER) is that common rate. It is an extrapolation from the fits and
may lie far below ``1 / trials``.
"""

from __future__ import annotations

import csv
import gc
import io
import itertools
import math
import time
import tracemalloc
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, ndtr

from .botnet import BotnetConfig, background_for_span, simulate_background
from .channel import ChannelModel, apply_channel, mix
from .detector import Detector
from .errors import DegenerateSampleError, FeasibilityError, ParameterError
from .trace import FlowTrace
from .watermark import WatermarkParams, generate_key, insert_watermark

BISECTION_TOL = 1e-6
MIN_KS_SAMPLES = 10

SWEEP_COLUMNS = ("l", "T", "R_over_B", "mu_true", "mu_false", "theta_hat", "coer", "trials", "status")


@dataclass(frozen=True)
class CoerReport:
    mu_true: float
    sigma_true: float
    mu_false: float
    sigma_false: float
    theta_hat: float
    coer: float
    trials: int
    ks_true: float = math.nan
    ks_false: float = math.nan
    # crossover point in standard deviations from either mean; coer = Phi(-z)
    z: float = math.nan

    def lines(self) -> list[str]:
        return [
            f"trials={self.trials}",
            f"mu_true={self.mu_true:.4f} sigma_true={self.sigma_true:.4f}",
            f"mu_false={self.mu_false:.4f} sigma_false={self.sigma_false:.4f}",
            f"theta_hat={self.theta_hat:.4f}",
            f"coer={self.coer:.6e} (extrapolated from normal fits)",
            f"ks_true={self.ks_true:.4f} ks_false={self.ks_false:.4f}",
        ]


def trial_seed(master_seed: int, k: int) -> int:
    """Seed of trial ``k``: a hash of ``(master_seed, k)``."""
    return int(np.random.SeedSequence([master_seed, k]).generate_state(1, np.uint64)[0])


def run_trial(
    params: WatermarkParams, botnet: BotnetConfig, channel: ChannelModel, seed: int
) -> tuple[int, int]:
    """Detected pairs on one watermarked mixture and on its background alone.

    A fresh key, insertion and background are drawn from ``seed``. The
    background is fitted to the watermark span. Both flows go through the
    channel with the same channel seed and are scored after synchronization.
    """
    s_key, s_insert, s_bg, s_chan = np.random.SeedSequence(seed).generate_state(4)
    key = generate_key(int(s_key), params.l, params.T)
    captured = insert_watermark(key, params, int(s_insert))
    bg_config = background_for_span(botnet, key.epoch, key.span, key.T)
    background = simulate_background(bg_config, int(s_bg))
    marked = apply_channel(mix(captured + [background]), channel, int(s_chan))
    clean = apply_channel(background, channel, int(s_chan))
    detector = Detector(key, params.eta)
    return detector.synchronize(marked)[1], detector.synchronize(clean)[1]


def _trial_task(args):
    params, botnet, channel, master_seed, k = args
    return run_trial(params, botnet, channel, trial_seed(master_seed, k))


def run_trials(
    params: WatermarkParams,
    botnet: BotnetConfig,
    channel: ChannelModel,
    trials: int,
    master_seed: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``trials`` independent trials; results are in trial-index order."""
    params.check_feasible()
    tasks = [(params, botnet, channel, master_seed, k) for k in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_trial_task(t) for t in tasks]
    out = np.array(results, dtype=np.int64).reshape(-1, 2)
    return out[:, 0], out[:, 1]


def _fit(samples) -> tuple[np.ndarray, float, float]:
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        raise ParameterError("need at least 2 samples per class")
    return x, float(x.mean()), float(x.std(ddof=1))


def ks_distance(samples) -> float:
    """Kolmogorov-Smirnov distance between the samples and their fitted normal.

    Constant samples give 0.5, the limit for a point mass against a normal
    of vanishing width.
    """
    x, mu, sigma = _fit(samples)
    if x.size < MIN_KS_SAMPLES:
        raise ParameterError(f"need at least {MIN_KS_SAMPLES} samples, got {x.size}")
    if sigma == 0:
        return 0.5
    cdf = ndtr((np.sort(x) - mu) / sigma)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))


def crossover(mu_true, sigma_true, mu_false, sigma_false, tol=BISECTION_TOL) -> tuple[float, float]:
    """Bisect for the threshold where the two fitted tails meet.

    Returns ``(theta, log_rate)``. The normal CDF is strictly increasing, so
    the tails are equal exactly where the standardized distances agree;
    bisecting on those keeps full precision even when both rates round to 0
    or to 1. The rate itself is returned as a log.
    """

    def gap(theta):
        return (theta - mu_true) / sigma_true - (mu_false - theta) / sigma_false

    lo, hi = min(mu_true, mu_false), max(mu_true, mu_false)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    return theta, float(log_ndtr((theta - mu_true) / sigma_true))


def estimate_coer(samples_true, samples_false) -> CoerReport:
    """Fit normals to both classes and locate their crossover.

    Raises
    ------
    DegenerateSampleError
        If a class has zero variance and the sample ranges overlap. With
        separated ranges the COER is exactly 0 and the threshold sits midway
        between them.
    """
    xt, mu_t, s_t = _fit(samples_true)
    xf, mu_f, s_f = _fit(samples_false)
    ks_t = ks_distance(xt) if xt.size >= MIN_KS_SAMPLES else math.nan
    ks_f = ks_distance(xf) if xf.size >= MIN_KS_SAMPLES else math.nan
    n = int(min(xt.size, xf.size))
    if s_t == 0 or s_f == 0:
        if xt.min() > xf.max():
            theta = 0.5 * (xt.min() + xf.max())
            return CoerReport(mu_t, s_t, mu_f, s_f, float(theta), 0.0, n, ks_t, ks_f, math.inf)
        raise DegenerateSampleError("zero-variance samples with overlapping support")
    theta, log_rate = crossover(mu_t, s_t, mu_f, s_f)
    return CoerReport(
        mu_t, s_t, mu_f, s_f, theta, math.exp(log_rate), n, ks_t, ks_f, (mu_t - theta) / s_t
    )


@dataclass(frozen=True)
class SweepRow:
    l: int
    T: float
    R_over_B: float
    R: int
    status: str
    report: CoerReport | None = None
    samples_true: np.ndarray = field(default=None, repr=False)
    samples_false: np.ndarray = field(default=None, repr=False)

    def csv_fields(self) -> list[str]:
        r = self.report
        if r is None:
            stats = ["", "", "", "", ""]
        else:
            stats = [repr(r.mu_true), repr(r.mu_false), repr(r.theta_hat), repr(r.coer), str(r.trials)]
        return [str(self.l), repr(self.T), repr(self.R_over_B)] + stats + [self.status]


def sweep(
    grid: dict,
    trials: int,
    seed: int,
    params: WatermarkParams | None = None,
    botnet: BotnetConfig | None = None,
    channel: ChannelModel | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Estimate the COER at every point of ``grid``.

    ``grid`` maps ``"l"``, ``"T"`` and ``"R_over_B"`` to lists; missing axes
    take the value from ``params``. ``R`` is ``R_over_B * bots`` rounded.
    Every point reuses the same trial seeds, so neighbouring points share
    their random backgrounds. Infeasible points are kept with
    ``status="infeasible"``.
    """
    params = params or WatermarkParams()
    botnet = botnet or BotnetConfig()
    channel = channel or ChannelModel()
    ls = grid.get("l") or [params.l]
    Ts = grid.get("T") or [params.T]
    ratios = grid.get("R_over_B") or [params.R / max(botnet.bots, 1)]
    rows = []
    for l, T, rb in itertools.product(ls, Ts, ratios):
        R = max(1, round(rb * botnet.bots))
        try:
            point = replace(params, l=int(l), T=float(T), R=R)
            point.check_feasible()
        except (FeasibilityError, ParameterError) as exc:
            rows.append(SweepRow(int(l), float(T), float(rb), R, f"infeasible: {exc}".replace(",", ";")))
            continue
        t, f = run_trials(point, botnet, channel, trials, seed, workers)
        try:
            report = estimate_coer(t, f)
            status = "ok"
        except DegenerateSampleError as exc:
            report, status = None, f"degenerate: {exc}"
        rows.append(SweepRow(int(l), float(T), float(rb), R, status, report, t, f))
    return rows


def format_sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    writer.writerows(row.csv_fields() for row in rows)
    return buf.getvalue()


def _separation(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    # closed form of the crossover z for each bootstrap replicate (rows)
    st, sf = t.std(axis=-1, ddof=1), f.std(axis=-1, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (t.mean(axis=-1) - f.mean(axis=-1)) / (st + sf)


@dataclass(frozen=True)
class TrendStep:
    before: SweepRow
    after: SweepRow
    p_value: float
    increased: bool


def coer_trend_test(
    rows: list[SweepRow], alpha: float = 0.05, n_boot: int = 2000, seed: int = 0
) -> list[TrendStep]:
    """One-sided test that the COER does not increase along ``rows``.

    For each adjacent pair of points, trials are resampled jointly (points
    share trial seeds). The p-value is the bootstrap share of replicates in
    which the later point's crossover separation is at least the earlier
    one's; a step counts as an increase when ``p < alpha``.
    """
    if any(r.samples_true is None for r in rows):
        raise ParameterError("every row needs samples; infeasible points cannot be tested")
    n = len(rows[0].samples_true)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_boot, n))
    steps = []
    for a, b in zip(rows, rows[1:]):
        za = _separation(a.samples_true[idx], a.samples_false[idx])
        zb = _separation(b.samples_true[idx], b.samples_false[idx])
        p = float(np.mean(zb >= za))
        steps.append(TrendStep(a, b, p, p < alpha))
    return steps


@dataclass(frozen=True)
class BenchReport:
    flows: int
    l: int
    time_per_flow: float
    time_cv: float
    state_bytes: int
    scratch_bytes: int

    def lines(self) -> list[str]:
        return [
            f"flows={self.flows} l={self.l}",
            f"time_per_flow_us={self.time_per_flow * 1e6:.2f} cv={self.time_cv:.3f}",
            f"state_bytes_per_flow={self.state_bytes}",
            f"peak_scratch_bytes={self.scratch_bytes}",
        ]


def bench_detector(
    flows: int,
    l: int,
    seed: int,
    T: float = 0.5,
    packet_rate: float = 5.0,
    identical: bool = False,
    repeats: int = 1,
) -> BenchReport:
    """Time full detection (including the offset scan) over synthetic flows.

    Flows carry Poisson arrivals at ``packet_rate`` over the watermark span.
    With ``repeats > 1`` each flow's time is the fastest of that many runs,
    which filters out scheduler preemptions on a busy machine.
    ``state_bytes`` is the size of the per-flow interval counters;
    ``scratch_bytes`` is the transient peak allocation of one detection.
    """
    if flows < 1:
        raise ParameterError("flows must be >= 1")
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    key = generate_key(int(rng.integers(2**63)), l, T)
    detector = Detector(key, eta=1)
    horizon = key.span + T

    def make_flow(i):
        n = rng.poisson(packet_rate * horizon)
        return FlowTrace(f"flow-{i}", rng.uniform(0, horizon, n))

    fixed = make_flow(0) if identical else None
    detector.detect(fixed if identical else make_flow(0))  # warm caches

    times = np.empty(flows)
    state = 0
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for i in range(flows):
            trace = fixed if identical else make_flow(i)
            best = math.inf
            for _ in range(repeats):
                start = time.perf_counter()
                result = detector.detect(trace)
                best = min(best, time.perf_counter() - start)
            times[i] = best
            state = max(state, result.state_bytes)
    finally:
        if was_enabled:
            gc.enable()

    probe = fixed if identical else make_flow(flows)
    tracemalloc.start()
    detector.detect(probe)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    mean = float(times.mean())
    cv = float(times.std() / mean) if mean > 0 else 0.0
    return BenchReport(flows, l, mean, cv, state, int(peak))
