"""Collaborative interval-based flow watermarking for botnet C&C channels.

Captured bots each emit a share of a keyed HI/LO interval pattern. The shares
only add up to a detectable watermark once the flows are mixed in the C&C
channel.
"""

from .botnet import BotnetConfig, simulate_background, simulate_bot_flows
from .channel import ChannelModel, apply_channel, mix
from .config import ExperimentConfig, parse_config
from .detector import DetectionResult, Detector, count_intervals, detect, score, synchronize
from .errors import (
    AllocationError,
    BotMosaicError,
    DegenerateSampleError,
    FeasibilityError,
    FormatError,
    ParameterError,
)
from .evaluation import (
    CoerReport,
    bench_detector,
    coer_trend_test,
    estimate_coer,
    ks_distance,
    run_trial,
    run_trials,
    sweep,
)
from .trace import FlowTrace, load_trace, load_traces, save_trace, save_traces
from .watermark import (
    InsertionPlan,
    WatermarkKey,
    WatermarkParams,
    allocate_shares,
    emit_watermarked_flows,
    generate_key,
    insert_watermark,
    plan_counts,
    verify_plan,
)

__version__ = "0.1.0"
