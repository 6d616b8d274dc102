"""Command line interface.

Every subcommand reads key/trace/config files and writes files or stdout.
Exit status: 0 on success, 1 on bad input or runtime failure, 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .botnet import BotnetConfig, simulate_background, simulate_bot_flows
from .channel import ChannelModel, apply_channel, mix
from .config import ExperimentConfig, parse_config
from .detector import Detector
from .errors import BotMosaicError
from .evaluation import (
    bench_detector,
    estimate_coer,
    format_sweep_csv,
    run_trials,
    sweep,
)
from .trace import format_traces, load_traces, save_traces
from .watermark import WatermarkKey, WatermarkParams, generate_key, insert_watermark


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _write(text: str, out) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _flow_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def cmd_keygen(args):
    key = generate_key(args.seed, args.l, args.T, args.epoch)
    _write(key.to_text(), args.out)


def cmd_inject(args):
    key = WatermarkKey.load(args.key)
    params = WatermarkParams(T=key.T, l=key.l, eta=args.eta, psi=args.psi, R=args.R, rate_cap=args.rate_cap)
    flows = insert_watermark(key, params, args.seed)
    _write_traces(flows, args.out)


def _write_traces(flows, out):
    if out:
        save_traces(flows, out)
    else:
        sys.stdout.write(format_traces(flows))


def cmd_simulate(args):
    base = parse_config(args.config).botnet if args.config else BotnetConfig()
    overrides = {
        name: getattr(args, name)
        for name in (
            "bots", "duration", "command_rate", "response_delay_lo", "response_delay_hi",
            "response_prob", "per_bot_rate_cap", "interval", "start",
        )
        if getattr(args, name) is not None
    }
    config = replace(base, **overrides)
    if args.per_bot:
        flows = simulate_bot_flows(config, args.seed)
    else:
        flows = [simulate_background(config, args.seed, args.id)]
    _write_traces(flows, args.out)


def cmd_mix(args):
    flows = [f for path in args.trace for f in load_traces(path)]
    _write_traces([mix(flows, args.id)], args.out)


def cmd_channel(args):
    model = ChannelModel(args.base_delay, args.jitter_sigma, args.drop_prob, args.stages)
    flows = load_traces(args.trace)
    out = [apply_channel(f, model, _flow_seed(args.seed, i)) for i, f in enumerate(flows)]
    _write_traces(out, args.out)


def cmd_detect(args):
    key = WatermarkKey.load(args.key)
    detector = Detector(key, args.eta, args.theta)
    lines = []
    for flow in load_traces(args.trace):
        r = detector.detect(flow)
        verdict = "WATERMARKED" if r.watermarked else "CLEAN"
        lines.append(f"{flow.flow_id} {r.n_c} {r.offset:.6f} {verdict}\n")
    _write("".join(lines), args.out)


def _experiment(args) -> ExperimentConfig:
    config = parse_config(args.config) if args.config else ExperimentConfig()
    if args.trials is not None:
        config = replace(config, trials=args.trials)
    return replace(config, master_seed=args.seed)


def cmd_eval(args):
    config = _experiment(args)
    t, f = run_trials(config.params, config.botnet, config.channel, config.trials, config.master_seed, args.workers)
    report = estimate_coer(t, f)
    fn = float(np.mean(t < config.theta))
    fp = float(np.mean(f >= config.theta))
    lines = report.lines() + [f"theta={config.theta} empirical_fn={fn:.4f} empirical_fp={fp:.4f}"]
    _write("\n".join(lines) + "\n", args.out)


def cmd_sweep(args):
    config = _experiment(args)
    grid = {
        "l": _ints(args.l) if args.l else None,
        "T": _floats(args.T) if args.T else None,
        "R_over_B": _floats(args.r_over_b) if args.r_over_b else None,
    }
    rows = sweep(grid, config.trials, config.master_seed, config.params, config.botnet, config.channel, args.workers)
    _write(format_sweep_csv(rows), args.out)


def cmd_bench(args):
    report = bench_detector(args.flows, args.l, args.seed, T=args.T, repeats=args.repeats)
    _write("\n".join(report.lines()) + "\n", args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="botmosaic", description="Collaborative flow watermark toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("keygen", cmd_keygen, "generate a random watermark key")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--l", type=int, default=64, help="number of HI/LO pairs")
    p.add_argument("--T", type=float, default=0.5, help="interval length in seconds")
    p.add_argument("--epoch", type=float, default=0.0, help="watermark start time")
    p.add_argument("--out")

    p = add("inject", cmd_inject, "emit watermarked captured-bot flows for a key")
    p.add_argument("--key", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--R", type=int, default=10, help="number of captured flows")
    p.add_argument("--eta", type=int, default=1)
    p.add_argument("--psi", type=int, default=1)
    p.add_argument("--rate-cap", type=float, default=0.5)
    p.add_argument("--out")

    p = add("simulate", cmd_simulate, "simulate background botnet traffic")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="take botnet settings from an experiment config")
    p.add_argument("--bots", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--command-rate", type=float)
    p.add_argument("--response-delay-lo", type=float)
    p.add_argument("--response-delay-hi", type=float)
    p.add_argument("--response-prob", type=float)
    p.add_argument("--per-bot-rate-cap", type=float)
    p.add_argument("--interval", type=float, help="grid for the per-bot rate cap")
    p.add_argument("--start", type=float)
    p.add_argument("--per-bot", action="store_true", help="write one flow per bot")
    p.add_argument("--id", default="background")
    p.add_argument("--out")

    p = add("mix", cmd_mix, "merge all flows of the given trace files into one")
    p.add_argument("--trace", action="append", required=True)
    p.add_argument("--id", default="mixed")
    p.add_argument("--out")

    p = add("channel", cmd_channel, "apply delay, jitter and loss to every flow")
    p.add_argument("--trace", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--base-delay", type=float, default=0.05)
    p.add_argument("--jitter-sigma", type=float, default=0.01)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--stages", type=int, default=1)
    p.add_argument("--out")

    p = add("detect", cmd_detect, "detect the watermark in every flow of a trace")
    p.add_argument("--key", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--eta", type=int, default=1)
    p.add_argument("--theta", type=int, help="hamming threshold (default l/2)")
    p.add_argument("--out")

    for name, func, text in (
        ("eval", cmd_eval, "Monte-Carlo COER estimate for one configuration"),
        ("sweep", cmd_sweep, "COER over a grid of l, T and R/B"),
    ):
        p = add(name, func, text)
        p.add_argument("--config")
        p.add_argument("--seed", type=int, required=True, help="master seed")
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out")
        if name == "sweep":
            p.add_argument("--l", help="comma-separated pair counts")
            p.add_argument("--T", help="comma-separated interval lengths")
            p.add_argument("--r-over-b", help="comma-separated R/B ratios")

    p = add("bench", cmd_bench, "time detection over synthetic flows")
    p.add_argument("--flows", type=int, default=20000)
    p.add_argument("--l", type=int, default=128)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1, help="time each flow as the best of this many runs")
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (BotMosaicError, OSError, ValueError) as exc:
        print(f"botmosaic {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
