#!/usr/bin/env python3
"""
UWB EM-MAP Channel Estimation - Main Entry Point
Runs Monte Carlo sweeps of the semi-blind wavelet-domain estimators and their
baselines, generates/inspects channel files and runs the oracle self-test.
"""

import sys
import argparse
import json
import logging

import numpy as np
from pydantic import ValidationError

from config.log_setup import setup_logging
from config.schemas import ExperimentConfig
from config.settings import get_settings
from experiments.config_loader import ConfigError, apply_overrides, load_experiment_config
from experiments.runner import run_experiment
from experiments.selftest import run_selftest
from models.em import AllPrunedError
from tools.channels import ChannelFileError, channel_stats, draw_channel, load_cir_file, save_cir_file
from tools.transforms import build_operator

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_SELFTEST = 5
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="UWB EM-MAP channel estimation - Monte Carlo experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Sparse-channel sweep with every estimator
  python main.py run --config configs/sparse_channel.json

  # Quick run with fewer frames on 4 threads
  python main.py run --config configs/sparse_channel.json --frames 20 --workers 4

  # Draw an exponential-PDP channel and save it as a CIR file
  python main.py channels gen --model exponential-pdp --seed 1 --out cir.txt

  # Summarize a CIR file
  python main.py channels inspect cir.txt

  # Oracle self-test
  python main.py selftest
        """
    )
    parser.add_argument(
        "--verbose", "-v",
        action="store_true",
        help="Debug logging (per-iteration EM diagnostics)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run an experiment sweep")
    run.add_argument("--config", "-c", required=True, help="Experiment JSON file")
    run.add_argument("--seed", type=int, help="Override rng_seed")
    run.add_argument("--frames", type=int, help="Override frames_per_point")
    run.add_argument("--out", help="Override output_path")
    run.add_argument("--workers", type=int, help="Frame-level worker threads")

    channels = sub.add_parser("channels", help="Generate or inspect channel files")
    ch_sub = channels.add_subparsers(dest="channels_command", required=True)

    gen = ch_sub.add_parser("gen", help="Draw one channel and write it as a CIR file")
    gen.add_argument("--config", "-c", help="Experiment JSON supplying channel/transform settings")
    gen.add_argument("--model", choices=["sparse-wavelet", "exponential-pdp"], help="Channel model")
    gen.add_argument("--k-nonzero", type=int, help="Nonzero wavelet coefficients (sparse model)")
    gen.add_argument("--decay", type=float, help="Power-delay decay constant in samples")
    gen.add_argument("--los-factor", type=float, help="First-tap amplitude gain")
    gen.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    gen.add_argument("--out", "-o", required=True, help="Output CIR file")

    inspect = ch_sub.add_parser("inspect", help="Print statistics of a CIR file")
    inspect.add_argument("path", help="CIR file")
    inspect.add_argument("--config", "-c", help="Experiment JSON supplying transform settings")

    sub.add_parser("selftest", help="Run the fast oracle checks")
    return parser


def _base_config(path):
    return load_experiment_config(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = apply_overrides(
        load_experiment_config(args.config),
        seed=args.seed,
        frames=args.frames,
        output_path=args.out,
        workers=args.workers,
    )
    print("\n" + "=" * 70)
    print("UWB EM-MAP CHANNEL ESTIMATION")
    print("=" * 70)
    print(f"\n📡 Channel: {cfg.channel_model}   Estimators: {', '.join(cfg.estimators)}")
    print(f"📈 Eb/N0 grid: {cfg.ebn0_grid_db} dB   Frames/point: {cfg.frames_per_point}")
    print("\n" + "-" * 70)

    result = run_experiment(cfg)
    display_metrics(result.metrics)
    print(f"\n💾 Results written to {cfg.output_path}/")
    return 0


def cmd_channels(args) -> int:
    cfg = _base_config(args.config)

    if args.channels_command == "gen":
        overrides = {
            "channel_model": args.model,
            "k_nonzero": args.k_nonzero,
            "decay": args.decay,
            "los_factor": args.los_factor,
        }
        data = cfg.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = ExperimentConfig.model_validate(data)
        if cfg.channel.model == "file":
            raise ConfigError("channels gen draws from a statistical model, not a file")

        op = build_operator(cfg.frame.M, cfg.basis)
        realization = draw_channel(cfg.channel, op, np.random.default_rng(args.seed))
        path = save_cir_file(
            args.out,
            realization.h_time,
            comment=f"{realization.model_tag} seed={args.seed} L={op.n_cols}",
        )
        print(f"✅ Wrote {path}")
    else:
        op = build_operator(cfg.frame.M, cfg.basis)
        realization = load_cir_file(args.path, op)

    print(json.dumps(channel_stats(realization), indent=2))
    return 0


def display_metrics(metrics) -> None:
    """Metrics table in human-readable format."""
    print("\n" + "=" * 70)
    print("📊 RESULTS")
    print("=" * 70)
    print(f"  {'ESTIMATOR':<14}{'Eb/N0':>7}{'MSE':>14}{'BER':>12}{'FRAMES':>8}")
    for row in metrics.itertuples(index=False):
        print(f"  {row.estimator:<14}{row.ebn0_db:>7.1f}{row.mse:>14.4e}{row.ber:>12.3e}{row.frames:>8d}")
    print("=" * 70)


def fail(category: str, message: str, code: int) -> int:
    print(f"error: {category}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    """Main CLI interface."""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging("DEBUG" if args.verbose else settings.log_level)

    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "channels":
            return cmd_channels(args)
        if args.command == "selftest":
            return 0 if run_selftest() else fail("selftest", "one or more checks failed", EXIT_SELFTEST)
    except KeyboardInterrupt:
        print("\n\n⚠️  Run interrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except (ConfigError, ValidationError) as e:
        return fail("config", str(e).splitlines()[0], EXIT_CONFIG)
    except (ChannelFileError, OSError) as e:
        return fail("io", str(e), EXIT_IO)
    except (AllPrunedError, ArithmeticError, np.linalg.LinAlgError, ValueError) as e:
        return fail("numerical", str(e), EXIT_NUMERICAL)
    return 0


if __name__ == "__main__":
    sys.exit(main())
