import argparse
import sys
from typing import List, Optional

from app import commands
from core.errors import ConfigError, GlottkitError
from utils.config import load_config
from utils.run_log import log_message, set_quiet


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file of flat dotted config keys")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key (repeatable)")
    parser.add_argument("--jobs", type=int, help="Files processed concurrently (run.jobs)")
    parser.add_argument("--format", choices=["csv", "json"], help="Table output format (run.format)")
    parser.add_argument("--quiet", action="store_true", help="Only keep progress lines in memory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glottkit", description="Voice biomarkers from glottal flow and fold models")
    parser.add_argument("--version", action="version", version=f"glottkit {commands.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="Feature table for a batch of recordings")
    p.add_argument("inputs", nargs="+", help="WAV files")
    p.add_argument("--out", required=True, help="Feature table path")
    _common(p)

    p = sub.add_parser("estimate", help="Fit the 1-mass model to one recording")
    p.add_argument("input", help="WAV file of a sustained vowel")
    p.add_argument("--out-dir", required=True, help="Directory for params.json and portrait.svg")
    _common(p)

    p = sub.add_parser("synth", help="Synthesize a sustained vowel from the 1-mass model")
    p.add_argument("--out", required=True, help="WAV path")
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--beta", type=float, default=0.32)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--f0", type=float, default=120.0, help="Fundamental frequency (Hz)")
    p.add_argument("--dur", type=float, default=1.0, help="Duration (s)")
    p.add_argument("--snr", type=float, help="Additive white noise at this SNR (dB)")
    p.add_argument("--tremor-rate", type=float, help="Sinusoidal f0 modulation rate (Hz)")
    p.add_argument("--tremor-depth", type=float, default=0.0, help="Modulation depth (Hz)")
    p.add_argument("--encoding", choices=["pcm16", "float32"], default="pcm16")
    _common(p)

    p = sub.add_parser("proxy-train", help="Train the frame-level proxy classifier")
    p.add_argument("inputs", nargs="*", help="WAV files, each with a 'start end label' sidecar")
    p.add_argument("--labels", nargs="+", help="Sidecar files in input order (default: <wav>.lab)")
    p.add_argument("--table", help="Train from a frame table CSV instead of recordings")
    p.add_argument("--table-out", help="Also write the labeled frame table")
    p.add_argument("--out", required=True, help="Classifier JSON path")
    _common(p)

    p = sub.add_parser("proxy-score", help="Score recordings with a trained proxy classifier")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model", help="Classifier JSON (default: proxy.model_path)")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("abcde-train", help="Train the encoder / decoder / discriminator model")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--labels", nargs="+", type=int, required=True, help="0/1 label per recording")
    p.add_argument("--out", required=True, help="Model JSON path")
    _common(p)

    p = sub.add_parser("abcde-encode", help="Mean latent code per recording")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model", help="Model JSON (default: abcde.model_path)")
    p.add_argument("--out", required=True)
    _common(p)

    p = sub.add_parser("eval", help="Cross-validated logistic regression on a feature table")
    p.add_argument("table", help="Feature CSV with a binary label column")
    p.add_argument("--label", default="label", help="Label column name")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--permute", action="store_true", help="Shuffle labels (seeded) as a chance control")
    p.add_argument("--out", required=True, help="Report JSON path")
    _common(p)

    return parser


def _dispatch(args, cfg) -> int:
    if args.command == "extract":
        return commands.cmd_extract(args.inputs, cfg, args.out)
    if args.command == "estimate":
        return commands.cmd_estimate(args.input, cfg, args.out_dir)
    if args.command == "synth":
        return commands.cmd_synth(args.out, cfg, args.alpha, args.beta, args.delta, f0=args.f0, dur=args.dur,
                                  snr_db=args.snr, tremor_rate=args.tremor_rate, tremor_depth=args.tremor_depth,
                                  encoding=args.encoding)
    if args.command == "proxy-train":
        if not args.inputs and not args.table:
            raise ConfigError("proxy-train needs recordings or --table")
        return commands.cmd_proxy_train(args.inputs, cfg, args.out, label_files=args.labels,
                                        table_path=args.table, table_out=args.table_out)
    if args.command == "proxy-score":
        return commands.cmd_proxy_score(args.inputs, cfg, args.out, model_path=args.model)
    if args.command == "abcde-train":
        return commands.cmd_abcde_train(args.inputs, args.labels, cfg, args.out)
    if args.command == "abcde-encode":
        return commands.cmd_abcde_encode(args.inputs, cfg, args.out, model_path=args.model)
    if args.command == "eval":
        return commands.cmd_eval(args.table, args.label, args.folds, cfg, args.out, permute=args.permute)
    raise ConfigError(f"Unknown command {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"run.jobs={args.jobs}")
    if args.format is not None:
        overrides.append(f'run.format="{args.format}"')
    if args.quiet:
        overrides.append("run.quiet=true")

    try:
        cfg = load_config(args.config, overrides)
        set_quiet(cfg.run.quiet)
        return _dispatch(args, cfg)
    except ConfigError as e:
        log_message(f"❌ Configuration error: {e}", "error")
        return commands.EXIT_CONFIG
    except GlottkitError as e:
        log_message(f"❌ {type(e).__name__}: {e}", "error")
        return commands.EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
