"""Command-line entry point: ``afdmsim {mse,overhead,xk,validate,run}``."""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError
from .harness import EXPERIMENTS, ExperimentConfig, run_experiment

SUBCOMMANDS = {
    "mse": "mse_vs_snr",
    "overhead": "overhead_vs_pd",
    "xk": "xk_distribution",
    "validate": "model_validation",
}


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trials", type=int, help="channel realizations per sweep point")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--snr-db", type=_floats, help="comma-separated SNR grid in dB")
    p.add_argument("--waveforms", type=_names, help="comma-separated waveform list")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    p.add_argument("--p-d", type=float, dest="p_d", help="delay activation probability")
    p.add_argument("--p-D", type=float, dest="p_D", help="Doppler activation probability")
    p.add_argument("--sparsity", choices=["type1", "type2", "type3"], help="sparsity model type")
    p.add_argument("-P", dest="P", help="chirp slope, integer or 'auto'")
    p.add_argument("-N", dest="N", type=int, help="frame length")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress the summary on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afdmsim", description="AFDM channel estimation and pilot overhead experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, exp in SUBCOMMANDS.items():
        _common(sub.add_parser(name, help=f"run the {exp} experiment"))
    run = sub.add_parser("run", help="run the experiment named by --experiment or the config")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    _common(run)
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.from_json(args.config).to_dict()
    if args.command in SUBCOMMANDS:
        data["experiment"] = SUBCOMMANDS[args.command]
    elif args.experiment:
        data["experiment"] = args.experiment
    if "experiment" in data and args.config is None and args.waveforms is None:
        data.pop("waveforms", None)
    for key in ("seed", "trials", "out", "workers", "waveforms"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.snr_db is not None:
        data["snr_db"] = args.snr_db
    model = dict(data.get("model", {}))
    for key, name in (("p_d", "p_d"), ("p_D", "p_D"), ("sparsity", "kind")):
        if getattr(args, key) is not None:
            model[name] = getattr(args, key)
    if model:
        data["model"] = model
    afdm = dict(data.get("afdm", {}))
    if args.P is not None:
        afdm["P"] = args.P if args.P == "auto" else _int(args.P, "-P")
    if args.N is not None:
        afdm["N"] = args.N
    if afdm:
        data["afdm"] = afdm
    return ExperimentConfig.from_dict(data)


def _int(text: str, flag: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"{flag}: expected an integer or 'auto', got {text!r}") from None


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        result = run_experiment(config)
    except (ConfigurationError, OSError) as exc:
        print(f"afdmsim: error: {exc}", file=sys.stderr)
        return 2
    if not config.out:
        sys.stdout.write(result.csv)
    if not args.quiet:
        print(result.summary, file=sys.stderr)
    if not result.passed:
        print("afdmsim: validation failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
