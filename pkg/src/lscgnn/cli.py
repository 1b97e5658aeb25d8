"""Command-line interface.

Exit codes: 0 success, 1 at least one failed run cell, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .bundles import BundleError, convert_planetoid, write_bundle
from .harness import (ConfigError, HETERO_DEFAULTS, hetero_run, make_table,
                      parse_config, read_jsonl, run, sweep)
from .synthdata import synth_citation_preset


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip() != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lscgnn",
        description="Train and benchmark latent-space constrained graph encoders.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one (ratio, rate) run over seeds and lambdas")
    p_run.add_argument("--config", required=True)

    p_sweep = sub.add_parser("sweep", help="cross product of ratios and rates; resumable")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--rates", type=_float_list, required=True,
                         help="comma-separated perturbation rates, e.g. 0,0.05,0.1")
    p_sweep.add_argument("--ratios", type=_float_list, required=True,
                         help="comma-separated target ratios, e.g. 0.5,0.7,0.9")

    p_table = sub.add_parser("table", help="aggregate a results file into mean±std cells")
    p_table.add_argument("--in", dest="input", required=True)
    p_table.add_argument("--out", dest="output", help="also write CSV here")

    p_het = sub.add_parser("hetero", help="typed-graph case study (three configurations)")
    p_het.add_argument("--config", required=True)
    p_het.add_argument("--synthetic", type=_float_list,
                       help="nA,nB,noise_rate for the planted-cluster generator")

    p_conv = sub.add_parser("convert-planetoid",
                            help="convert raw ind.<name>.* files to a bundle")
    p_conv.add_argument("--in", dest="input", required=True)
    p_conv.add_argument("--name", required=True)
    p_conv.add_argument("--out", dest="output", required=True)

    p_synth = sub.add_parser("synth-citation",
                             help="write a synthetic citation-style benchmark bundle")
    p_synth.add_argument("--preset", required=True, choices=("cora", "citeseer"))
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--out", dest="output", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = parse_config(args.config)
            return 0 if run(config) else 1
        if args.command == "sweep":
            config = parse_config(args.config)
            return 0 if sweep(config, args.rates, args.ratios) else 1
        if args.command == "table":
            text, csv_text = make_table(read_jsonl(args.input))
            sys.stdout.write(text)
            if args.output:
                with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(csv_text)
            return 0
        if args.command == "hetero":
            config = parse_config(args.config, defaults=dict(HETERO_DEFAULTS))
            synthetic = tuple(args.synthetic) if args.synthetic else None
            if synthetic is not None and len(synthetic) != 3:
                raise ConfigError("--synthetic needs exactly nA,nB,noise_rate")
            return 0 if hetero_run(config, synthetic=synthetic) else 1
        if args.command == "convert-planetoid":
            convert_planetoid(args.input, args.name, args.output)
            print(f"wrote bundle to {args.output}")
            return 0
        if args.command == "synth-citation":
            g = synth_citation_preset(args.preset, seed=args.seed)
            write_bundle(g, args.output)
            print(f"wrote {g!r} to {args.output}")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BundleError as exc:
        print(f"bundle error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
