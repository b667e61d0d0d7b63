"""Command line entry point: train against a served environment."""

from __future__ import annotations

import argparse
import sys

from .trainer import ABLATIONS, Hyperparams, train


def _parse_endpoint(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cuprl", description="constrained policy-gradient training "
                                  "against an edgevr environment service")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run a training job")
    tr.add_argument("--endpoint", type=_parse_endpoint, required=True,
                    help="environment service address, HOST:PORT")
    tr.add_argument("--out", required=True,
                    help="output directory for training.csv and checkpoints")
    tr.add_argument("--iterations", type=int, default=200)
    tr.add_argument("--tracks", type=int, default=8,
                    help="concurrent episodes per iteration")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--ablation", choices=ABLATIONS, default="none")
    tr.add_argument("--convention", choices=("standard", "literal"),
                    default="standard", help="TD residual indexing")
    tr.add_argument("--checkpoint-every", type=int, default=50)
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=_cmd_train)
    return parser


def _cmd_train(args) -> None:
    host, port = args.endpoint
    hp = Hyperparams(iterations=args.iterations, tracks=args.tracks,
                     seed=args.seed, gae_convention=args.convention,
                     checkpoint_every=args.checkpoint_every)
    rows = train(host, port, hp, ablation=args.ablation, out_dir=args.out,
                 progress=not args.quiet)
    final = rows[-1]
    print(f"finished {len(rows)} iterations, final return "
          f"{final['return']:.1f}, cost return {final['cost_return']:.2f}")


def main(argv=None) -> None:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ConnectionError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
