"""Command-line entry points: train, evaluate, decode, gradcheck,
synth-data."""

import argparse
import json
import logging
import sys

from . import training
from .gradchecks import SUITES, run_suites


def _cmd_train(args):
    run_cfg = training.RunConfig.load(args.config)
    _, history = training.train(run_cfg)
    best = history["best_epoch"]
    print(f"finished {history['epochs_run']} epochs; best validation epoch: {best}")
    print(f"checkpoint and history written under {run_cfg.out_dir}")
    return 0


def _cmd_evaluate(args):
    report = training.evaluate(
        args.ckpt, args.data, max_len=args.max_len, embeddings=args.embeddings
    )
    payload = report.to_json()
    if not args.generations:
        payload.pop("generations")
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_decode(args):
    lines = training.decode(
        args.ckpt, args.data, args.out, max_len=args.max_len, embeddings=args.embeddings
    )
    print(f"wrote {len(lines)} generations to {args.out}")
    return 0


def _cmd_gradcheck(args):
    names = [args.module] if args.module else None
    failed = False
    for name, report in run_suites(names).items():
        status = "pass" if report.passed else "FAIL"
        print(f"{name:<10} {status}  max rel err {report.max_rel_err:.3e} (tol {report.tol:.0e})")
        failed = failed or not report.passed
    return 1 if failed else 0


def _cmd_synth_data(args):
    with open(args.spec, encoding="utf-8") as fh:
        spec_obj = json.load(fh)
    paths = training.make_synthetic_files(spec_obj, args.out)
    for role, path in paths.items():
        print(f"{role}: {path}")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    parser = argparse.ArgumentParser(
        prog="sss",
        description="Background-aware response generation at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run configuration")
    p.add_argument("--config", required=True, help="JSON run configuration file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--max-len", type=int, default=40)
    p.add_argument("--generations", action="store_true", help="include generations")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("decode", help="write greedy generations for a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--max-len", type=int, default=40)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", choices=sorted(SUITES), default=None)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth-data", help="generate a synthetic span-copy corpus")
    p.add_argument("--spec", required=True, help="JSON generator settings")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth_data)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
