"""csac command-line interface.

Exit codes: 0 success, 1 validation error, 2 numeric abort.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .config import load_config, parse_perturb_schedule
from .diffcore import NumericError
from .oracle import FixtureError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def _add_config_args(sub):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, help="override the run seed")
    sub.add_argument("--out", help="override the output directory")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides applied after the file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csac",
                                     description="Conservative soft actor-critic toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    _add_config_args(subs.add_parser("train", help="run one training seed"))

    p_eval = subs.add_parser("eval", help="evaluate a stored checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--env", help="override the environment stored in the checkpoint")
    p_eval.add_argument("--friction", type=float, help="override the stored friction scale")

    p_abl = subs.add_parser("ablate", help="sweep the relative-entropy coefficient")
    _add_config_args(p_abl)
    p_abl.add_argument("--taus", default="0.005,0.05,0.5,5.0,50.0",
                       help="comma-separated tau values")

    p_pert = subs.add_parser("perturb", help="train with a mid-run friction perturbation")
    _add_config_args(p_pert)
    p_pert.add_argument("--schedule", help="e.g. 30000:2.0 (defaults to the config's)")

    p_oracle = subs.add_parser("oracle-check", help="verify the tabular oracle on fixtures")
    p_oracle.add_argument("--fixtures", help="fixture directory (defaults to the bundled set)")

    p_thr = subs.add_parser("steps-to-threshold",
                            help="first evaluation step reaching a return threshold")
    p_thr.add_argument("--metrics", required=True)
    p_thr.add_argument("--threshold", type=float, required=True)
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
    result = harness.train(cfg)
    print(f"metrics: {result.metrics_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final_eval_return: {result.summary['final_eval_return']}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    mean, std = harness.evaluate(args.checkpoint, env_name=args.env,
                                 n_episodes=args.episodes, seed=args.seed,
                                 friction=args.friction)
    print(f"return_mean: {mean}")
    print(f"return_std: {std}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
    taus = [float(v) for v in args.taus.split(",") if v.strip()]
    summary = harness.ablate_tau(cfg, taus)
    print(f"summary: {summary}")
    return EXIT_OK


def _cmd_perturb(args) -> int:
    cfg = load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)
    schedule = parse_perturb_schedule(args.schedule) if args.schedule else None
    reports, path = harness.perturb_run(cfg, schedule=schedule)
    for r in reports:
        print(f"seed {r.seed}: baseline={r.baseline_return} post_min={r.post_min_return} "
              f"recovery_step={r.recovery_step}")
    print(f"report: {path}")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    fixture_dir = args.fixtures if args.fixtures else harness.default_fixture_dir()
    ok, lines = harness.oracle_check(fixture_dir)
    for line in lines:
        print(line)
    print("overall:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VALIDATION


def _cmd_steps_to_threshold(args) -> int:
    step = harness.steps_to_threshold(args.metrics, args.threshold)
    print("never" if step is None else step)
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "perturb": _cmd_perturb,
    "oracle-check": _cmd_oracle_check,
    "steps-to-threshold": _cmd_steps_to_threshold,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for numeric aborts
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FixtureError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
