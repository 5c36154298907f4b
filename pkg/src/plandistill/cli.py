"""Command-line harness: verify / train / report.

Exit codes follow the usual contract: 0 on success, 1 on runtime or suite
failure, 2 on usage errors (argparse's own convention). Every
hyperparameter is addressable as a flag; flags beat the config file, which
beats the per-environment defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .analysis import build_report
from .artifact import ArtifactError, load_artifact
from .config import ENV_CHOICES, FIELD_NAMES, RunConfig, resolve_config

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_MANUAL_FLAGS = {"seed", "out_dir", "quiet", "env", "steps"}


def _flag_name(field: str) -> str:
    return "--" + field.replace("_", "-")


def _add_hyperparam_flags(parser: argparse.ArgumentParser) -> None:
    field_types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    for name in FIELD_NAMES:
        if name in _MANUAL_FLAGS:
            continue
        target = field_types[name]
        if target in ("bool", bool):
            parser.add_argument(_flag_name(name), dest=name, default=None,
                                choices=("true", "false"),
                                help=f"override {name} (default: profile)")
        elif target in ("int", int):
            parser.add_argument(_flag_name(name), dest=name, type=int, default=None,
                                help=f"override {name} (default: profile)")
        else:
            parser.add_argument(_flag_name(name), dest=name, type=float, default=None,
                                help=f"override {name} (default: profile)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plandistill",
        description="Planning-distilled maximum-entropy RL: theory suites, "
                    "training runs, and run reports.")
    parser.add_argument("--seed", type=int, default=None, help="root 64-bit seed")
    parser.add_argument("--out", dest="out_dir", default=None, help="output directory")
    parser.add_argument("--config", dest="config_path", default=None,
                        help="JSON config file (hyperparameter field names)")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    commands = parser.add_subparsers(dest="command", required=True)

    p_verify = commands.add_parser("verify", help="run a theory/property suite")
    p_verify.add_argument("--suite", required=True,
                          choices=("lemma1", "thm1", "lemma2", "thm2",
                                   "gradcheck", "ovr", "all"))
    p_verify.add_argument("--cases", type=int, default=None,
                          help="case count override (default: suite standard)")

    p_train = commands.add_parser("train", help="run the training loop")
    p_train.add_argument("--env", choices=ENV_CHOICES, default=None)
    p_train.add_argument("--steps", type=int, default=None)
    p_train.add_argument("--init-from", dest="init_from", default=None,
                         help="snapshot.json to initialize parameters from")
    _add_hyperparam_flags(p_train)

    p_report = commands.add_parser("report", help="summarize a run artifact")
    p_report.add_argument("artifact", help="run artifact directory")
    return parser


def _collect_overrides(args: argparse.Namespace) -> dict:
    overrides = {}
    for name in FIELD_NAMES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if args.quiet:
        overrides["quiet"] = True
    return overrides


def cmd_verify(args: argparse.Namespace) -> int:
    from .verify import run_suite

    seed = args.seed if args.seed is not None else 0
    reports = run_suite(args.suite, seed=seed, cases=args.cases)
    payload = {"reports": [r.to_json() for r in reports],
               "passed": all(r.passed for r in reports)}
    for report in reports:
        if not args.quiet:
            print(report.summary())
    out_dir = Path(args.out_dir) if args.out_dir else Path("runs") / "verify"
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"verify_{args.suite}.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        print(f"wrote {out_path}")
    return EXIT_OK if payload["passed"] else EXIT_FAILURE


def cmd_train(args: argparse.Namespace) -> int:
    from .training import train

    overrides = _collect_overrides(args)
    try:
        config = resolve_config(overrides, config_path=args.config_path)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as err:
        print(f"error: output directory not writable: {err}", file=sys.stderr)
        return EXIT_FAILURE
    progress = None if config.quiet else print
    result = train(config, out_dir=str(out_dir), progress=progress,
                   init_from=args.init_from)
    if not config.quiet:
        print(f"run artifact: {out_dir}")
        print(f"final return (stochastic policy): {result.final_return_stochastic:.3f}")
        print(f"final return (mean action):       {result.final_return_mean_action:.3f}")
    else:
        print(str(out_dir))
    return EXIT_OK


def _oracle_for(config_json: dict):
    """Exact soft-optimal value at the start state for tabular runs."""
    env_name = config_json.get("env")
    if env_name not in ("chain", "gridworld"):
        return None, None
    from .mdp import make_chain, make_gridworld
    from .tabular import soft_value_iteration

    gamma = float(config_json.get("gamma", 0.95))
    mdp = make_chain(gamma=gamma) if env_name == "chain" else make_gridworld(gamma=gamma)
    v_star, _, _ = soft_value_iteration(mdp, alpha=float(config_json.get("alpha", 0.2)))
    return mdp, float(v_star[0])


def cmd_report(args: argparse.Namespace) -> int:
    try:
        config_json, rows, snapshot = load_artifact(args.artifact)
    except ArtifactError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    mdp, oracle_value = _oracle_for(config_json)
    final_return = None
    if mdp is not None and snapshot.get("kind") == "discrete" and snapshot.get("logits"):
        import numpy as np

        from .mdp import exact_policy_return

        logits = np.asarray(snapshot["logits"][0], dtype=np.float64)
        greedy = np.zeros_like(logits)
        greedy[np.arange(logits.shape[0]), logits.argmax(axis=1)] = 1.0
        final_return = float(exact_policy_return(mdp, greedy)[0])
    report = build_report(config_json, rows, oracle_value=oracle_value,
                          final_return=final_return)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args)
    if args.command == "train":
        return cmd_train(args)
    if args.command == "report":
        return cmd_report(args)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
