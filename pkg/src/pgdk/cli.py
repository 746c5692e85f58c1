"""``pgdk`` command line: train, eval, gradcheck, sysid and report.

Exit codes: 0 success, 1 failed check, 2 configuration or input error,
3 numerical divergence.
"""

import argparse
import logging
import os
import sys

from . import __version__, diagnostics, trainer
from ._accel import BACKEND
from .config import format_config, parse_config
from .errors import (BatchTooSmall, ConfigError, DivergedRollout, EnvDiverged, InsufficientHistory,
                     InvalidInput, NumericalDivergence, ParseError)
from .replay import dump_csv, load_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

MANIFEST = "manifest.txt"
TRAIN_LOG = "train_log.csv"
TRANSITIONS = "transitions.csv"


def _print_pairs(pairs, out=None):
    out = sys.stdout if out is None else out
    width = max(len(k) for k, _ in pairs)
    for k, v in pairs:
        out.write(f"{k.ljust(width)}  {v:.6g}\n" if isinstance(v, float) else f"{k.ljust(width)}  {v}\n")
    out.write("\n")
    for k, v in pairs:
        out.write(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n")


def _write_manifest(path, cfg, command):
    with open(path, "w") as fh:
        fh.write(f"# pgdk {__version__} backend={BACKEND}\n")
        fh.write(f"# command: {command}\n")
        fh.write(format_config(cfg))


def cmd_train(args):
    cfg = parse_config(args.config, args.set).resolved()
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(os.path.join(args.out, MANIFEST), cfg, "train")
    result = trainer.train(cfg)
    result.log.write_csv(os.path.join(args.out, TRAIN_LOG))
    trainer.save_agents(args.out, result)
    if args.dump_transitions:
        dump_csv(os.path.join(args.out, TRANSITIONS), list(result.buffer))
    env = cfg.make_env()
    ev = trainer.evaluate(result.actor, env, cfg.eval_episodes, cfg.seed + 1, cfg.gamma, cfg.horizon)
    _print_pairs([("episodes", cfg.episodes), ("updates", result.log.n_updates),
                  ("eval_mean_step_cost", ev.mean_step_cost),
                  ("eval_mean_discounted_cost", ev.mean_discounted_cost)])
    return EXIT_OK


def cmd_eval(args):
    manifest = os.path.join(args.checkpoint_dir, MANIFEST)
    if not os.path.exists(manifest):
        raise ConfigError(f"{manifest} not found; eval needs a directory written by 'pgdk train'")
    cfg = parse_config(manifest, args.set).resolved()
    _, _, actor = trainer.load_agents(args.checkpoint_dir)
    episodes = cfg.eval_episodes if args.episodes is None else args.episodes
    seed = cfg.seed + 1 if args.seed is None else args.seed
    ev = trainer.evaluate(actor, cfg.make_env(), episodes, seed, cfg.gamma, cfg.horizon)
    _print_pairs([("episodes", episodes), ("mean_step_cost", ev.mean_step_cost),
                  ("mean_discounted_cost", ev.mean_discounted_cost)])
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = parse_config(args.config, args.set)
    trials = cfg.gradcheck_trials if args.trials is None else args.trials
    results = diagnostics.gradient_suite(trials, cfg.seed, corrupt=args.corrupt)
    pairs = []
    for r in results:
        pairs += [(f"{r.loss_name}_max_rel_error", r.max_rel_error),
                  (f"{r.loss_name}_worst_coordinate", r.worst_coordinate)]
    ok = all(r.passed for r in results)
    pairs += [("trials", trials), ("tolerance", diagnostics.GRAD_TOL), ("passed", int(ok))]
    _print_pairs(pairs)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_sysid(args):
    cfg = parse_config(args.config, args.set)
    transitions = load_csv(args.data)
    res = trainer.identify(cfg, transitions, args.holdout)
    _print_pairs(res.as_pairs())
    if args.out:
        from . import koopman
        koopman.save_model(args.out, res.model)
    return EXIT_OK


def cmd_report(args):
    tlog = trainer.TrainLog.read_csv(args.log)
    rep = trainer.convergence_report(tlog, args.factor)
    sys.stdout.write(rep.text())
    ok = rep.accounting_ok and rep.envelope_ok_f and rep.envelope_ok_mu
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="pgdk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pgdk {__version__} ({BACKEND})")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (repeatable)")

    sp = sub.add_parser("train", help="run the training loop")
    with_config(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--dump-transitions", action="store_true",
                    help=f"also write the replay buffer to {TRANSITIONS}")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a trained policy without noise")
    sp.add_argument("--checkpoint-dir", required=True)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all analytic gradients")
    with_config(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--corrupt", action="store_true", help="perturb the analytic gradients (negative control)")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("sysid", help="fit the lifted linear model on dumped transitions")
    with_config(sp)
    sp.add_argument("--data", required=True, help="transitions CSV")
    sp.add_argument("--holdout", type=float, default=0.2)
    sp.add_argument("--out", help="directory for the fitted model")
    sp.set_defaults(func=cmd_sysid)

    sp = sub.add_parser("report", help="convergence and sample-count report for a train log")
    sp.add_argument("--log", required=True)
    sp.add_argument("--factor", type=float, default=2.0, help="envelope factor")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, InvalidInput, BatchTooSmall, InsufficientHistory, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalDivergence, EnvDiverged, DivergedRollout) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
