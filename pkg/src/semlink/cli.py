"""Command-line front end.

Exit codes: 0 success, 1 usage (bad flags, malformed config), 2 broken
invariant (selftest failure or a contract violation), 3 I/O (missing or
unwritable paths, corrupt checkpoints). CSV is the output contract: comma
separated, header row, LF line endings, '.' decimal point. Figures are
rendered next to the CSVs as a convenience and carry no guarantees.
"""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from . import report
from .checks import run_all
from .config import ExperimentConfig, default_config, load_config, render_config
from .data import build_tasks
from .errors import (CheckpointError, ConfigError, ContractError,
                     DimensionError, InputError, ProtocolError)
from .training import (allocation_profile, evaluate_sweep,
                       models_from_checkpoint, run_training)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # tokens like "-5,0,5,10" must parse as values of --snrs, not as
        # flags; no flag here starts with a digit, so -<digit> is a value
        self._negative_number_matcher = re.compile(r"^-\d")

    # argparse exits with status 2 on bad flags; the contract reserves 2 for
    # invariant failures, so usage problems are rethrown and mapped to 1
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    shared = _Parser(add_help=False)
    # the same flags are accepted before and after the subcommand; the
    # top-level copies carry the real defaults, these must stay silent
    shared.add_argument("--config", default=argparse.SUPPRESS)
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    shared.add_argument("--out", default=argparse.SUPPRESS)
    shared.add_argument("--force", action="store_true",
                        default=argparse.SUPPRESS)

    p = _Parser(prog="semlink",
                description="task-oriented video transmission testbed")
    p.add_argument("--config", default=None, help="experiment config file")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed, overrides the config")
    p.add_argument("--out", default=None,
                   help="output directory, overrides the config")
    p.add_argument("--force", action="store_true",
                   help="allow writing into a non-empty output directory")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    sub.add_parser("gen-data", parents=[shared],
                   help="write the synthetic dataset manifest")
    sub.add_parser("train", parents=[shared],
                   help="run the staged curriculum from a config")

    pe = sub.add_parser("eval", parents=[shared],
                        help="accuracy/bandwidth sweep over an SNR grid")
    pe.add_argument("checkpoint")
    pe.add_argument("--snrs", default="-5,0,5,10",
                    help="comma-separated SNR grid in dB")
    pe.add_argument("--channel", default="awgn",
                    help="channel kind, or a comma-separated list")
    pe.add_argument("--sigma-h", type=float, default=1.0)
    pe.add_argument("--n-tasks", type=int, default=500)
    pe.add_argument("--draws", type=int, default=5,
                    help="noise draws per task per SNR")

    pa = sub.add_parser("report-alloc", parents=[shared],
                        help="per-token rate allocation tables per SNR")
    pa.add_argument("checkpoint")
    pa.add_argument("--snrs", default="-5,0,5,10")
    pa.add_argument("--n-tasks", type=int, default=500)

    sub.add_parser("selftest", parents=[shared],
                   help="run the invariant battery")
    return p


def _parse_snrs(raw: str) -> list[float]:
    try:
        vals = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"--snrs: {e}") from None
    if not vals:
        raise UsageError("--snrs: empty grid")
    return vals


def _resolve(args) -> ExperimentConfig:
    if args.config is None:
        return default_config(seed=args.seed, out_dir=args.out)
    return load_config(args.config, seed=args.seed, out_dir=args.out)


def _prepare_out(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise OSError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise OSError(f"{out} is not empty; pass --force to write anyway")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    ec = _resolve(args)
    out = _prepare_out(ec.train.out_dir, args.force)
    (out / "config.ini").write_text(render_config(ec))
    rows = []
    for split, count in (("train", ec.train.n_train), ("test", ec.train.n_test)):
        rows += report.manifest_rows(split, build_tasks(ec.train.seed, count, split))
    report.write_csv(out / "manifest.csv", report.MANIFEST_COLUMNS, rows)
    print(f"wrote {len(rows)} tasks to {out / 'manifest.csv'}")
    return 0


def cmd_train(args) -> int:
    ec = _resolve(args)
    out = Path(ec.train.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # echoed before training so an interrupted run still documents itself;
    # rerunning from the echo resumes (or reproduces) the same run
    (out / "config.ini").write_text(render_config(ec))
    _, rows = run_training(ec.plan, ec.train, preload=ec.preload,
                           on_epoch=lambda r: print(
                               f"{r['stage']} epoch {r['epoch']}: "
                               f"loss {r['loss_total']:.4f} "
                               f"accuracy {r['accuracy']:.3f}", flush=True))
    report.save_training_figure(out / "training_curves.png", rows)
    print(f"final checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    snrs = _parse_snrs(args.snrs)
    kinds = [c.strip() for c in args.channel.split(",") if c.strip()]
    if not kinds:
        raise UsageError("--channel: empty list")
    bundle, _ = models_from_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    results = []
    for kind in kinds:
        results += evaluate_sweep(bundle, snrs, kind, args.n_tasks, seed,
                                  noise_draws=args.draws, sigma_h=args.sigma_h)
    rows = report.eval_rows(results)
    if args.out is None:
        sys.stdout.write(report.render_csv(report.EVAL_COLUMNS, rows))
        return 0
    out = _prepare_out(args.out, args.force)
    report.write_csv(out / "results.csv", report.EVAL_COLUMNS, rows)
    report.save_eval_figure(out / "eval_accuracy.png", results, chance=0.2)
    print(f"wrote {out / 'results.csv'}")
    return 0


def cmd_report_alloc(args) -> int:
    snrs = _parse_snrs(args.snrs)
    bundle, _ = models_from_checkpoint(args.checkpoint)
    profile = allocation_profile(bundle, snrs, args.n_tasks)
    tokens = report.alloc_token_rows(profile)
    hist = report.alloc_hist_rows(profile)
    if args.out is None:
        sys.stdout.write(report.render_csv(report.ALLOC_TOKEN_COLUMNS, tokens))
        sys.stdout.write("\n")
        sys.stdout.write(report.render_csv(report.ALLOC_HIST_COLUMNS, hist))
        return 0
    out = _prepare_out(args.out, args.force)
    report.write_csv(out / "alloc_tokens.csv", report.ALLOC_TOKEN_COLUMNS, tokens)
    report.write_csv(out / "alloc_hist.csv", report.ALLOC_HIST_COLUMNS, hist)
    report.save_alloc_figure(out / "allocation.png", profile)
    print(f"wrote {out / 'alloc_tokens.csv'} and {out / 'alloc_hist.csv'}")
    return 0


def cmd_selftest(args) -> int:
    seed = args.seed if args.seed is not None else 0
    outcomes = run_all(seed)
    failed = 0
    for name, ok, detail in outcomes:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(outcomes)} checks failed")
        return 2
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "report-alloc": cmd_report_alloc,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ContractError, DimensionError) as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 2
    except (ProtocolError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
