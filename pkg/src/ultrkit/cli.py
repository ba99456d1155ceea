"""Command-line entry point: run, gradcheck, permcheck, simulate, eval.

Every verb exits 0 on success. On failure a single JSON object is written to
stderr (``{"error": ..., "verb": ..., "message": ...}``, plus ``problems``
for config errors) and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ultrkit import __version__
from ultrkit.letor import ConfigError, LetorParseError

log = logging.getLogger("ultrkit")

EXIT_FAIL = 1  # a check ran and found a problem
EXIT_ERROR = 2  # bad input, config or I/O

INVARIANT_FAMILIES = ("univariate_mlp", "set_attention")


class CheckFailed(Exception):
    pass


def _config(args):
    from ultrkit.config import load_config

    return load_config(args.config, args.set or ())


def cmd_run(args) -> int:
    from ultrkit.experiment import run_experiment

    overrides = list(args.set or ())
    if args.out:
        overrides.append(f"output_dir={args.out}")
    args.set = overrides
    cfg = _config(args)
    if args.print_config:
        sys.stdout.write(cfg.echo())
        return 0
    result = run_experiment(cfg)
    print((result.out_dir / "table.txt").read_text(encoding="utf-8"), end="")
    print(f"bundle written to {result.out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    from ultrkit import gradsuite

    names = tuple(args.only) if args.only else gradsuite.KERNELS + gradsuite.SCORERS
    unknown = [n for n in names if n not in gradsuite.KERNELS + gradsuite.SCORERS]
    if unknown:
        raise ConfigError(f"unknown grad-check case(s): {', '.join(unknown)}")
    results = gradsuite.run_suite(names, range(args.seeds), args.tolerance, log=print)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CheckFailed(f"gradient check failed for {', '.join(failed)}")
    print(f"all {len(results)} cases passed")
    return 0


def cmd_permcheck(args) -> int:
    from ultrkit import permcheck
    from ultrkit.scorers import Arch, ScorerKind, init_scorer, load_scorer

    if args.checkpoint:
        scorers = [load_scorer(args.checkpoint)]
    else:
        arch = Arch(d_model=args.d_model, ffn_width=2 * args.d_model, gru_hidden=args.d_model)
        scorers = [init_scorer(ScorerKind.parse(k), arch, args.feature_dim, args.seed) for k in args.kinds]
    witness_dir = Path(args.witness_dir) if args.witness_dir else None
    broken = []
    for scorer in scorers:
        tag = scorer.kind.tag
        for n in args.lengths:
            v = permcheck.check_invariance(scorer, n, args.inputs, args.perms, args.tolerance, seed=args.seed)
            print(f"{tag:22s} n={n:<3d} {v.report()}")
            if not v.passed:
                if witness_dir is not None:
                    witness_dir.mkdir(parents=True, exist_ok=True)
                    path = witness_dir / f"{tag.replace('(', '-').rstrip(')')}-n{n}.txt"
                    v.witness.dump(path)
                    replay = permcheck.replay_witness(scorer, permcheck.Witness.load(path))
                    print(f"{'':22s} witness {path} replays with violation {replay:.3e}")
                if scorer.kind.family in INVARIANT_FAMILIES:
                    broken.append(f"{tag} n={n}")
            if args.distributional and scorer.kind.order_mode == "rand":
                d = permcheck.check_distributional(scorer, n, seed=args.seed)
                print(f"{tag:22s} n={n:<3d} {d.report()}")
    if broken:
        raise CheckFailed(f"invariance violated by invariant scorer(s): {', '.join(broken)}")
    return 0


def cmd_simulate(args) -> int:
    from ultrkit.clicks import write_click_log, simulate_log
    from ultrkit.experiment import derive_seed, load_dataset, prepare_rep

    cfg = _config(args)
    data = prepare_rep(cfg, args.rep, load_dataset(cfg))
    lists = {"train": data.train, "valid": data.valid, "test": data.test}[args.split]
    if not lists:
        raise ConfigError(f"the {args.split} split is empty")
    seed = derive_seed(cfg["master_seed"], "simulate", args.rep)
    logs = simulate_log(lists, cfg.curve(), cfg.noise, args.impressions, np.random.default_rng(seed))
    if args.out == "-":
        n = write_click_log(logs, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            n = write_click_log(logs, fh)
    print(f"{n} impressions (click stream seed {seed})", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    from ultrkit.dla import evaluate_scorer, pack_lists
    from ultrkit.letor import read_letor
    from ultrkit.metrics import METRIC_COLUMNS, MetricReport
    from ultrkit.prod import LinearRanker, RankedList, rank_dataset
    from ultrkit.scorers import load_scorer

    scorer = load_scorer(args.checkpoint)
    data = read_letor(args.data, max_label=args.max_label)
    if data.feature_dim != scorer.feature_dim:
        raise ConfigError(f"checkpoint expects {scorer.feature_dim} features, data has {data.feature_dim}")
    if args.prod:
        lists = rank_dataset(LinearRanker.load(args.prod), data, args.seed)
    else:
        # file order is taken as the display order
        lists = [RankedList(q.qid, np.arange(len(q)), q.features, q.labels) for q in data]
    packed = pack_lists(lists, args.list_size)
    per_query = evaluate_scorer(scorer, packed, args.max_label, args.seed)
    report = MetricReport(scorer.kind.tag, args.seed, packed.qids, per_query)
    if args.out:
        Path(args.out).write_text(report.per_query_csv(), encoding="utf-8")
    for m in METRIC_COLUMNS:
        print(f"{m:8s} {np.mean(per_query[m]):.4f}")
    print(f"queries  {len(packed)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ultrkit", description="Dual learning unbiased learning-to-rank toolkit")
    p.add_argument("--version", action="version", version=f"ultrkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def config_args(sp):
        sp.add_argument("config", nargs="?", help="key = value config file (all keys optional)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("run", help="full experiment: prod ranker, clicks, training, evaluation")
    config_args(sp)
    sp.add_argument("--out", help="output directory (same as --set output_dir=...)")
    sp.add_argument("--print-config", action="store_true", help="echo the resolved config and exit")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of every layer and scorer")
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--only", nargs="+", metavar="CASE")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("permcheck", help="permutation-invariance checks")
    sp.add_argument("checkpoint", nargs="?", help="scorer checkpoint; default checks fresh scorers")
    sp.add_argument("--kinds", nargs="+", default=["univariate_mlp", "set_attention", "sequence_gru(init)",
                                                   "sequence_gru(rever)", "sequence_gru(rand)"])
    sp.add_argument("--lengths", nargs="+", type=int, default=[5, 10])
    sp.add_argument("--inputs", type=int, default=10)
    sp.add_argument("--perms", type=int, default=100)
    sp.add_argument("--tolerance", type=float, default=1e-9)
    sp.add_argument("--feature-dim", type=int, default=16)
    sp.add_argument("--d-model", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--witness-dir", help="dump violation witnesses here")
    sp.add_argument("--distributional", action="store_true",
                    help="also test random-order scorers in distribution over order seeds")
    sp.set_defaults(func=cmd_permcheck)

    sp = sub.add_parser("simulate", help="dump a simulated click log")
    config_args(sp)
    sp.add_argument("--rep", type=int, default=0)
    sp.add_argument("--split", choices=("train", "valid", "test"), default="train")
    sp.add_argument("--impressions", type=int, default=1000)
    sp.add_argument("--out", default="-", help="output file, - for stdout")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("eval", help="ranking metrics of a scorer checkpoint on a LETOR file")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--prod", help="production ranker file; lists are displayed in its order")
    sp.add_argument("--list-size", type=int, default=10)
    sp.add_argument("--max-label", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0, help="tie-break and order seed")
    sp.add_argument("--out", help="write per-query metrics CSV here")
    sp.set_defaults(func=cmd_eval)
    return p


def _fail(verb, kind, message, code, problems=None) -> int:
    payload = {"error": kind, "verb": verb, "message": message}
    if problems:
        payload["problems"] = problems
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CheckFailed as exc:
        return _fail(args.verb, "check_failed", str(exc), EXIT_FAIL)
    except ConfigError as exc:
        return _fail(args.verb, "config", str(exc), EXIT_ERROR, getattr(exc, "problems", None))
    except LetorParseError as exc:
        return _fail(args.verb, "data", str(exc), EXIT_ERROR)
    except OSError as exc:
        return _fail(args.verb, "io", str(exc), EXIT_ERROR)
    except (ValueError, KeyError) as exc:
        return _fail(args.verb, "invalid", str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
