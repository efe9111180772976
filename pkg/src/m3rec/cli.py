"""Command line: gen, train, eval, recommend, group, check.

Exit codes: 0 success, 1 internal error, 2 configuration/input error,
3 data lookup error.  ``M3REC_LOG`` sets log verbosity (e.g. ``INFO``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import datagen
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import MetricReport
from .grouping import group_recommend, groups_by_id, load_groups, save_groups
from .multitask import VocabularyError, recommend
from .train import build_groups, build_model, evaluate, group_test_cases, history_tsv, sequence_examples, train

log = logging.getLogger("m3rec")


class InputError(Exception):
    pass


def _config(args) -> config_mod.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return config_mod.load(args.config, overrides)


def _dataset(path) -> datagen.Dataset:
    if path is None or not Path(path).is_dir():
        raise InputError(f"dataset directory {path} not found")
    return datagen.load(path)


def cmd_gen(args) -> int:
    cfg = _config(args)
    ds = datagen.generate(cfg.world())
    datagen.save(ds, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = _dataset(args.data)
    train_ds, _ = datagen.split(ds)
    model = build_model(
        train_ds, d=cfg.dim, n_layers=cfg.layers, seed=cfg.seed, max_len=cfg.max_len,
        weights=cfg.weights, group_task=cfg.group_task,
    )
    tc = cfg.train_config()
    groups = None
    if cfg.group_task:
        groups = build_groups(model, train_ds, tc.n_groups, tc.seed, tc.kmeans_iter)
    model, history = train(model, train_ds, tc, groups=groups)
    out = Path(args.out)
    save_checkpoint(model, out)
    Path(args.history or f"{out}.history.tsv").write_text(history_tsv(history))
    if groups is not None:
        save_groups(groups, args.groups or f"{out}.groups.tsv")
    print(f"wrote {out}")
    return 0


def _parse_ns(text: str) -> list[int]:
    try:
        ns = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad n list {text!r}") from None
    if not ns or min(ns) < 1:
        raise InputError("n values must be positive integers")
    return ns


def _model(path):
    if not Path(path).is_file():
        raise InputError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def cmd_eval(args) -> int:
    model = _model(args.checkpoint)
    ds = _dataset(args.data)
    ns = _parse_ns(args.n)
    train_ds, test = datagen.split(ds)
    groups = load_groups(args.groups) if args.groups else None
    source = train_ds if args.split == "train" else ds
    cases = {}
    for t in model.tasks:
        if t.level == "group":
            if groups is not None:
                cases[t.task_id] = group_test_cases(source, groups, model.max_len)
        elif args.split == "train":
            cases[t.task_id] = sequence_examples(train_ds.sequences.get(t.task_id, {}), max_len=model.max_len)
        else:
            cases[t.task_id] = test.get(t.task_id, [])
    report: MetricReport = evaluate(model, cases, ns, setting=args.setting)
    sys.stdout.write(report.to_tsv())
    return 0


def _user_sequence(ds, task_id, user):
    if task_id not in ds.sequences:
        raise VocabularyError(f"dataset has no task {task_id!r}")
    seq = ds.sequences[task_id].get(user)
    if seq is None or not len(seq):
        raise VocabularyError(f"user {user} has no {task_id} sequence")
    return seq


def _print_ranking(ranking) -> None:
    for r, (i, s) in enumerate(ranking, 1):
        print(f"{r}\t{i}\t{s:.6f}")


def cmd_recommend(args) -> int:
    if args.n < 1:
        raise InputError("n must be >= 1")
    model = _model(args.checkpoint)
    ds = _dataset(args.data)
    task = args.task or model.main_task.task_id
    _print_ranking(recommend(model, task, _user_sequence(ds, task, args.user), args.n))
    return 0


def cmd_group(args) -> int:
    if args.n < 1:
        raise InputError("n must be >= 1")
    model = _model(args.checkpoint)
    ds = _dataset(args.data)
    if not Path(args.groups).is_file():
        raise InputError(f"groups file {args.groups} not found")
    groups = groups_by_id(load_groups(args.groups))
    if args.group not in groups:
        raise VocabularyError(f"unknown group {args.group}")
    main = ds.sequences[model.main_task.task_id]
    _print_ranking(group_recommend(model, groups[args.group], main, args.n))
    return 0


def cmd_check(args) -> int:
    from .selfcheck import run_all

    return 0 if run_all() else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="m3rec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("gen", help="generate a synthetic dataset")
    with_config(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="train a model on a dataset")
    with_config(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--history")
    sp.add_argument("--groups", help="where to write group assignments")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="print a metric table (TSV)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--n", default="1,2,5,10")
    sp.add_argument("--split", choices=("test", "train"), default="test")
    sp.add_argument("--groups")
    sp.add_argument("--setting", default="default")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("recommend", help="top-n for one user")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--user", type=int, required=True)
    sp.add_argument("--task")
    sp.add_argument("--n", type=int, default=10)
    sp.set_defaults(func=cmd_recommend)

    sp = sub.add_parser("group", help="top-n for one user group")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--groups", required=True)
    sp.add_argument("--group", type=int, required=True)
    sp.add_argument("--n", type=int, default=10)
    sp.set_defaults(func=cmd_group)

    sp = sub.add_parser("check", help="run gradient and oracle self-tests")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    level = os.environ.get("M3REC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        return args.func(args)
    except VocabularyError as exc:
        print(f"lookup error: {exc}", file=sys.stderr)
        return 3
    except (config_mod.ConfigError, InputError, datagen.DatasetFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
