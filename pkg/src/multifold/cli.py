"""Command-line surface: stats, convert, split, train, eval, witness.

Every run echoes its effective configuration, and every output file starts
with a reproducibility header (seed, config digest, format versions).
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, convert, dataio, ranking, training
from .kb import DataError, stats, validate
from .models import NumericError

logger = logging.getLogger("multifold")

DATA_DIR_ENV = "MULTIFOLD_DATA_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise _UsageError(message)


def _resolve(path: str) -> Path:
    """Relative inputs fall back to the data directory from the environment."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def _repro_header(args: argparse.Namespace, extra: dict | None = None) -> list[str]:
    info = {
        "tool": f"multifold {__version__}",
        "command": args.command,
        "data-format": dataio.DATA_FORMAT_VERSION,
        "model-format": dataio.MODEL_FORMAT_VERSION,
    }
    if extra:
        info.update(extra)
    return [f"{k}: {v}" for k, v in info.items()]


def _read_instances(args: argparse.Namespace, path: Path):
    schemas = dataio.parse_schemas(_resolve(args.schemas)) if getattr(args, "schemas", None) else None
    return dataio.parse_instances(path, fmt=args.format, schemas=schemas)


def _add_instance_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input file")
    p.add_argument("--format", choices=("positional", "keyed"), default="positional")
    p.add_argument("--schemas", help="schema sidecar for positional files")


def _cmd_stats(args: argparse.Namespace) -> int:
    path = _resolve(args.input)
    if args.kind == "facts":
        rep = dataio.parse_facts(path)
    else:
        rep = _read_instances(args, path)
    dataio.verify_counts(rep, entities=args.expect_entities,
                         rel_types=args.expect_rel_types,
                         instances=args.expect_instances)
    problems = validate(rep)
    for line in _repro_header(args, {"input": path}):
        print(f"# {line}")
    s = stats(rep).as_dict()
    for key, value in s.items():
        print(f"{key} {json.dumps(value) if isinstance(value, dict) else value}")
    print(f"violations {len(problems)}")
    for v in problems[:20]:
        logger.warning("invariant violation: %s", v)
    return EXIT_OK


def _cmd_convert(args: argparse.Namespace) -> int:
    path = _resolve(args.input)
    header = _repro_header(args, {"input": path, "mode": args.mode})
    if args.mode in ("t", "t-id"):
        facts = dataio.parse_facts(path)
        rep = convert.convert_fact_rep(facts, keep_ids=(args.mode == "t-id"))
        dataio.write_instances(rep, args.output, fmt=args.format, header=header)
        before, after = stats(facts), stats(rep)
    elif args.mode == "s2c":
        rep = _read_instances(args, path)
        out = convert.s2c_representation(rep)
        dataio.write_instances(out, args.output, fmt=args.format, header=header)
        if args.folds_out:
            dataio.write_fold_map(convert.s2c_type_folds(rep), args.folds_out, header=header)
        before, after = stats(rep), stats(out)
    else:  # recover
        rep = _read_instances(args, path)
        facts = convert.recover_facts(rep)
        dataio.write_facts(facts, args.output, header=header)
        before, after = stats(rep), stats(facts)
    print(f"entities {before.entity_count} -> {after.entity_count}")
    print(f"rel_types {before.rel_type_count} -> {after.rel_type_count}")
    print(f"items {before.instance_count} -> {after.instance_count}")
    return EXIT_OK


def _cmd_split(args: argparse.Namespace) -> int:
    rep = _read_instances(args, _resolve(args.input))
    result = dataio.split(rep, args.test_fraction, seed=args.seed)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    header = _repro_header(args, {
        "seed": args.seed,
        "test-fraction": args.test_fraction,
        "realized-test-fraction": result.realized_test_fraction,
    })
    for bundle, tag in ((result.g, "g"), (result.g_id, "g_id"), (result.g_s2c, "g_s2c")):
        dataio.write_instances(bundle.train, outdir / f"{tag}_train.txt", fmt=args.format,
                               header=header)
        dataio.write_instances(bundle.test, outdir / f"{tag}_test.txt", fmt=args.format,
                               header=header)
    dataio.write_fold_map(result.g_s2c.fold_by_type, outdir / "g_s2c_folds.tsv", header=header)
    print(f"groups {result.g.train.instance_count() + result.g.test.instance_count()}")
    print(f"train {result.g.train.instance_count()} test {result.g.test.instance_count()}")
    print(f"realized_test_fraction {result.realized_test_fraction!r}")
    return EXIT_OK


def _build_config(args: argparse.Namespace) -> training.TrainConfig:
    config = training.TrainConfig()
    if args.config:
        with open(_resolve(args.config), encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(config.as_dict())
        if unknown:
            raise _UsageError(f"unknown config keys: {sorted(unknown)}")
        for key, value in loaded.items():
            setattr(config, key, value)
    for key in config.as_dict():
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(config, key, flag)
    try:
        config.validate()
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    return config


def _cmd_train(args: argparse.Namespace) -> int:
    config = _build_config(args)
    rep = _read_instances(args, _resolve(args.input))
    logger.info("effective config: %s", json.dumps(config.as_dict(), sort_keys=True))
    model, records = training.train(rep, config)
    header = _repro_header(args, {
        "seed": config.seed,
        "config": json.dumps(config.as_dict(), sort_keys=True),
    })
    dataio.save_model(model, args.model_out, config_digest=config.digest(), header=header)
    if args.log_out:
        with open(args.log_out, "w", encoding="utf-8") as fh:
            fh.write(training.format_log(records))
    if records:
        last = records[-1]
        print(f"trained epochs {len(records)} final_loss {last.loss!r} "
              f"penalty {last.penalty!r}")
    else:
        print("trained epochs 0")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    model = dataio.load_model(_resolve(args.model))
    rep = _read_instances(args, _resolve(args.input))
    folds = dataio.parse_fold_map(_resolve(args.folds)) if args.folds else None
    report = ranking.evaluate(
        model, rep, protocol=args.protocol, tie_rule=args.tie,
        fold_of_type=folds, sample_fraction=args.sample_fraction,
        sample_seed=args.sample_seed, threads=args.threads,
    )
    header = _repro_header(args, {"model": args.model, "input": args.input,
                                  "protocol": args.protocol})
    text = ranking.export_report(report, header_lines=header, include_records=args.records)
    if args.report_out:
        Path(args.report_out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _cmd_witness(args: argparse.Namespace) -> int:
    one, clique = convert.s2c_collision_witness()
    edges_one = convert.triple_edge_set(convert.s2c_representation(one))
    edges_clique = convert.triple_edge_set(convert.s2c_representation(clique))
    for line in _repro_header(args):
        print(f"# {line}")
    print("first representation:")
    for inst in one.all_instances():
        print(f"  {inst.describe()}")
    print("second representation:")
    for inst in clique.all_instances():
        print(f"  {inst.describe()}")
    print("shared converted edge set:")
    for edge in sorted(edges_one):
        print(f"  {edge[0]} -[{edge[1]}]- {edge[2]}")
    identical = edges_one == edges_clique
    print(f"identical_outputs {identical}")
    return EXIT_OK if identical else EXIT_DATA


def build_parser() -> _Parser:
    parser = _Parser(prog="multifold",
                     description="embedding toolkit for multi-fold relational data")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="counts and invariant check for a data file")
    _add_instance_input(p)
    p.add_argument("--kind", choices=("instances", "facts"), default="instances")
    p.add_argument("--expect-entities", type=int)
    p.add_argument("--expect-rel-types", type=int)
    p.add_argument("--expect-instances", type=int)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("convert", help="convert between facts, instances and triples")
    _add_instance_input(p)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("t", "t-id", "s2c", "recover"), required=True)
    p.add_argument("--folds-out", help="write source-arity sidecar (s2c mode)")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("split", help="train/test split with fact-id coverage")
    _add_instance_input(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--test-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train an embedding model")
    _add_instance_input(p)
    p.add_argument("--model-out", required=True)
    p.add_argument("--log-out")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--mode", choices=training.MODES)
    p.add_argument("--dim", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--penalty-weight", dest="penalty_weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--strict-constraints", dest="strict_constraints",
                   action="store_const", const=True)
    p.add_argument("--freeze-role-weights", dest="freeze_role_weights",
                   action="store_const", const=True)
    p.add_argument("--reject-known-positives", dest="reject_known_positives",
                   action="store_const", const=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rank test entities and report HIT@10 / mean rank")
    _add_instance_input(p)
    p.add_argument("--model", required=True)
    p.add_argument("--protocol", choices=ranking.PROTOCOLS, required=True)
    p.add_argument("--tie", choices=ranking.TIE_RULES, default="optimistic")
    p.add_argument("--folds", help="source-arity sidecar for converted triples")
    p.add_argument("--sample-fraction", dest="sample_fraction", type=float)
    p.add_argument("--sample-seed", dest="sample_seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="evaluation worker threads (results are order-independent)")
    p.add_argument("--records", action="store_true", help="include per-query records")
    p.add_argument("--report-out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("witness", help="show two inputs with one clique conversion")
    p.set_defaults(func=_cmd_witness)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
