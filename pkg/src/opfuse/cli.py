"""Command-line interface.

Exit codes: 0 success, 1 I/O failure (unreadable/missing files), 2
validation failure (schema, config, alignment).  Whatever a command
prints to stdout is also written verbatim to ``--out`` when given; human
tables that accompany JSON payloads go to stderr.  Log verbosity comes
from the OPFUSE_LOG environment variable (error, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .data import (CorpusError, LabelMapError, load_corpus, resolve_label_map,
                   validate_distribution)
from .encoder import EncoderError, tokenize
from .evaluation import (EvaluationError, aggregate, f1_report,
                         read_predictions, write_predictions)
from .graphs import GraphEmpty, build_structure, structure_to_json
from .model import ConfigError, ModelConfig
from .stats import mcnemar, pair_predictions, stuart_maxwell
from .sweep import SweepError, load_space, run_sweep, sweep_csv
from .train import TrainingError, train_model

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _setup_logging() -> None:
    level_name = os.environ.get("OPFUSE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        print(f"warning: unknown OPFUSE_LOG level {level_name!r}; using error",
              file=sys.stderr)
        level_name = "error"
    logging.basicConfig(level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s")


def _emit(payload: str, out_path: str | None) -> None:
    sys.stdout.write(payload)
    if not payload.endswith("\n"):
        sys.stdout.write("\n")
        payload += "\n"
    if out_path:
        Path(out_path).write_text(payload, encoding="utf-8")


def _load_corpus_checked(path: str):
    if not Path(path).exists():
        raise CliFailure(EXIT_IO, f"cannot read corpus file: {path}")
    try:
        return load_corpus(path)
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot read corpus file: {exc}")
    except CorpusError as exc:
        raise CliFailure(EXIT_VALIDATION,
                         "corpus validation failed:\n  " + "\n  ".join(exc.issues))


def _read_predictions_checked(path: str):
    if not Path(path).exists():
        raise CliFailure(EXIT_IO, f"cannot read prediction file: {path}")
    try:
        return read_predictions(path)
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot read prediction file: {exc}")
    except EvaluationError as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))


def cmd_ingest(args) -> int:
    corpus = _load_corpus_checked(args.data)
    if not corpus.records:
        _emit("0 records", args.out)
        return EXIT_OK
    report = validate_distribution(corpus)
    sizes = corpus.split_sizes()
    lines = [f"train {sizes['train']} / dev {sizes['dev']} / test {sizes['test']}",
             report.to_text()]
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    corpus = _load_corpus_checked(args.data)
    if not corpus.records:
        raise CliFailure(EXIT_VALIDATION, "cannot compute statistics for an empty corpus")
    report = validate_distribution(corpus)
    _emit(json.dumps(report.to_json(), indent=2, sort_keys=True), args.out)
    print(report.to_text(), file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    if not Path(args.config).exists():
        raise CliFailure(EXIT_IO, f"cannot read config file: {args.config}")
    try:
        config = ModelConfig.load(args.config)
    except ConfigError as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    if args.seed is not None:
        config.seed = args.seed
    corpus = _load_corpus_checked(args.data)
    try:
        result = train_model(config, corpus, out_dir=args.out)
    except (TrainingError, EncoderError, ConfigError) as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    summary = {
        "best_epoch": result.best_epoch,
        "best_dev_macro_f1": result.best_dev_f1,
        "epochs_run": len(result.log_rows),
        "seed": config.seed,
    }
    payload = json.dumps(summary, indent=2, sort_keys=True)
    sys.stdout.write(payload + "\n")
    Path(args.out, "summary.json").write_text(payload + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    preds = _read_predictions_checked(args.pred)
    try:
        if args.map:
            label_map = resolve_label_map(args.map)
            _, report = aggregate(preds, label_map)
            taxonomy = label_map.name
        else:
            report = f1_report(preds)
            taxonomy = "emotion12"
    except FileNotFoundError as exc:
        raise CliFailure(EXIT_IO, f"cannot read label map: {exc}")
    except (EvaluationError, LabelMapError) as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    _emit(json.dumps(report.to_json(), indent=2, sort_keys=True), args.out)
    print(report.to_text(), file=sys.stderr)
    if args.csv:
        rows = report.to_csv_rows(taxonomy)
        text = "taxonomy,label,f1\n" + "\n".join(",".join(r) for r in rows) + "\n"
        Path(args.csv).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    preds = _read_predictions_checked(args.pred)
    try:
        label_map = resolve_label_map(args.map)
        remapped, report = aggregate(preds, label_map)
    except FileNotFoundError as exc:
        raise CliFailure(EXIT_IO, f"cannot read label map: {exc}")
    except (EvaluationError, LabelMapError) as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    _emit(json.dumps(report.to_json(), indent=2, sort_keys=True), args.out)
    print(report.to_text(), file=sys.stderr)
    if args.remapped:
        write_predictions(args.remapped, remapped)
    if args.csv:
        rows = report.to_csv_rows(label_map.name)
        text = "taxonomy,label,f1\n" + "\n".join(",".join(r) for r in rows) + "\n"
        Path(args.csv).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_compare(args) -> int:
    preds_a = _read_predictions_checked(args.pred_a)
    preds_b = _read_predictions_checked(args.pred_b)
    try:
        paired = pair_predictions(preds_a, preds_b)
        mcn = mcnemar(paired)
        sm = stuart_maxwell(paired)
    except EvaluationError as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    result = {"n": len(paired), "mcnemar": mcn.to_json(), "stuart_maxwell": sm.to_json()}
    table = [
        f"{'test':<28}{'statistic':>12}{'df':>5}{'p-value':>14}",
        f"{'McNemar (uncorrected)':<28}{mcn.statistic:>12.4f}{1:>5}{mcn.pvalue:>14.6g}",
        f"{'McNemar (continuity)':<28}{mcn.statistic_corrected:>12.4f}{1:>5}"
        f"{mcn.pvalue_corrected:>14.6g}",
        f"{'McNemar (exact binomial)':<28}{'-':>12}{'-':>5}{mcn.pvalue_exact:>14.6g}",
        f"{'Stuart-Maxwell':<28}{sm.statistic:>12.4f}{sm.df:>5}{sm.pvalue:>14.6g}",
    ]
    payload = json.dumps(result, indent=2, sort_keys=True) + "\n" + "\n".join(table)
    _emit(payload, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not Path(args.config).exists():
        raise CliFailure(EXIT_IO, f"cannot read config file: {args.config}")
    try:
        base = ModelConfig.load(args.config)
        space = load_space(args.space)
    except (ConfigError, SweepError) as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot read sweep space: {exc}")
    corpus = _load_corpus_checked(args.data)
    seed = args.seed if args.seed is not None else base.seed
    try:
        trials = run_sweep(base, space, corpus, budget=args.budget,
                           seed=seed, jobs=args.jobs)
    except (SweepError, TrainingError, ConfigError) as exc:
        raise CliFailure(EXIT_VALIDATION, str(exc))
    payload = sweep_csv(trials)
    sys.stdout.write(payload)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.csv").write_text(payload, encoding="utf-8")
    return EXIT_OK


def cmd_export_graphs(args) -> int:
    corpus = _load_corpus_checked(args.data)
    lines = []
    for record in corpus.records:
        seq = tokenize(record.text)
        structures = []
        for opinion in record.opinions:
            try:
                structures.append(build_structure(record, opinion, seq))
            except GraphEmpty as exc:
                log.warning("%s", exc)
        lines.append(json.dumps(structure_to_json(record, structures)))
    _emit("\n".join(lines) if lines else "", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opfuse",
        description="Opinion-graph fusion toolkit: data validation, training, "
                    "evaluation, and model comparison.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file and report splits")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="per-split label distribution report (JSON)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and write its artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--map", default=None,
                   help="optional label map (ekman6, valence3, or a JSON path)")
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None, help="write plot-ready per-class F1 CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("aggregate", help="score a prediction file under a label map")
    p.add_argument("--pred", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--remapped", default=None,
                   help="write the remapped predictions to this path")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("compare", help="paired significance tests for two models")
    p.add_argument("--pred-a", required=True)
    p.add_argument("--pred-b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="random hyperparameter search")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--space", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-graphs", help="emit opinion sub-graph structures as JSONL")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_graphs)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
