"""Command-line entry point.

Subcommands: train, predict, evaluate, search, stats, derive-subtasks,
postprocess. One YAML configuration file drives training and search;
scalar leaves can be overridden with --set section.key=value. Outputs
go under the configured output directory (relative directories resolve
against $SEQTAG_RESULTS when it is set). Exit codes: 0 success,
1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from pathlib import Path

import yaml

from seqtag import checkpoint as ckpt
from seqtag import experiment
from seqtag.config import (
    KNOWN_METRICS,
    POSTPROCESS_VARIANTS,
    apply_overrides,
    build_run_config,
    load_yaml,
    split_search_section,
)
from seqtag.corpus import Token, parse_conll_file
from seqtag.exceptions import ConfigError, DataError, SeqtagError
from seqtag.hyperopt import SearchSpace, derive_seed, parse_interval, run_search
from seqtag.labels import SUBTASK_KINDS, derive_subtask, parse_am_sequence
from seqtag.metrics import ResultList
from seqtag.stats import LabelDistribution, StatsError, label_entropy, label_kurtosis

RESULTS_ENV = "SEQTAG_RESULTS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _resolve_output(path: str) -> Path:
    root = os.environ.get(RESULTS_ENV)
    p = Path(path)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config(path: str, overrides: list[str]):
    raw = load_yaml(path)
    raw.pop("search", None)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return build_run_config(raw)


# -- subcommands -----------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _load_config(args.config, args.set or [])
    out_dir = _resolve_output(args.output or config.output_dir)
    checkpoint_path = out_dir / "model.ckpt"
    log_path = out_dir / "train.log"
    with open(log_path, "w", encoding="utf-8") as log_file:

        def log(line: str) -> None:
            log_file.write(line + "\n")
            log_file.flush()
            if not args.quiet:
                print(line)

        model, result = experiment.run_training(
            config,
            checkpoint_path=str(checkpoint_path),
            log=log,
            cache_dir=str(out_dir / "cache"),
        )
    if not checkpoint_path.exists():
        ckpt.save_model(model, checkpoint_path)
    if result.best_metric is not None:
        print(f"best_dev_metric\t{result.best_metric:.6f}\tepoch\t{result.best_epoch}")
    print(f"checkpoint\t{checkpoint_path}")
    return 0


def cmd_predict(args) -> int:
    model = ckpt.load_model(args.model)
    tasks = args.tasks.split(",") if args.tasks else [t.name for t in model.config.tasks]
    for task in tasks:
        if task not in {t.name for t in model.config.tasks}:
            raise ConfigError(f"model has no task {task!r}")
    in_path = Path(args.input)
    if not in_path.exists():
        raise DataError(f"input file not found: {in_path}")

    out_lines = []
    block: list[str] = []

    def flush_block():
        if not block:
            return
        surfaces = []
        for line in block:
            cols = line.split()
            if len(cols) <= args.token_column:
                raise DataError(f"line {line!r} has no column {args.token_column}")
            surfaces.append(cols[args.token_column])
        sentence = tuple(Token(s, {}) for s in surfaces)
        columns = []
        for task in tasks:
            predicted = model.predict_labels(task, sentence)
            predicted = experiment.postprocess_labels(predicted, args.postprocess)
            columns.append(predicted)
        for i, line in enumerate(block):
            out_lines.append("\t".join([line, *(col[i] for col in columns)]))
        block.clear()

    for raw_line in in_path.read_text(encoding="utf-8").splitlines():
        if raw_line.strip():
            block.append(raw_line.rstrip("\n"))
        else:
            flush_block()
            out_lines.append("")
    flush_block()
    text = "\n".join(out_lines).rstrip("\n") + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args) -> int:
    metrics = args.metrics.split(",") if args.metrics else ["accuracy", "f1"]
    for metric in metrics:
        if metric not in KNOWN_METRICS:
            raise ConfigError(f"unknown metric {metric!r} (known: {list(KNOWN_METRICS)})")
    from seqtag.config import EvalConfig

    evaluation = EvalConfig(
        metrics=metrics,
        postprocess=args.postprocess,
        empty_symbol=args.empty_symbol,
        join_symbol=args.join_symbol,
    )

    if args.model:
        if not args.input:
            raise ConfigError("--model needs --input with gold labels")
        model = ckpt.load_model(args.model)
        task = args.task or model.config.tasks[0].name
        corpus = parse_conll_file(args.input, args.token_column, {task: args.label_column})
        report = experiment.evaluate_model(model, corpus, task, evaluation, metrics)
        labels = model.vocab.labels_of(task)
        results = None
    elif args.predictions:
        corpus = parse_conll_file(
            args.predictions,
            args.token_column,
            {"gold": args.label_column, "pred": args.pred_column},
        )
        results = ResultList()
        for sentence in corpus:
            results.add(
                [t.surface for t in sentence],
                [t.labels["gold"] for t in sentence],
                [t.labels["pred"] for t in sentence],
            )
        results = experiment.postprocess_results(results, args.postprocess)
        report = experiment.metric_report(results, metrics, evaluation, labels=None)
    else:
        raise ConfigError("evaluate needs either --model or --predictions")

    for name in metrics:
        print(f"{name}\t{report[name]:.6f}")

    if args.overlap_profile:
        if results is None:
            raise ConfigError("--overlap-profile needs --predictions input")
        _write_overlap_profile(results, args.overlap_profile)
    return 0


def _write_overlap_profile(results: ResultList, path: str) -> None:
    from seqtag.labels import components_from_labels
    from seqtag.metrics import span_overlap_profile

    lines = ["length,overlap"]
    for sentence in results:
        gold_spans = [
            (c.start, c.end + 1, c.ctype)
            for c in components_from_labels(parse_am_sequence(sentence.gold))
        ]
        pred_spans = [
            (c.start, c.end + 1, c.ctype)
            for c in components_from_labels(parse_am_sequence(sentence.predicted))
        ]
        for length, overlap in span_overlap_profile(gold_spans, pred_spans):
            lines.append(f"{length},{overlap}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_stats(args) -> int:
    print("file\tdocs\ttokens\tlabels\tentropy\tkurtosis")
    for path in args.inputs:
        corpus = parse_conll_file(path, args.token_column, {"t": args.label_column})
        counts = corpus.label_counts("t")
        dist = LabelDistribution.from_counts(counts)
        entropy = label_entropy(dist)
        try:
            kurt = f"{label_kurtosis(dist):.6f}"
        except StatsError as err:
            kurt = f"undefined ({err})"
        print(
            f"{path}\t{len(corpus)}\t{corpus.token_count}\t{len(counts)}"
            f"\t{entropy:.6f}\t{kurt}"
        )
    return 0


def cmd_search(args) -> int:
    raw = load_yaml(args.config)
    if args.set:
        raw = apply_overrides(raw, args.set)
    search, template = split_search_section(raw)
    space = SearchSpace(
        variables={
            name: parse_interval(spec) for name, spec in search["variables"].items()
        }
    )
    out_dir = _resolve_output(args.output or template.get("output", {}).get("dir", "search"))
    runs_dir = out_dir / "runs"
    run_log: dict[int, dict] = {}

    def train_fn(config_dict: dict, seed: int) -> float:
        config = build_run_config(config_dict)
        config.training.seed = seed
        data = experiment.ExperimentData(config, cache_dir=str(out_dir / "cache"))
        run_dir = runs_dir / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        lines: list[str] = []
        model, result = experiment.run_training(
            config,
            data=data,
            checkpoint_path=str(run_dir / "model.ckpt"),
            log=lines.append,
        )
        (run_dir / "train.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
        score = experiment.search_score(config, result, model, data)
        run_log[seed] = {"dir": run_dir, "score": score}
        return score

    report = run_search(
        template=template,
        space=space,
        n_trials=search["trials"],
        seeds_per_trial=search["seeds_per_trial"],
        master_seed=search["master_seed"],
        train_fn=train_fn,
        final_seeds=search["final_seeds"],
    )

    for trial in report.trials:
        trial_dir = out_dir / f"trial_{trial.index:03d}"
        trial_dir.mkdir(parents=True, exist_ok=True)
        (trial_dir / "config.yaml").write_text(
            yaml.safe_dump(trial.config, sort_keys=False), encoding="utf-8"
        )
        if trial.error is None and trial.seed_scores:
            seeds = [
                derive_seed(search["master_seed"], trial.index, j)
                for j in range(len(trial.seed_scores))
            ]
            best_seed = max(zip(trial.seed_scores, seeds))[1]
            source = run_log.get(best_seed)
            if source is not None:
                shutil.copyfile(source["dir"] / "model.ckpt", trial_dir / "best.ckpt")
            for j, seed in enumerate(seeds):
                log_src = runs_dir / f"seed_{seed}" / "train.log"
                if log_src.exists():
                    shutil.copyfile(log_src, trial_dir / f"seed_{j}.log")
        elif trial.error is not None:
            (trial_dir / "FAILED").write_text(trial.error + "\n", encoding="utf-8")

    report_text = report.to_tsv()
    (out_dir / "report.tsv").write_text(report_text, encoding="utf-8")
    sys.stdout.write(report_text)
    return 0


def cmd_derive_subtasks(args) -> int:
    kinds = [k.strip().upper() for k in args.kinds.split(",")]
    for kind in kinds:
        if kind not in SUBTASK_KINDS:
            raise ConfigError(f"unknown subtask kind {kind!r} (known: {list(SUBTASK_KINDS)})")
    corpus = parse_conll_file(args.input, args.token_column, {"am": args.label_column})
    out_lines = []
    for i, sentence in enumerate(corpus):
        if i:
            out_lines.append("")
        seq = parse_am_sequence([t.labels["am"] for t in sentence])
        derived = {kind: derive_subtask(seq, kind) for kind in kinds}
        for j, token in enumerate(sentence):
            cells = [token.surface, token.labels["am"], *(derived[k][j] for k in kinds)]
            out_lines.append("\t".join(cells))
    text = "\n".join(out_lines) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_postprocess(args) -> int:
    corpus = parse_conll_file(args.input, args.token_column, {"t": args.label_column})
    out_lines = []
    for i, sentence in enumerate(corpus):
        if i:
            out_lines.append("")
        labels = [t.labels["t"] for t in sentence]
        fixed = experiment.postprocess_labels(labels, args.variant)
        for token, label in zip(sentence, fixed):
            out_lines.append(f"{token.surface}\t{label}")
    text = "\n".join(out_lines) + "\n"
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="seqtag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="PATH=VALUE", help="override a scalar leaf")
    p.add_argument("--output", help="output directory (defaults to output.dir)")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch lines on stdout")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="label a CoNLL file with a trained model")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--input", required=True, help="CoNLL input (labeled or unlabeled)")
    p.add_argument("--output", help="output path (stdout when omitted)")
    p.add_argument("--tasks", help="comma-separated task names (default: all)")
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument(
        "--postprocess", default="none", choices=POSTPROCESS_VARIANTS,
        help="repair predictions before writing",
    )
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("evaluate", help="score a model or a prediction file")
    p.add_argument("--model", help="checkpoint path (evaluate on --input)")
    p.add_argument("--input", help="labeled CoNLL input for --model")
    p.add_argument("--task", help="task to evaluate (default: first task)")
    p.add_argument("--predictions", help="CoNLL file with gold and predicted columns")
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=1, help="gold label column")
    p.add_argument("--pred-column", type=int, default=2, help="predicted label column")
    p.add_argument("--metrics", help="comma-separated metric names")
    p.add_argument("--postprocess", default="none", choices=POSTPROCESS_VARIANTS)
    p.add_argument("--empty-symbol", default="ε")
    p.add_argument("--join-symbol", default="_")
    p.add_argument("--overlap-profile", metavar="CSV", help="write span overlap pairs")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("stats", help="corpus statistics: docs, tokens, entropy, kurtosis")
    p.add_argument("inputs", nargs="+", help="CoNLL files")
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=1)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("search", help="random hyper-parameter search")
    p.add_argument("config", help="YAML config template with a search section")
    p.add_argument("--set", action="append", metavar="PATH=VALUE")
    p.add_argument("--output", help="search output directory")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("derive-subtasks", help="project AM labels onto subtask label sets")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--kinds", default="ACS,ACI,ARS,ARI")
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=1)
    p.set_defaults(fn=cmd_derive_subtasks)

    p = sub.add_parser("postprocess", help="repair a label column")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--variant", required=True, choices=POSTPROCESS_VARIANTS)
    p.add_argument("--token-column", type=int, default=0)
    p.add_argument("--label-column", type=int, default=1)
    p.set_defaults(fn=cmd_postprocess)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SeqtagError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
