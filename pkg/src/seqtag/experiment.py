"""Wiring between configuration, data, model, training, and metrics.

This module owns the run lifecycle: load and cache corpora, build the
vocabulary and embedding matrix, construct the model from one seeded
PRNG stream, train, and evaluate with the configured metric set and
post-processing variant.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np

from seqtag.config import EvalConfig, RunConfig
from seqtag.corpus import (
    Corpus,
    Vocabulary,
    build_char_index,
    build_label_index,
    load_corpus_cached,
)
from seqtag.embeddings import build_embedding_set, prune_embeddings, save_embedding_file
from seqtag.exceptions import ConfigError, DataError
from seqtag.labels import (
    TO_BEGIN,
    TO_OUTSIDE,
    am_postprocess,
    correct_bio,
    parse_am_sequence,
    parse_bio_sequence,
    strip_alignment_symbols,
)
from seqtag.metrics import (
    ResultList,
    aggregate_edit_distance,
    am_f1,
    edit_distance,
    token_prf,
    word_accuracy,
)
from seqtag.network import Model
from seqtag.training import TrainResult, predict_results, subsample, train


class ExperimentData:
    """Loaded corpora plus the artifacts derived from them."""

    def __init__(self, config: RunConfig, cache_dir: str | None = None):
        self.config = config
        self.train: dict[str, Corpus] = {}
        self.dev: dict[str, Corpus] = {}
        self.test: dict[str, Corpus] = {}
        for tf in config.task_files:
            cols = {tf.name: tf.label_column}
            if tf.train:
                self.train[tf.name] = load_corpus_cached(
                    tf.train, tf.token_column, cols, cache_dir
                )
            if tf.dev:
                self.dev[tf.name] = load_corpus_cached(tf.dev, tf.token_column, cols, cache_dir)
            if tf.test:
                self.test[tf.name] = load_corpus_cached(
                    tf.test, tf.token_column, cols, cache_dir
                )

        all_corpora = [*self.train.values(), *self.dev.values(), *self.test.values()]
        if not all_corpora:
            raise ConfigError("no input files configured")
        self.vocab = Vocabulary()
        self.word_matrix: np.ndarray | None = None
        if config.embeddings.files:
            emb = build_embedding_set(config.embeddings.files)
            emb = prune_embeddings(emb, all_corpora)
            config.network.word_dim = emb.dim
            config.embeddings.word_dim = emb.dim
            for word in emb.vectors:
                self.vocab.add_word(word)
            matrix = np.zeros((self.vocab.word_count, emb.dim))
            for word, vector in emb.vectors.items():
                matrix[self.vocab.word_index[word]] = vector
            self.word_matrix = matrix
            self.pruned_embeddings = emb
        else:
            for corpus in self.train.values():
                for surface in sorted(corpus.surfaces()):
                    self.vocab.add_word(surface)
            self.pruned_embeddings = None
        self.vocab.char_index = build_char_index(all_corpora)

        for task in config.network.tasks:
            corpora = [
                c
                for c in (
                    self.train.get(task.name),
                    self.dev.get(task.name),
                    self.test.get(task.name),
                )
                if c is not None
            ]
            if not corpora:
                raise ConfigError(f"task {task.name!r} has no input files")
            self.vocab.label_index[task.name] = build_label_index(corpora, task.name)
            task.labels = self.vocab.labels_of(task.name)
        config.network.validate()

    def save_pruned_embeddings(self, path: str | Path) -> None:
        if self.pruned_embeddings is not None:
            save_embedding_file(self.pruned_embeddings, path)


def build_model(config: RunConfig, data: ExperimentData, rng: np.random.Generator) -> Model:
    return Model(config.network, data.vocab, rng, word_vectors=data.word_matrix)


def run_training(
    config: RunConfig,
    data: ExperimentData | None = None,
    checkpoint_path: str | None = None,
    log: Callable[[str], None] | None = None,
    cache_dir: str | None = None,
) -> tuple[Model, TrainResult]:
    """Set up and train one model from a run configuration.

    One PRNG stream seeded with ``training.seed`` drives, in order:
    parameter initialization, training-fraction subsampling, per-epoch
    shuffling, and dropout masks.
    """
    if data is None:
        data = ExperimentData(config, cache_dir=cache_dir)
    if cache_dir is not None and data.pruned_embeddings is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        data.save_pruned_embeddings(Path(cache_dir) / "embeddings.pruned.txt")
    rng = np.random.default_rng(config.training.seed)
    model = build_model(config, data, rng)
    train_corpora = {}
    for tf in config.task_files:
        if tf.name not in data.train:
            raise ConfigError(f"task {tf.name!r} has no training file")
        corpus = data.train[tf.name]
        if tf.train_fraction < 1.0:
            corpus = subsample(corpus, tf.train_fraction, rng)
        train_corpora[tf.name] = corpus
    result = train(
        model,
        train_corpora,
        data.dev,
        config.training,
        rng,
        checkpoint_path=checkpoint_path,
        log=log,
    )
    return model, result


# -- prediction post-processing ------------------------------------------------------


def postprocess_labels(labels: list[str], variant: str) -> list[str]:
    """Apply one repair variant to a predicted label sequence."""
    if variant == "none":
        return list(labels)
    if variant in (TO_OUTSIDE, TO_BEGIN):
        return [l.render() for l in correct_bio(parse_bio_sequence(labels), variant)]
    if variant == "am":
        return [l.render() for l in am_postprocess(parse_am_sequence(labels))]
    raise ConfigError(f"unknown post-processing variant {variant!r}")


def postprocess_results(results: ResultList, variant: str) -> ResultList:
    if variant == "none":
        return results
    out = ResultList()
    for sentence in results:
        out.add(
            sentence.surfaces, sentence.gold, postprocess_labels(sentence.predicted, variant)
        )
    return out


# -- metric reports ----------------------------------------------------------------------


def metric_report(
    results: ResultList, metrics: list[str], evaluation: EvalConfig, labels: list[str] | None
) -> dict[str, float]:
    """Compute the requested metrics over one task's results."""
    report: dict[str, float] = {}
    token_wanted = [m for m in metrics if m in ("accuracy", "precision", "recall", "f1")]
    if token_wanted:
        scores = token_prf(results, labels=labels)
        for name in token_wanted:
            report[name] = scores[name]
    for name in metrics:
        if name.startswith(("c_f1", "r_f1")):
            target = "component" if name.startswith("c_f1") else "relation"
            level = "exact" if name.endswith("100") else "approx"
            report[name] = am_f1(results, target, level)
    s2s_wanted = [m for m in metrics if m in ("wacc", "edit_distance_mean", "edit_distance_median")]
    if s2s_wanted:
        gold_strings, pred_strings = [], []
        for sentence in results:
            gold_strings.append(
                strip_alignment_symbols(
                    sentence.gold, evaluation.empty_symbol, evaluation.join_symbol
                )
            )
            pred_strings.append(
                strip_alignment_symbols(
                    sentence.predicted, evaluation.empty_symbol, evaluation.join_symbol
                )
            )
        if "wacc" in s2s_wanted:
            report["wacc"] = word_accuracy(pred_strings, gold_strings)
        distances = [edit_distance(p, g) for p, g in zip(pred_strings, gold_strings)]
        if "edit_distance_mean" in s2s_wanted:
            report["edit_distance_mean"] = aggregate_edit_distance(distances, "mean")
        if "edit_distance_median" in s2s_wanted:
            report["edit_distance_median"] = aggregate_edit_distance(distances, "median")
    return report


def evaluate_model(
    model: Model,
    corpus: Corpus,
    task: str,
    evaluation: EvalConfig,
    metrics: list[str] | None = None,
) -> dict[str, float]:
    results = predict_results(model, task, corpus)
    results = postprocess_results(results, evaluation.postprocess)
    return metric_report(
        results,
        metrics if metrics is not None else evaluation.metrics,
        evaluation,
        labels=model.vocab.labels_of(task),
    )


def search_score(config: RunConfig, result: TrainResult, model: Model, data) -> float:
    """Development score a hyper-parameter trial is ranked by."""
    if result.best_metric is not None:
        return result.best_metric
    main = config.training.main_task
    if main not in data.dev:
        raise DataError(
            f"main task {main!r} needs a dev file to score hyper-parameter trials"
        )
    from seqtag.training import dev_score

    return dev_score(model, main, data.dev[main], "accuracy")
