"""Multi-task training: batching, interleaving, clipping, optimizers,
early stopping.

Every epoch, each task contributes all of its batches over its own
shuffled training data; the combined (task, batch) list is shuffled
again and processed sequentially. A batch backpropagates only its own
task's loss, through the shared parameters and that task's private
parameters. The run is driven by a single PRNG stream (also used for
parameter init and dropout masks), which makes whole runs bit-for-bit
reproducible from the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from seqtag.corpus import Corpus
from seqtag.exceptions import ConfigError, NumericError
from seqtag.metrics import ResultList, token_prf
from seqtag.network import Model

DEV_METRICS = ("accuracy", "f1")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class EarlyStoppingConfig:
    task: str
    metric: str = "accuracy"
    patience: int = 5


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    clip_norm: float | None = None
    early_stopping: EarlyStoppingConfig | None = None
    main_task: str = ""
    seed: int = 0

    def validate(self, task_names: Sequence[str]) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.optimizer.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer.kind!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip threshold must be positive")
        if self.main_task and self.main_task not in task_names:
            raise ConfigError(f"main task {self.main_task!r} is not a declared task")
        if self.early_stopping is not None:
            es = self.early_stopping
            if es.patience < 1:
                raise ConfigError("early stopping patience must be >= 1")
            if es.metric not in DEV_METRICS:
                raise ConfigError(f"unknown early stopping metric {es.metric!r}")
            if es.task not in task_names:
                raise ConfigError(f"early stopping task {es.task!r} is not declared")


# -- gradients ---------------------------------------------------------------------


class GradientSet:
    """Named gradient arrays; the global norm is recomputed on demand."""

    def __init__(self, grads: dict[str, np.ndarray]):
        self.grads = grads

    def global_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def items(self):
        return self.grads.items()


def clip_global_norm(grads: GradientSet, threshold: float) -> GradientSet:
    """Rescale all gradients when their joint norm exceeds the
    threshold; below it the set passes through unchanged."""
    if threshold <= 0:
        raise ConfigError("clip threshold must be positive")
    norm = grads.global_norm()
    scale = threshold / max(threshold, norm)
    if scale == 1.0:
        return GradientSet(dict(grads.grads))
    return GradientSet({name: g * scale for name, g in grads.items()})


# -- optimizers ---------------------------------------------------------------------


class SgdOptimizer:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params, grads: GradientSet) -> None:
        for name, g in grads.items():
            params[name].data -= self.learning_rate * g


class AdamOptimizer:
    """Adam with bias correction; per-parameter state is created on
    first touch, so parameters outside a batch's graph keep their
    state and values untouched."""

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.state: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}

    def step(self, params, grads: GradientSet) -> None:
        for name, g in grads.items():
            m, v, t = self.state.get(name, (np.zeros_like(g), np.zeros_like(g), 0))
            t += 1
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            params[name].data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
            self.state[name] = (m, v, t)


def make_optimizer(config: OptimizerConfig):
    if config.kind == "sgd":
        return SgdOptimizer(config.learning_rate)
    if config.kind == "adam":
        return AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    raise ConfigError(f"unknown optimizer {config.kind!r}")


# -- evaluation helpers ----------------------------------------------------------------


def predict_results(model: Model, task: str, corpus: Corpus) -> ResultList:
    results = ResultList()
    for sentence in corpus:
        predicted = model.predict_labels(task, sentence)
        results.add(
            [tok.surface for tok in sentence],
            [tok.labels.get(task, "") for tok in sentence],
            predicted,
        )
    return results


def dev_score(model: Model, task: str, corpus: Corpus, metric: str) -> float:
    results = predict_results(model, task, corpus)
    return token_prf(results, labels=model.vocab.labels_of(task))[metric]


# -- the loop ----------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    task_losses: dict[str, float]
    dev_metric: float | None
    seconds: float

    def as_line(self) -> str:
        losses = " ".join(f"{task}={loss:.6f}" for task, loss in self.task_losses.items())
        dev = "-" if self.dev_metric is None else f"{self.dev_metric:.6f}"
        return f"{self.epoch}\t{losses}\t{dev}\t{self.seconds:.3f}"


@dataclass
class TrainResult:
    model: Model
    records: list[EpochRecord]
    best_metric: float | None
    best_epoch: int | None


def subsample(corpus: Corpus, fraction: float, rng: np.random.Generator) -> Corpus:
    """First ceil(fraction * N) documents after a seeded shuffle."""
    if fraction >= 1.0:
        return corpus
    n = len(corpus.sentences)
    keep = int(np.ceil(fraction * n))
    order = rng.permutation(n)[:keep]
    return Corpus(
        sentences=tuple(corpus.sentences[i] for i in order), tasks=corpus.tasks
    )


def train(
    model: Model,
    train_data: dict[str, Corpus],
    dev_data: dict[str, Corpus],
    config: TrainConfig,
    rng: np.random.Generator,
    checkpoint_path: str | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the multi-task loop and return the best model.

    With early stopping active, the checkpoint on disk and the returned
    model are the best-scoring epoch's; otherwise the checkpoint tracks
    every epoch and the final parameters are returned.
    """
    from seqtag import checkpoint as ckpt

    task_names = [t.name for t in model.config.tasks]
    config.validate(task_names)
    for name in task_names:
        if name not in train_data or len(train_data[name]) == 0:
            raise ConfigError(f"task {name!r} has no training data")
    es = config.early_stopping
    if es is not None and es.task not in dev_data:
        raise ConfigError(f"early stopping task {es.task!r} has no dev data")

    encoded = {
        name: [
            (model.encode_sentence(s), model.gold_ids(name, s), len(s))
            for s in train_data[name]
        ]
        for name in task_names
    }

    optimizer = make_optimizer(config.optimizer)
    records: list[EpochRecord] = []
    best_metric: float | None = None
    best_epoch: int | None = None
    best_params: dict[str, np.ndarray] | None = None
    stale = 0

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        batches: list[tuple[str, list[int]]] = []
        for name in task_names:
            order = rng.permutation(len(encoded[name]))
            for i in range(0, len(order), config.batch_size):
                batches.append((name, [int(j) for j in order[i : i + config.batch_size]]))
        batch_order = rng.permutation(len(batches))

        sums: dict[str, float] = {name: 0.0 for name in task_names}
        counts: dict[str, int] = {name: 0 for name in task_names}
        for b in batch_order:
            task_name, sentence_ids = batches[b]
            try:
                losses = []
                for j in sentence_ids:
                    (word_ids, char_idss), gold, _ = encoded[task_name][j]
                    losses.append(
                        model.sentence_loss(
                            task_name, word_ids, char_idss, gold, training=True, rng=rng
                        )
                    )
                batch_loss = losses[0] if len(losses) == 1 else (
                    sum(losses[1:], start=losses[0]) / float(len(losses))
                )
                batch_loss.backward()
            except NumericError as err:
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, task {task_name!r}, "
                    f"batch {int(b)}: {err}"
                ) from err
            names = model.task_param_names(task_name)
            grads = GradientSet(
                {
                    n: (model.params[n].grad if model.params[n].grad is not None
                        else np.zeros_like(model.params[n].data))
                    for n in names
                }
            )
            if config.clip_norm is not None:
                grads = clip_global_norm(grads, config.clip_norm)
            optimizer.step(model.params, grads)
            model.zero_grads()
            sums[task_name] += float(batch_loss.data)
            counts[task_name] += 1

        metric_value: float | None = None
        if es is not None:
            metric_value = dev_score(model, es.task, dev_data[es.task], es.metric)
            if best_metric is None or metric_value > best_metric:
                best_metric = metric_value
                best_epoch = epoch
                best_params = {n: t.data.copy() for n, t in model.params.items()}
                stale = 0
                if checkpoint_path is not None:
                    ckpt.save_model(model, checkpoint_path)
            else:
                stale += 1
        elif checkpoint_path is not None:
            ckpt.save_model(model, checkpoint_path)

        record = EpochRecord(
            epoch=epoch,
            task_losses={n: (sums[n] / counts[n] if counts[n] else 0.0) for n in task_names},
            dev_metric=metric_value,
            seconds=time.perf_counter() - started,
        )
        records.append(record)
        if log is not None:
            log(record.as_line())
        if es is not None and stale >= es.patience:
            break

    if es is not None and best_params is not None:
        for name, data in best_params.items():
            model.params[name].data = data.copy()
    return TrainResult(
        model=model, records=records, best_metric=best_metric, best_epoch=best_epoch
    )
