"""Run configuration: YAML loading, schema validation, overrides.

One structured file drives everything: the training process, the
tasks and their input files, pre-trained embeddings, the network
architecture with shared and private layers, regularization, and the
evaluation setup. Unknown keys are rejected with their location, and
scalar leaves can be overridden from the command line with
``section.key=value`` assignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from seqtag.exceptions import ConfigError
from seqtag.network import (
    CharConfig,
    DropoutConfig,
    NetworkConfig,
    PrivateLayerSpec,
    TaskSpec,
)
from seqtag.training import EarlyStoppingConfig, OptimizerConfig, TrainConfig

KNOWN_METRICS = (
    "accuracy",
    "precision",
    "recall",
    "f1",
    "c_f1_50",
    "c_f1_100",
    "r_f1_50",
    "r_f1_100",
    "wacc",
    "edit_distance_mean",
    "edit_distance_median",
)
POSTPROCESS_VARIANTS = ("none", "to_outside", "to_begin", "am")


class _Reader:
    """Reads keys out of a mapping, tracking location and leftovers."""

    def __init__(self, data: Mapping, path: str):
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        self.data = dict(data)
        self.path = path

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def take(self, key, kind, default=..., choices=None):
        if key in self.data:
            value = self.data.pop(key)
        elif default is not ...:
            value = default
        else:
            raise ConfigError(f"missing required key {self._at(key)}")
        if value is None and default is None:
            return None
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is not None:
            wrong_type = not isinstance(value, kind)
            bool_for_int = kind is int and isinstance(value, bool)
            if wrong_type or bool_for_int:
                raise ConfigError(
                    f"{self._at(key)}: expected {getattr(kind, '__name__', kind)}, "
                    f"got {type(value).__name__}"
                )
        if choices is not None and value not in choices:
            raise ConfigError(f"{self._at(key)}: must be one of {list(choices)}, got {value!r}")
        return value

    def section(self, key, default=...) -> "_Reader | None":
        if key in self.data:
            return _Reader(self.take(key, dict), self._at(key))
        if default is ...:
            raise ConfigError(f"missing required section {self._at(key)}")
        return None

    def finish(self) -> None:
        if self.data:
            key = sorted(self.data)[0]
            raise ConfigError(f"unknown key {self._at(key)}")


@dataclass
class TaskFiles:
    name: str
    train: str | None
    dev: str | None
    test: str | None
    token_column: int
    label_column: int
    train_fraction: float


@dataclass
class EmbeddingsConfig:
    files: list[str] = field(default_factory=list)
    fine_tune: bool = True
    word_dim: int = 16


@dataclass
class EvalConfig:
    metrics: list[str] = field(default_factory=lambda: ["accuracy", "f1"])
    postprocess: str = "none"
    empty_symbol: str = "ε"
    join_symbol: str = "_"


@dataclass
class RunConfig:
    network: NetworkConfig
    training: TrainConfig
    task_files: list[TaskFiles]
    embeddings: EmbeddingsConfig
    evaluation: EvalConfig
    output_dir: str = "runs"

    def task_files_of(self, name: str) -> TaskFiles:
        for tf in self.task_files:
            if tf.name == name:
                return tf
        raise ConfigError(f"unknown task {name!r}")


def load_yaml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_run_config(raw: Mapping) -> RunConfig:
    root = _Reader(raw, "")

    tasks_raw = root.take("tasks", list)
    if not tasks_raw:
        raise ConfigError("tasks: at least one task is required")
    task_specs: list[TaskSpec] = []
    task_files: list[TaskFiles] = []
    for i, entry in enumerate(tasks_raw):
        reader = _Reader(entry, f"tasks[{i}]")
        name = reader.take("name", str)
        private_raw = reader.take("private_layers", list, default=[])
        private = []
        for j, layer in enumerate(private_raw):
            lr = _Reader(layer, f"tasks[{i}].private_layers[{j}]")
            private.append(
                PrivateLayerSpec(
                    units=lr.take("units", int),
                    activation=lr.take("activation", str, default="tanh"),
                )
            )
            lr.finish()
        task_specs.append(
            TaskSpec(
                name=name,
                labels=[],  # filled from the data by the experiment setup
                termination_layer=reader.take("termination_layer", int, default=1),
                head=reader.take("head", str, default="softmax", choices=("softmax", "crf")),
                private_layers=private,
                dropout=reader.take("dropout", float, default=0.0),
            )
        )
        task_files.append(
            TaskFiles(
                name=name,
                train=reader.take("train", str, default=None),
                dev=reader.take("dev", str, default=None),
                test=reader.take("test", str, default=None),
                token_column=reader.take("token_column", int, default=0),
                label_column=reader.take("label_column", int, default=1),
                train_fraction=reader.take("train_fraction", float, default=1.0),
            )
        )
        reader.finish()

    arch = root.section("architecture", default=None)
    if arch is None:
        arch = _Reader({}, "architecture")
    char_reader = arch.section("char", default=None)
    if char_reader is None:
        char = CharConfig()
    else:
        char = CharConfig(
            enabled=char_reader.take("enabled", bool, default=False),
            embedding_dim=char_reader.take("embedding_dim", int, default=8),
            hidden=char_reader.take("hidden", int, default=8),
        )
        char_reader.finish()
    cell = arch.take("cell", str, default="lstm", choices=("simple", "lstm", "gru"))
    shared_layers = arch.take("shared_layers", list, default=[32])
    use_shortcuts = arch.take("use_shortcuts", bool, default=False)
    arch.finish()

    reg = root.section("regularization", default=None)
    dropout = DropoutConfig()
    if reg is not None:
        drop_reader = reg.section("dropout", default=None)
        if drop_reader is not None:
            dropout = DropoutConfig(
                word=drop_reader.take("word", float, default=0.0),
                rnn_input=drop_reader.take("rnn_input", float, default=0.0),
                rnn_state=drop_reader.take("rnn_state", float, default=0.0),
                rnn_output=drop_reader.take("rnn_output", float, default=0.0),
                variational=drop_reader.take("variational", bool, default=True),
            )
            drop_reader.finish()
        reg.finish()

    emb = root.section("embeddings", default=None)
    if emb is None:
        embeddings = EmbeddingsConfig()
    else:
        embeddings = EmbeddingsConfig(
            files=[str(f) for f in emb.take("files", list, default=[])],
            fine_tune=emb.take("fine_tune", bool, default=True),
            word_dim=emb.take("word_dim", int, default=16),
        )
        emb.finish()

    training_reader = root.section("training")
    opt_reader = training_reader.section("optimizer", default=None)
    if opt_reader is None:
        optimizer = OptimizerConfig()
    else:
        optimizer = OptimizerConfig(
            kind=opt_reader.take("kind", str, default="adam", choices=("sgd", "adam")),
            learning_rate=opt_reader.take("learning_rate", float, default=0.001),
            beta1=opt_reader.take("beta1", float, default=0.9),
            beta2=opt_reader.take("beta2", float, default=0.999),
            epsilon=opt_reader.take("epsilon", float, default=1e-8),
        )
        opt_reader.finish()
    es_reader = training_reader.section("early_stopping", default=None)
    early_stopping = None
    if es_reader is not None:
        early_stopping = EarlyStoppingConfig(
            task=es_reader.take("task", str),
            metric=es_reader.take("metric", str, default="accuracy", choices=("accuracy", "f1")),
            patience=es_reader.take("patience", int, default=5),
        )
        es_reader.finish()
    training = TrainConfig(
        epochs=training_reader.take("epochs", int, default=20),
        batch_size=training_reader.take("batch_size", int, default=8),
        optimizer=optimizer,
        clip_norm=training_reader.take("clip_norm", float, default=None),
        early_stopping=early_stopping,
        main_task=training_reader.take("main_task", str, default=task_specs[0].name),
        seed=training_reader.take("seed", int, default=0),
    )
    training_reader.finish()

    eval_reader = root.section("evaluation", default=None)
    if eval_reader is None:
        evaluation = EvalConfig()
    else:
        symbols = eval_reader.section("special_symbols", default=None)
        empty_symbol, join_symbol = "ε", "_"
        if symbols is not None:
            empty_symbol = symbols.take("empty", str, default="ε")
            join_symbol = symbols.take("join", str, default="_")
            symbols.finish()
        evaluation = EvalConfig(
            metrics=[str(m) for m in eval_reader.take("metrics", list, default=["accuracy", "f1"])],
            postprocess=eval_reader.take(
                "postprocess", str, default="none", choices=POSTPROCESS_VARIANTS
            ),
            empty_symbol=empty_symbol,
            join_symbol=join_symbol,
        )
        eval_reader.finish()
    for metric in evaluation.metrics:
        if metric not in KNOWN_METRICS:
            raise ConfigError(
                f"evaluation.metrics: unknown metric {metric!r} (known: {list(KNOWN_METRICS)})"
            )

    out_reader = root.section("output", default=None)
    output_dir = "runs"
    if out_reader is not None:
        output_dir = out_reader.take("dir", str, default="runs")
        out_reader.finish()

    root.finish()

    if not isinstance(shared_layers, list) or not all(
        isinstance(h, int) and not isinstance(h, bool) for h in shared_layers
    ):
        raise ConfigError("architecture.shared_layers: expected a list of integers")

    network = NetworkConfig(
        cell=cell,
        shared_layers=[int(h) for h in shared_layers],
        use_shortcuts=use_shortcuts,
        char=char,
        dropout=dropout,
        tasks=task_specs,
        word_dim=embeddings.word_dim,
        fine_tune_embeddings=embeddings.fine_tune,
    )
    # label inventories and the final network validation happen once the
    # data is loaded; validate what is checkable now
    for name, p in (
        ("word", dropout.word),
        ("rnn_input", dropout.rnn_input),
        ("rnn_state", dropout.rnn_state),
        ("rnn_output", dropout.rnn_output),
    ):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"regularization.dropout.{name} must be in [0, 1)")
    training.validate([t.name for t in task_specs])
    for tf in task_files:
        if not 0.0 < tf.train_fraction <= 1.0:
            raise ConfigError(f"tasks: train_fraction of {tf.name!r} must be in (0, 1]")

    return RunConfig(
        network=network,
        training=training,
        task_files=task_files,
        embeddings=embeddings,
        evaluation=evaluation,
        output_dir=output_dir,
    )


def apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides to scalar config leaves."""
    result = _deep_copy(raw)
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} is not of the form path=value")
        path, text = assignment.split("=", 1)
        keys = path.split(".")
        node = result
        for key in keys[:-1]:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"override path {path!r} does not exist in the config")
            node = node[key]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"override path {path!r} does not exist in the config")
        if isinstance(node[leaf], (dict, list)):
            raise ConfigError(f"override path {path!r} is not a scalar leaf")
        node[leaf] = yaml.safe_load(text)
    return result


def _deep_copy(node):
    if isinstance(node, dict):
        return {k: _deep_copy(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_deep_copy(v) for v in node]
    return node


def split_search_section(raw: dict) -> tuple[dict, dict]:
    """Separate the search declaration from the config template."""
    if "search" not in raw:
        raise ConfigError("config has no 'search' section")
    template = _deep_copy(raw)
    search = template.pop("search")
    reader = _Reader(search, "search")
    parsed = {
        "trials": reader.take("trials", int, default=10),
        "seeds_per_trial": reader.take("seeds_per_trial", int, default=3),
        "final_seeds": reader.take("final_seeds", int, default=0),
        "master_seed": reader.take("master_seed", int, default=0),
        "variables": reader.take("variables", dict),
    }
    reader.finish()
    return parsed, template
