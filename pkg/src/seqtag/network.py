"""The multi-task tagging network.

One embedding layer (optionally concatenated with character BiLSTM
features) feeds a stack of shared bidirectional recurrent layers; every
task terminates at a configurable shared layer, runs through optional
private feed-forward layers, a projection, and ends in a softmax or CRF
head. All five dropout sites (word, RNN input/state/output, task) use
inverted scaling, so evaluation passes need no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from seqtag import autodiff as ad
from seqtag import crf
from seqtag.autodiff import Tensor
from seqtag.corpus import PAD_INDEX, UNK_INDEX, Sentence, Vocabulary
from seqtag.exceptions import ConfigError, ShapeError

CELL_KINDS = ("simple", "lstm", "gru")
HEAD_KINDS = ("softmax", "crf")
ACTIVATIONS = {
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "relu": ad.relu,
    "identity": lambda t: t,
}


@dataclass
class CharConfig:
    enabled: bool = False
    embedding_dim: int = 8
    hidden: int = 8


@dataclass
class DropoutConfig:
    word: float = 0.0
    rnn_input: float = 0.0
    rnn_state: float = 0.0
    rnn_output: float = 0.0
    variational: bool = True


@dataclass
class PrivateLayerSpec:
    units: int
    activation: str = "tanh"


@dataclass
class TaskSpec:
    name: str
    labels: list[str]
    termination_layer: int = 1
    head: str = "softmax"
    private_layers: list[PrivateLayerSpec] = field(default_factory=list)
    dropout: float = 0.0


@dataclass
class NetworkConfig:
    cell: str = "lstm"
    shared_layers: list[int] = field(default_factory=lambda: [32])
    use_shortcuts: bool = False
    char: CharConfig = field(default_factory=CharConfig)
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    tasks: list[TaskSpec] = field(default_factory=list)
    word_dim: int = 16
    fine_tune_embeddings: bool = True

    def validate(self) -> None:
        if self.cell not in CELL_KINDS:
            raise ConfigError(f"unknown cell kind {self.cell!r}")
        if not self.shared_layers:
            raise ConfigError("at least one shared layer is required")
        if any(h < 1 for h in self.shared_layers):
            raise ConfigError("shared layer sizes must be positive")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate task names")
        for task in self.tasks:
            if not task.labels:
                raise ConfigError(f"task {task.name!r} has an empty label inventory")
            if not 1 <= task.termination_layer <= len(self.shared_layers):
                raise ConfigError(
                    f"task {task.name!r} terminates at layer {task.termination_layer}, "
                    f"but there are {len(self.shared_layers)} shared layers"
                )
            if task.head not in HEAD_KINDS:
                raise ConfigError(f"task {task.name!r}: unknown head {task.head!r}")
            if not 0.0 <= task.dropout < 1.0:
                raise ConfigError(f"task {task.name!r}: dropout must be in [0, 1)")
            for layer in task.private_layers:
                if layer.units < 1:
                    raise ConfigError(f"task {task.name!r}: private layer units must be >= 1")
                if layer.activation not in ACTIVATIONS:
                    raise ConfigError(
                        f"task {task.name!r}: unknown activation {layer.activation!r}"
                    )
        top = max(t.termination_layer for t in self.tasks)
        if top != len(self.shared_layers):
            raise ConfigError(
                f"{len(self.shared_layers)} shared layers configured but the highest "
                f"termination layer is {top}; they must be equal"
            )
        d = self.dropout
        for name, p in (
            ("word", d.word),
            ("rnn_input", d.rnn_input),
            ("rnn_state", d.rnn_state),
            ("rnn_output", d.rnn_output),
        ):
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"dropout probability {name} must be in [0, 1)")

    def task(self, name: str) -> TaskSpec:
        for task in self.tasks:
            if task.name == name:
                return task
        raise ConfigError(f"unknown task {name!r}")

    def to_json(self) -> dict:
        return {
            "cell": self.cell,
            "shared_layers": list(self.shared_layers),
            "use_shortcuts": self.use_shortcuts,
            "char": vars(self.char).copy(),
            "dropout": vars(self.dropout).copy(),
            "tasks": [
                {
                    "name": t.name,
                    "labels": list(t.labels),
                    "termination_layer": t.termination_layer,
                    "head": t.head,
                    "private_layers": [vars(p).copy() for p in t.private_layers],
                    "dropout": t.dropout,
                }
                for t in self.tasks
            ],
            "word_dim": self.word_dim,
            "fine_tune_embeddings": self.fine_tune_embeddings,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "NetworkConfig":
        config = cls(
            cell=payload["cell"],
            shared_layers=list(payload["shared_layers"]),
            use_shortcuts=payload["use_shortcuts"],
            char=CharConfig(**payload["char"]),
            dropout=DropoutConfig(**payload["dropout"]),
            tasks=[
                TaskSpec(
                    name=t["name"],
                    labels=list(t["labels"]),
                    termination_layer=t["termination_layer"],
                    head=t["head"],
                    private_layers=[PrivateLayerSpec(**p) for p in t["private_layers"]],
                    dropout=t["dropout"],
                )
                for t in payload["tasks"]
            ],
            word_dim=payload["word_dim"],
            fine_tune_embeddings=payload["fine_tune_embeddings"],
        )
        config.validate()
        return config


# -- recurrent cells --------------------------------------------------------------


def _gate_count(kind: str) -> int:
    return {"simple": 1, "lstm": 4, "gru": 3}[kind]


@dataclass
class CellParams:
    kind: str
    hidden: int
    W: Tensor  # input weights; gru: gates z,r only
    U: Tensor
    b: Tensor
    Wc: Tensor | None = None  # gru candidate weights
    Uc: Tensor | None = None
    bc: Tensor | None = None

    def tensors(self) -> list[tuple[str, Tensor]]:
        named = [("W", self.W), ("U", self.U), ("b", self.b)]
        if self.kind == "gru":
            named += [("Wc", self.Wc), ("Uc", self.Uc), ("bc", self.bc)]
        return named


def init_cell(kind: str, in_dim: int, hidden: int, rng: np.random.Generator) -> CellParams:
    if kind == "gru":
        W = _glorot(rng, in_dim, 2 * hidden)
        U = _glorot(rng, hidden, 2 * hidden)
        b = ad.parameter(np.zeros((1, 2 * hidden)))
        Wc = _glorot(rng, in_dim, hidden)
        Uc = _glorot(rng, hidden, hidden)
        bc = ad.parameter(np.zeros((1, hidden)))
        return CellParams(kind, hidden, W, U, b, Wc, Uc, bc)
    gates = _gate_count(kind)
    W = _glorot(rng, in_dim, gates * hidden)
    U = _glorot(rng, hidden, gates * hidden)
    bias = np.zeros((1, gates * hidden))
    if kind == "lstm":
        bias[0, hidden : 2 * hidden] = 1.0  # forget gate opens at start
    return CellParams(kind, hidden, W, U, ad.parameter(bias))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return ad.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def initial_state(params: CellParams) -> tuple[Tensor, ...]:
    h0 = Tensor(np.zeros((1, params.hidden)))
    if params.kind == "lstm":
        return (h0, Tensor(np.zeros((1, params.hidden))))
    return (h0,)


def cell_step(
    kind: str, x: Tensor, state: tuple[Tensor, ...], params: CellParams
) -> tuple[Tensor, tuple[Tensor, ...]]:
    """One recurrent step; returns (output, new state)."""
    h = state[0]
    n = params.hidden
    if x.shape[1] != params.W.shape[0]:
        raise ShapeError(f"cell input dim {x.shape[1]} != weight dim {params.W.shape[0]}")
    if kind == "simple":
        new_h = ad.tanh(x @ params.W + h @ params.U + params.b)
        return new_h, (new_h,)
    if kind == "lstm":
        c = state[1]
        z = x @ params.W + h @ params.U + params.b
        i = ad.sigmoid(z[:, 0:n])
        f = ad.sigmoid(z[:, n : 2 * n])
        o = ad.sigmoid(z[:, 2 * n : 3 * n])
        c_hat = ad.tanh(z[:, 3 * n : 4 * n])
        new_c = f * c + i * c_hat
        new_h = o * ad.tanh(new_c)
        return new_h, (new_h, new_c)
    if kind == "gru":
        g = x @ params.W + h @ params.U + params.b
        z = ad.sigmoid(g[:, 0:n])
        r = ad.sigmoid(g[:, n : 2 * n])
        h_hat = ad.tanh(x @ params.Wc + (r * h) @ params.Uc + params.bc)
        new_h = (1.0 - z) * h + z * h_hat
        return new_h, (new_h,)
    raise ConfigError(f"unknown cell kind {kind!r}")


# -- dropout masks -----------------------------------------------------------------


class MaskStream:
    """Inverted-dropout keep masks for one site of one sequence pass.

    In variational mode a single mask is drawn lazily and reused at
    every time step; otherwise each request draws a fresh mask.
    """

    def __init__(self, rng, p: float, shape: tuple[int, ...], variational: bool):
        self.rng = rng
        self.p = p
        self.shape = shape
        self.variational = variational
        self._held: np.ndarray | None = None

    def _draw(self) -> np.ndarray:
        keep = (self.rng.random(self.shape) >= self.p).astype(np.float64)
        return keep / (1.0 - self.p)

    def next(self) -> np.ndarray | None:
        if self.p <= 0.0:
            return None
        if self.variational:
            if self._held is None:
                self._held = self._draw()
            return self._held
        return self._draw()


def _apply_mask(t: Tensor, mask: np.ndarray | None) -> Tensor:
    return t if mask is None else t * Tensor(mask)


# -- layers ------------------------------------------------------------------------


def embed_sentence(
    word_ids: Sequence[int],
    table: Tensor,
    word_dropout: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Look up word vectors; during training, independently zero each
    row with the word-dropout probability (kept rows are rescaled)."""
    rows = table[np.asarray(word_ids, dtype=np.intp)]
    if training and word_dropout > 0.0:
        draws = rng.random(len(word_ids))
        keep = (draws >= word_dropout).astype(np.float64)
        if word_dropout < 1.0:
            keep = keep / (1.0 - word_dropout)
        rows = rows * Tensor(keep.reshape(-1, 1))
    return rows


def char_features(
    char_ids: Sequence[int],
    table: Tensor,
    fwd: CellParams,
    bwd: CellParams,
) -> Tensor:
    """Concatenated final forward/backward LSTM states over a word's
    characters, shape (1, 2*hidden). Empty words yield zeros."""
    if len(char_ids) == 0:
        return Tensor(np.zeros((1, 2 * fwd.hidden)))
    rows = table[np.asarray(char_ids, dtype=np.intp)]
    T = rows.shape[0]
    state = initial_state(fwd)
    for t in range(T):
        out_f, state = cell_step(fwd.kind, rows[t : t + 1, :], state, fwd)
    state = initial_state(bwd)
    for t in reversed(range(T)):
        out_b, state = cell_step(bwd.kind, rows[t : t + 1, :], state, bwd)
    return ad.concat([out_f, out_b], axis=1)


def bidirectional_layer(
    inputs: Tensor,
    fwd: CellParams,
    bwd: CellParams,
    dropout: DropoutConfig,
    training: bool,
    rng: np.random.Generator | None = None,
    mask_recorder: dict | None = None,
) -> Tensor:
    """Run both directions over (T, k) inputs and concatenate per step
    into (T, 2*hidden). RNN input/state/output dropout applies inside;
    variational mode reuses one mask per sequence and direction."""
    T = inputs.shape[0]
    outs_f = _run_direction(inputs, fwd, range(T), dropout, training, rng, mask_recorder, "fwd")
    outs_b = _run_direction(
        inputs, bwd, reversed(range(T)), dropout, training, rng, mask_recorder, "bwd"
    )
    rows = [ad.concat([outs_f[t], outs_b[t]], axis=1) for t in range(T)]
    return ad.concat(rows, axis=0)


def _run_direction(inputs, cell, order, dropout, training, rng, recorder, tag):
    T = inputs.shape[0]
    k = inputs.shape[1]
    active = training
    input_masks = MaskStream(rng, dropout.rnn_input if active else 0.0, (1, k), dropout.variational)
    state_masks = MaskStream(
        rng, dropout.rnn_state if active else 0.0, (1, cell.hidden), dropout.variational
    )
    output_masks = MaskStream(
        rng, dropout.rnn_output if active else 0.0, (1, cell.hidden), dropout.variational
    )
    outs: list[Tensor | None] = [None] * T
    state = initial_state(cell)
    for t in order:
        x = _apply_mask(inputs[t : t + 1, :], _record(recorder, tag, "input", t, input_masks))
        h_prev = _apply_mask(state[0], _record(recorder, tag, "state", t, state_masks))
        out, state = cell_step(cell.kind, x, (h_prev, *state[1:]), cell)
        outs[t] = _apply_mask(out, _record(recorder, tag, "output", t, output_masks))
    return outs


def _record(recorder, tag, site, t, stream: MaskStream):
    mask = stream.next()
    if recorder is not None and mask is not None:
        recorder.setdefault((tag, site), {})[t] = mask
    return mask


def shared_stack_forward(
    embedded: Tensor,
    layers: Sequence[tuple[CellParams, CellParams]],
    use_shortcuts: bool,
    dropout: DropoutConfig,
    training: bool,
    rng: np.random.Generator | None = None,
) -> list[Tensor]:
    """All shared layer outputs, bottom to top, so any task can
    terminate anywhere. With shortcuts, each layer above the first sees
    the word representations concatenated onto its input."""
    outputs: list[Tensor] = []
    current = embedded
    for i, (fwd, bwd) in enumerate(layers):
        if i > 0 and use_shortcuts:
            current = ad.concat([current, embedded], axis=1)
        current = bidirectional_layer(current, fwd, bwd, dropout, training, rng)
        outputs.append(current)
    return outputs


@dataclass
class TaskParams:
    spec: TaskSpec
    private: list[Tensor]
    proj_W: Tensor
    proj_b: Tensor
    transitions: Tensor | None = None
    begin: Tensor | None = None
    end: Tensor | None = None


def task_head_forward(
    layer_outputs: Sequence[Tensor],
    task: TaskParams,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Per-token logits for one task: termination layer output through
    the private layers and the affine projection; task dropout is
    applied to the projection output, before the classifier."""
    x = layer_outputs[task.spec.termination_layer - 1]
    for spec, weight in zip(task.spec.private_layers, task.private):
        x = ACTIVATIONS[spec.activation](x @ weight)
    logits = x @ task.proj_W + task.proj_b
    if training and task.spec.dropout > 0.0:
        keep = (rng.random(logits.shape) >= task.spec.dropout).astype(np.float64)
        logits = logits * Tensor(keep / (1.0 - task.spec.dropout))
    return logits


def softmax_nll(logits: Tensor, gold: Sequence[int]) -> Tensor:
    """Mean over tokens of the negative log softmax probability."""
    gold = np.asarray(gold, dtype=np.intp)
    if gold.size != logits.shape[0]:
        raise ShapeError(f"{gold.size} gold labels for {logits.shape[0]} tokens")
    log_sm = logits - ad.logsumexp(logits, axis=1, keepdims=True)
    picked = log_sm[np.arange(gold.size), gold]
    return -picked.mean()


# -- the assembled model -------------------------------------------------------------


class Model:
    """All parameters plus the vocabulary and configuration.

    Parameters live in a name -> Tensor registry whose insertion order
    is also the initialization draw order and the checkpoint payload
    order.
    """

    def __init__(
        self,
        config: NetworkConfig,
        vocab: Vocabulary,
        rng: np.random.Generator,
        word_vectors: np.ndarray | None = None,
    ):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.params: dict[str, Tensor] = {}
        self._cells: list[tuple[CellParams, CellParams]] = []
        self._char_cells: tuple[CellParams, CellParams] | None = None
        self._tasks: dict[str, TaskParams] = {}
        self._build(rng, word_vectors)

    # registry helpers

    def _register(self, name: str, tensor: Tensor) -> Tensor:
        tensor.op = name
        self.params[name] = tensor
        return tensor

    def _register_cell(self, prefix: str, cell: CellParams) -> CellParams:
        for suffix, tensor in cell.tensors():
            self._register(f"{prefix}/{suffix}", tensor)
        return cell

    def _build(self, rng: np.random.Generator, word_vectors: np.ndarray | None) -> None:
        config = self.config
        n_words = self.vocab.word_count
        if word_vectors is not None:
            if word_vectors.shape != (n_words, config.word_dim):
                raise ShapeError(
                    f"word matrix {word_vectors.shape} does not match vocabulary "
                    f"({n_words} x {config.word_dim})"
                )
            table = word_vectors.astype(np.float64).copy()
            table[UNK_INDEX] = rng.uniform(-0.05, 0.05, size=config.word_dim)
            table[PAD_INDEX] = 0.0
        else:
            table = rng.uniform(-0.05, 0.05, size=(n_words, config.word_dim))
            table[PAD_INDEX] = 0.0
        self._register(
            "embed/word", ad.parameter(table) if config.fine_tune_embeddings else Tensor(table)
        )

        total_dim = config.word_dim
        if config.char.enabled:
            n_chars = len(self.vocab.char_index)
            char_table = rng.uniform(-0.05, 0.05, size=(n_chars, config.char.embedding_dim))
            char_table[PAD_INDEX] = 0.0
            self._register("embed/char", ad.parameter(char_table))
            fwd = init_cell("lstm", config.char.embedding_dim, config.char.hidden, rng)
            bwd = init_cell("lstm", config.char.embedding_dim, config.char.hidden, rng)
            self._char_cells = (
                self._register_cell("char_lstm/fwd", fwd),
                self._register_cell("char_lstm/bwd", bwd),
            )
            total_dim += 2 * config.char.hidden

        in_dim = total_dim
        for i, hidden in enumerate(config.shared_layers, start=1):
            if i > 1:
                in_dim = 2 * config.shared_layers[i - 2]
                if config.use_shortcuts:
                    in_dim += total_dim
            fwd = init_cell(config.cell, in_dim, hidden, rng)
            bwd = init_cell(config.cell, in_dim, hidden, rng)
            self._cells.append(
                (
                    self._register_cell(f"shared/{i}/fwd", fwd),
                    self._register_cell(f"shared/{i}/bwd", bwd),
                )
            )

        for task in config.tasks:
            width = 2 * config.shared_layers[task.termination_layer - 1]
            private = []
            for j, layer in enumerate(task.private_layers, start=1):
                weight = _glorot(rng, width, layer.units)
                private.append(self._register(f"task/{task.name}/private/{j}/W", weight))
                width = layer.units
            n_labels = len(task.labels)
            proj_W = self._register(f"task/{task.name}/proj/W", _glorot(rng, width, n_labels))
            proj_b = self._register(
                f"task/{task.name}/proj/b", ad.parameter(np.zeros((1, n_labels)))
            )
            params = TaskParams(spec=task, private=private, proj_W=proj_W, proj_b=proj_b)
            if task.head == "crf":
                params.transitions = self._register(
                    f"task/{task.name}/crf/transitions",
                    ad.parameter(np.zeros((n_labels, n_labels))),
                )
                params.begin = self._register(
                    f"task/{task.name}/crf/begin", ad.parameter(np.zeros(n_labels))
                )
                params.end = self._register(
                    f"task/{task.name}/crf/end", ad.parameter(np.zeros(n_labels))
                )
            self._tasks[task.name] = params

    # -- encoding ------------------------------------------------------------------

    def encode_sentence(self, sentence: Sentence) -> tuple[list[int], list[list[int]]]:
        word_ids = [self.vocab.lookup_word(tok.surface) for tok in sentence]
        char_idss = [
            [self.vocab.lookup_char(ch) for ch in tok.surface] for tok in sentence
        ]
        return word_ids, char_idss

    def gold_ids(self, task_name: str, sentence: Sentence) -> list[int]:
        index = self.vocab.label_index[task_name]
        return [index[tok.labels[task_name]] for tok in sentence]

    # -- forward -------------------------------------------------------------------

    def embedded(self, word_ids, char_idss, training: bool, rng=None) -> Tensor:
        emb = embed_sentence(
            word_ids, self.params["embed/word"], self.config.dropout.word, training, rng
        )
        if self.config.char.enabled:
            fwd, bwd = self._char_cells
            feats = [
                char_features(ids, self.params["embed/char"], fwd, bwd) for ids in char_idss
            ]
            emb = ad.concat([emb, ad.concat(feats, axis=0)], axis=1)
        return emb

    def forward_logits(self, task_name: str, word_ids, char_idss, training: bool, rng=None):
        emb = self.embedded(word_ids, char_idss, training, rng)
        outputs = shared_stack_forward(
            emb, self._cells, self.config.use_shortcuts, self.config.dropout, training, rng
        )
        return task_head_forward(outputs, self._tasks[task_name], training, rng)

    def sentence_loss(self, task_name: str, word_ids, char_idss, gold, training=True, rng=None):
        logits = self.forward_logits(task_name, word_ids, char_idss, training, rng)
        task = self._tasks[task_name]
        if task.spec.head == "crf":
            return crf.crf_nll(logits, task.transitions, task.begin, task.end, gold)
        return softmax_nll(logits, gold)

    def predict_ids(self, task_name: str, word_ids, char_idss) -> list[int]:
        with ad.no_grad():
            logits = self.forward_logits(task_name, word_ids, char_idss, training=False)
        task = self._tasks[task_name]
        if task.spec.head == "crf":
            return crf.crf_viterbi(
                logits.data, task.transitions.data, task.begin.data, task.end.data
            )
        return [int(i) for i in np.argmax(logits.data, axis=1)]

    def predict_labels(self, task_name: str, sentence: Sentence) -> list[str]:
        word_ids, char_idss = self.encode_sentence(sentence)
        ids = self.predict_ids(task_name, word_ids, char_idss)
        labels = self.vocab.labels_of(task_name)
        return [labels[i] for i in ids]

    # -- parameter bookkeeping --------------------------------------------------------

    def trainable(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.params.items() if t.requires_grad}

    def task_param_names(self, task_name: str) -> list[str]:
        """Parameters a batch of this task reaches: everything shared
        plus the task's own head, in registry order."""
        own_prefix = f"task/{task_name}/"
        names = []
        for name, tensor in self.params.items():
            if not tensor.requires_grad:
                continue
            if name.startswith("task/") and not name.startswith(own_prefix):
                continue
            names.append(name)
        return names

    def zero_grads(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None
