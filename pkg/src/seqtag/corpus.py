"""CoNLL corpus handling: parsing, serialization, vocabularies, caching.

The input format is column-based text. Each non-blank line holds one
token; columns are separated by tabs or spaces. Blank lines delimit
sentences (for document-level tasks a blank-line block is one document).
Multiple consecutive blank lines collapse to a single boundary.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping

from seqtag.exceptions import DataError

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

_CACHE_MAGIC = b"SQTC"
_CACHE_VERSION = 1


class ConllParseError(DataError):
    pass


@dataclass(frozen=True)
class Token:
    surface: str
    labels: Mapping[str, str]


Sentence = tuple[Token, ...]


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable collection of sentences."""

    sentences: tuple[Sentence, ...]
    tasks: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)

    def label_counts(self, task: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for sentence in self.sentences:
            for token in sentence:
                label = token.labels[task]
                counts[label] = counts.get(label, 0) + 1
        return counts

    def surfaces(self) -> set[str]:
        return {token.surface for sentence in self.sentences for token in sentence}


def parse_conll(source: str | bytes | IO, token_col: int, label_cols: Mapping[str, int]) -> Corpus:
    """Parse CoNLL text into a Corpus.

    ``label_cols`` maps task names to column indices; pass an empty
    mapping for unlabeled input. A line with fewer columns than the
    maximum declared index is a parse error reported with its line
    number. An empty input yields an empty corpus.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    needed = max([token_col, *label_cols.values()]) + 1 if label_cols else token_col + 1
    tasks = tuple(label_cols.keys())

    sentences: list[Sentence] = []
    current: list[Token] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            if current:
                sentences.append(tuple(current))
                current = []
            continue
        cols = line.split()
        if len(cols) < needed:
            raise ConllParseError(
                f"line {lineno}: expected at least {needed} columns, found {len(cols)}"
            )
        labels = {task: cols[idx] for task, idx in label_cols.items()}
        current.append(Token(surface=cols[token_col], labels=labels))
    if current:
        sentences.append(tuple(current))
    return Corpus(sentences=tuple(sentences), tasks=tasks)


def parse_conll_file(path: str | Path, token_col: int, label_cols: Mapping[str, int]) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    return parse_conll(path.read_text(encoding="utf-8"), token_col, label_cols)


def corpus_to_conll(corpus: Corpus, tasks: Iterable[str] | None = None) -> str:
    """Render a corpus as normalized tab-separated CoNLL text."""
    tasks = tuple(tasks) if tasks is not None else corpus.tasks
    out = io.StringIO()
    for i, sentence in enumerate(corpus.sentences):
        if i:
            out.write("\n")
        for token in sentence:
            cells = [token.surface, *(token.labels[t] for t in tasks)]
            out.write("\t".join(cells))
            out.write("\n")
    return out.getvalue()


# -- vocabulary ----------------------------------------------------------------


@dataclass
class Vocabulary:
    """Dense 0-based index maps for words, characters, and per-task labels.

    Index 0 is the padding entry and index 1 the unknown entry in both
    the word and character maps; those stay stable across save/load.
    """

    word_index: dict[str, int] = field(default_factory=dict)
    char_index: dict[str, int] = field(default_factory=dict)
    label_index: dict[str, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        for index in (self.word_index, self.char_index):
            if not index:
                index[PAD_TOKEN] = PAD_INDEX
                index[UNK_TOKEN] = UNK_INDEX

    @property
    def word_count(self) -> int:
        return len(self.word_index)

    def add_word(self, word: str) -> int:
        return self.word_index.setdefault(word, len(self.word_index))

    def add_char(self, char: str) -> int:
        return self.char_index.setdefault(char, len(self.char_index))

    def lookup_word(self, surface: str) -> int:
        """Exact match, then lowercase match, then the unknown index."""
        idx = self.word_index.get(surface)
        if idx is not None:
            return idx
        idx = self.word_index.get(surface.lower())
        if idx is not None:
            return idx
        return UNK_INDEX

    def lookup_char(self, char: str) -> int:
        return self.char_index.get(char, UNK_INDEX)

    def labels_of(self, task: str) -> list[str]:
        index = self.label_index[task]
        ordered = sorted(index.items(), key=lambda kv: kv[1])
        return [label for label, _ in ordered]

    def to_json(self) -> dict:
        return {
            "word_index": self.word_index,
            "char_index": self.char_index,
            "label_index": self.label_index,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Vocabulary":
        vocab = cls(
            word_index=dict(payload["word_index"]),
            char_index=dict(payload["char_index"]),
            label_index={t: dict(m) for t, m in payload["label_index"].items()},
        )
        for index in (vocab.word_index, vocab.char_index):
            if index.get(PAD_TOKEN) != PAD_INDEX or index.get(UNK_TOKEN) != UNK_INDEX:
                raise DataError("vocabulary is missing stable pad/unk entries")
        return vocab


def build_label_index(corpora: Iterable[Corpus], task: str) -> dict[str, int]:
    """Label -> index for a task, sorted for stable, seed-free ordering."""
    labels: set[str] = set()
    for corpus in corpora:
        labels.update(corpus.label_counts(task).keys())
    return {label: i for i, label in enumerate(sorted(labels))}


def build_char_index(corpora: Iterable[Corpus]) -> dict[str, int]:
    chars: set[str] = set()
    for corpus in corpora:
        for surface in corpus.surfaces():
            chars.update(surface)
    index = {PAD_TOKEN: PAD_INDEX, UNK_TOKEN: UNK_INDEX}
    for char in sorted(chars):
        index[char] = len(index)
    return index


# -- binary cache ---------------------------------------------------------------
#
# Layout: magic "SQTC", u32 version, then length-prefixed sections
# (u64 byte length + payload): 1) JSON header with source fingerprint,
# column declaration, and the string tables, 2) packed sentence data:
# per sentence u32 token count, then per token one u32 surface id and
# one u32 label id per task (task order from the header).


def _file_fingerprint(path: Path) -> dict:
    data = path.read_bytes()
    return {"size": len(data), "sha256": hashlib.sha256(data).hexdigest()}


def _write_section(out: IO[bytes], payload: bytes) -> None:
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def _read_section(buf: IO[bytes]) -> bytes:
    header = buf.read(8)
    if len(header) != 8:
        raise DataError("corpus cache truncated")
    (length,) = struct.unpack("<Q", header)
    payload = buf.read(length)
    if len(payload) != length:
        raise DataError("corpus cache truncated")
    return payload


def write_corpus_cache(path: str | Path, corpus: Corpus, source_meta: dict) -> None:
    surfaces: dict[str, int] = {}
    label_tables: dict[str, dict[str, int]] = {task: {} for task in corpus.tasks}
    packed = io.BytesIO()
    for sentence in corpus.sentences:
        packed.write(struct.pack("<I", len(sentence)))
        for token in sentence:
            sid = surfaces.setdefault(token.surface, len(surfaces))
            packed.write(struct.pack("<I", sid))
            for task in corpus.tasks:
                table = label_tables[task]
                lid = table.setdefault(token.labels[task], len(table))
                packed.write(struct.pack("<I", lid))

    header = {
        "source": source_meta,
        "tasks": list(corpus.tasks),
        "surfaces": list(surfaces.keys()),
        "labels": {task: list(table.keys()) for task, table in label_tables.items()},
        "sentence_count": len(corpus.sentences),
    }
    with open(path, "wb") as out:
        out.write(_CACHE_MAGIC)
        out.write(struct.pack("<I", _CACHE_VERSION))
        _write_section(out, json.dumps(header).encode("utf-8"))
        _write_section(out, packed.getvalue())


def read_corpus_cache(path: str | Path) -> tuple[Corpus, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    buf = io.BytesIO(blob)
    if buf.read(4) != _CACHE_MAGIC:
        raise DataError(f"not a corpus cache file: {path}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != _CACHE_VERSION:
        raise DataError(f"unsupported corpus cache version {version}")
    header = json.loads(_read_section(buf).decode("utf-8"))
    packed = io.BytesIO(_read_section(buf))

    tasks = tuple(header["tasks"])
    surfaces = header["surfaces"]
    labels = {task: header["labels"][task] for task in tasks}
    sentences = []
    for _ in range(header["sentence_count"]):
        (n_tokens,) = struct.unpack("<I", packed.read(4))
        tokens = []
        for _ in range(n_tokens):
            (sid,) = struct.unpack("<I", packed.read(4))
            token_labels = {}
            for task in tasks:
                (lid,) = struct.unpack("<I", packed.read(4))
                token_labels[task] = labels[task][lid]
            tokens.append(Token(surface=surfaces[sid], labels=token_labels))
        sentences.append(tuple(tokens))
    return Corpus(sentences=tuple(sentences), tasks=tasks), header["source"]


def load_corpus_cached(
    path: str | Path,
    token_col: int,
    label_cols: Mapping[str, int],
    cache_dir: str | Path | None = None,
) -> Corpus:
    """Parse a CoNLL file, going through a binary cache when possible.

    The cache is keyed by file size and content hash plus the column
    declaration; any change invalidates it.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    if cache_dir is None:
        return parse_conll_file(path, token_col, label_cols)

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache_path = cache_dir / (path.name + ".cache")
    meta = _file_fingerprint(path)
    meta["token_col"] = token_col
    meta["label_cols"] = {task: idx for task, idx in label_cols.items()}

    if cache_path.exists():
        try:
            corpus, cached_meta = read_corpus_cache(cache_path)
            if cached_meta == meta:
                return corpus
        except DataError:
            pass
    corpus = parse_conll_file(path, token_col, label_cols)
    write_corpus_cache(cache_path, corpus, meta)
    return corpus
