"""Shared fixtures: synthetic corpora and small model builders."""

import numpy as np
import pytest

from seqtag.corpus import Corpus, Token, Vocabulary, build_char_index, build_label_index
from seqtag.network import CharConfig, DropoutConfig, Model, NetworkConfig, TaskSpec

# word -> BIO class; labels are a pure function of the surface so a
# small model can reach perfect training accuracy
ENTITY_WORDS = {
    "alpha": "X",
    "beta": "X",
    "gamma": "Y",
    "delta": "Y",
    "omega": "Z",
}
FILLER_WORDS = ["the", "a", "on", "it", "and"]


def synthetic_bio_corpus(n_sentences=50, seed=13, task="tag"):
    """Sentences of filler words and 1-3 token entity segments."""
    rng = np.random.default_rng(seed)
    entities = list(ENTITY_WORDS.keys())
    sentences = []
    for _ in range(n_sentences):
        tokens = []
        length = int(rng.integers(4, 9))
        while len(tokens) < length:
            if rng.random() < 0.45:
                word = entities[rng.integers(0, len(entities))]
                run = int(rng.integers(1, 3))
                cls = ENTITY_WORDS[word]
                for i in range(run):
                    prefix = "B" if i == 0 else "I"
                    tokens.append(Token(word, {task: f"{prefix}-{cls}"}))
            else:
                word = FILLER_WORDS[rng.integers(0, len(FILLER_WORDS))]
                tokens.append(Token(word, {task: "O"}))
        sentences.append(tuple(tokens[:length]) if len(tokens) > length else tuple(tokens))
    return Corpus(sentences=tuple(sentences), tasks=(task,))


def derive_acs_corpus(corpus, source_task="tag", target_task="seg"):
    """Collapse classes: B-*/I-* become B-Arg/I-Arg."""
    sentences = []
    for sentence in corpus:
        tokens = []
        for tok in sentence:
            label = tok.labels[source_task]
            if label == "O":
                derived = "O"
            else:
                derived = f"{label[0]}-Arg"
            tokens.append(Token(tok.surface, {target_task: derived}))
        sentences.append(tuple(tokens))
    return Corpus(sentences=tuple(sentences), tasks=(target_task,))


def vocab_for(corpora, tasks):
    vocab = Vocabulary()
    for corpus in corpora:
        for surface in sorted(corpus.surfaces()):
            vocab.add_word(surface)
    vocab.char_index = build_char_index(corpora)
    for task, task_corpora in tasks.items():
        vocab.label_index[task] = build_label_index(task_corpora, task)
    return vocab


@pytest.fixture
def bio_corpus():
    return synthetic_bio_corpus()


def small_model(corpus, task="tag", seed=3, head="softmax", **config_kw):
    vocab = vocab_for([corpus], {task: [corpus]})
    defaults = dict(
        cell="lstm",
        shared_layers=[8],
        char=CharConfig(enabled=False),
        dropout=DropoutConfig(),
        tasks=[TaskSpec(name=task, labels=vocab.labels_of(task), head=head)],
        word_dim=8,
    )
    defaults.update(config_kw)
    config = NetworkConfig(**defaults)
    rng = np.random.default_rng(seed)
    return Model(config, vocab, rng), rng
