"""Linear-chain CRF: sequence negative log-likelihood and Viterbi.

Scores are per-sequence normalized. A path through labels y_1..y_T
scores sum_t logits[t, y_t] + sum_t transitions[y_{t-1}, y_t]
+ begin[y_1] + end[y_T]; the partition function is computed by the
forward algorithm in log space (log-sum-exp with max subtraction), so
the loss is differentiable through the tape like any other op chain.
Only first-order dependencies are modeled.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from seqtag import autodiff as ad
from seqtag.autodiff import Tensor
from seqtag.exceptions import ShapeError


def crf_score(
    logits: Tensor, transitions: Tensor, begin: Tensor, end: Tensor, path: Sequence[int]
) -> Tensor:
    """Unnormalized score of one label path."""
    path = np.asarray(path, dtype=np.intp)
    T = logits.shape[0]
    if path.size != T:
        raise ShapeError(f"path length {path.size} != sequence length {T}")
    score = logits[np.arange(T), path].sum() + begin[int(path[0])] + end[int(path[-1])]
    if T > 1:
        score = score + transitions[path[:-1], path[1:]].sum()
    return score


def crf_log_z(logits: Tensor, transitions: Tensor, begin: Tensor, end: Tensor) -> Tensor:
    """Log partition function via the forward algorithm."""
    T, L = logits.shape
    alpha = logits[0:1, :] + begin.reshape(1, L)
    for t in range(1, T):
        # alpha[1, L] -> column of sources; transitions[src, dst]
        scores = alpha.reshape(L, 1) + transitions
        alpha = ad.logsumexp(scores, axis=0, keepdims=True) + logits[t : t + 1, :]
    return ad.logsumexp(alpha + end.reshape(1, L))


def crf_nll(
    logits: Tensor, transitions: Tensor, begin: Tensor, end: Tensor, gold: Sequence[int]
) -> Tensor:
    """Sequence negative log-likelihood: log Z - score(gold)."""
    if logits.shape[0] < 1:
        raise ShapeError("CRF needs at least one token")
    return crf_log_z(logits, transitions, begin, end) - crf_score(
        logits, transitions, begin, end, gold
    )


def crf_viterbi(
    logits: np.ndarray, transitions: np.ndarray, begin: np.ndarray, end: np.ndarray
) -> list[int]:
    """Best-scoring label path.

    Ties break toward the smallest label index at every backtrack step
    (np.argmax picks the first maximum), so decoding is deterministic.
    """
    T, L = logits.shape
    if T < 1:
        raise ShapeError("CRF needs at least one token")
    delta = logits[0] + begin
    back = np.zeros((T, L), dtype=np.intp)
    for t in range(1, T):
        scores = delta[:, None] + transitions  # [src, dst]
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(L)] + logits[t]
    delta = delta + end
    path = [int(np.argmax(delta))]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t][path[-1]]))
    path.reverse()
    return path
