"""Label-distribution diagnostics: entropy and kurtosis.

Both statistics describe a task's label histogram and help judge its
suitability as an auxiliary task: fairly high entropy and a kurtosis
below 3 (the value of a normal distribution) are the favorable signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from seqtag.exceptions import DataError


class StatsError(DataError):
    pass


@dataclass
class LabelDistribution:
    counts: dict[str, int]

    def __post_init__(self):
        for label, count in self.counts.items():
            if count < 0:
                raise StatsError(f"negative count for label {label!r}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def frequencies(self) -> dict[str, float]:
        total = self.total
        if total == 0:
            raise StatsError("no observations: all counts are zero")
        return {label: count / total for label, count in self.counts.items()}

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "LabelDistribution":
        return cls(counts=dict(counts))


def label_entropy(dist: LabelDistribution) -> float:
    """Shannon entropy of the label distribution, in bits.

    Zero-probability labels contribute nothing.
    """
    freqs = dist.frequencies()
    return -sum(p * math.log2(p) for p in freqs.values() if p > 0.0) + 0.0


def kurtosis(samples: Sequence[float]) -> float:
    """g2 = m4 / m2^2 with biased (1/n) moments about the mean."""
    n = len(samples)
    if n < 2:
        raise StatsError("kurtosis needs at least two samples")
    mean = sum(samples) / n
    m2 = sum((x - mean) ** 2 for x in samples) / n
    m4 = sum((x - mean) ** 4 for x in samples) / n
    if m2 == 0.0:
        raise StatsError("undefined kurtosis: second moment is zero")
    return m4 / (m2 * m2)


def label_kurtosis(dist: LabelDistribution) -> float:
    """Kurtosis of the vector of per-label relative frequencies.

    One sample per label in the inventory, so the statistic is a
    function of the histogram alone.
    """
    freqs = dist.frequencies()
    if len(freqs) < 2:
        raise StatsError("kurtosis needs at least two labels")
    return kurtosis(list(freqs.values()))
