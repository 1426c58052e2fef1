"""Count-based subsampling weights for the positive and negative loss terms.

Each training example ``(x, y)`` (a query and its gold answer) receives a
weight ``a`` on its positive term and ``b`` on its negative term:

* ``base``: a = b from the approximate triple frequency #(e_i,r_k) + #(r_k,e_j)
* ``freq``: a from the triple frequency, b from the query frequency #x
* ``uniq``: a = b from the query frequency
* ``none``: a = b = 1

A count ``c`` maps to ``c**-alpha * |D| / sum(c'**-alpha over D)``, so every
weight averages to exactly 1 over the training examples.
"""

from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from .kg_data import Direction, FrequencyTable, Query


class SubsamplingAssumption(str, enum.Enum):
    NONE = "none"
    BASE = "base"
    FREQ = "freq"
    UNIQ = "uniq"


class SubsamplingWeights(NamedTuple):
    a: float
    b: float


# which count feeds a and b under each assumption
_KEYS = {
    SubsamplingAssumption.BASE: ("triple", "triple"),
    SubsamplingAssumption.FREQ: ("triple", "query"),
    SubsamplingAssumption.UNIQ: ("query", "query"),
}


def normalized_weights(counts, alpha: float) -> np.ndarray:
    """``counts**-alpha`` rescaled to mean 1 over the given population."""
    w = np.power(np.asarray(counts, dtype=float), -alpha)
    return w * (len(w) / w.sum())


def subsampling_weights(freq: FrequencyTable, query: Query, answer: int,
                        assumption, alpha: float) -> SubsamplingWeights:
    assumption = SubsamplingAssumption(assumption)
    if assumption is SubsamplingAssumption.NONE or alpha == 0:
        return SubsamplingWeights(1.0, 1.0)
    triple = query.complete(answer)
    counts = {"triple": freq.triple_freq(triple), "query": freq.query_freq(query)}
    if min(counts.values()) < 1 or counts["triple"] < 2:
        raise ValueError(f"{query} -> {answer} is not a training example")
    out = []
    for key in _KEYS[assumption]:
        total, n = freq.normalizer(key, alpha)
        out.append(counts[key] ** -alpha * n / total)
    return SubsamplingWeights(*out)


def example_weights(freq: FrequencyTable, anchors, relations, directions, answers,
                    assumption, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`subsampling_weights` over arrays of examples."""
    assumption = SubsamplingAssumption(assumption)
    n = len(anchors)
    if assumption is SubsamplingAssumption.NONE or alpha == 0:
        return np.ones(n), np.ones(n)
    anchors = np.asarray(anchors)
    answers = np.asarray(answers)
    tail = np.asarray(directions) == Direction.TAIL
    heads = np.where(tail, anchors, answers)
    tails = np.where(tail, answers, anchors)
    counts = {
        "triple": freq.triple_freqs(np.stack([heads, np.asarray(relations), tails], axis=1)),
        "query": freq.query_freqs(anchors, relations, directions),
    }
    if (counts["query"] < 1).any():
        raise ValueError("subsampling weights requested for a query unseen in training")
    out = []
    for key in _KEYS[assumption]:
        total, size = freq.normalizer(key, alpha)
        out.append(np.power(counts[key].astype(float), -alpha) * (size / total))
    return out[0], out[1]
