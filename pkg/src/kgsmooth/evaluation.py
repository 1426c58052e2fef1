"""Link-prediction ranking and metrics.

Ranks are pessimistic: every candidate scoring at least as high as the gold
answer (other than the gold itself) is placed above it. In the filtered
setting, other known-true answers of the query are removed from the
candidate list first.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg_data import SPLITS, Dataset, Direction, Query
from .scoring import ModelParams, score_candidates


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int

    @classmethod
    def from_ranks(cls, ranks) -> "Metrics":
        ranks = np.asarray(ranks, dtype=float)
        if ranks.size == 0:
            raise ValueError("no ranks to summarize")
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            n_queries=int(ranks.size),
        )


class FilterIndex:
    """Known-true answers per query over train, valid and test."""

    def __init__(self, answers: dict[tuple[int, int, int], set[int]]):
        self.answers = answers

    @classmethod
    def from_dataset(cls, dataset: Dataset, splits=SPLITS) -> "FilterIndex":
        answers: dict[tuple[int, int, int], set[int]] = {}
        for name in splits:
            for h, r, t in dataset.split(name).tolist():
                answers.setdefault((h, r, Direction.TAIL), set()).add(t)
                answers.setdefault((t, r, Direction.HEAD), set()).add(h)
        return cls(answers)

    def known(self, query: Query) -> set[int]:
        return self.answers.get((int(query[0]), int(query[1]), int(query[2])), set())


def _ranks_from_scores(scores: np.ndarray, golds: np.ndarray, excluded=None) -> np.ndarray:
    gold_scores = scores[np.arange(len(golds)), golds][:, None]
    above = scores >= gold_scores
    if excluded is not None:
        above &= ~excluded
    # the gold candidate itself is always counted once
    above[np.arange(len(golds)), golds] = True
    return above.sum(axis=1)


def _exclusion_mask(filt: FilterIndex, anchors, relations, directions, golds, n_entities):
    mask = np.zeros((len(golds), n_entities), dtype=bool)
    for row, key in enumerate(zip(anchors.tolist(), relations.tolist(), directions.tolist())):
        known = filt.answers.get(key)
        if known:
            mask[row, list(known)] = True
    mask[np.arange(len(golds)), golds] = False
    return mask


def rank_queries(params: ModelParams, anchors, relations, directions, golds,
                 filter_index: FilterIndex | None = None) -> np.ndarray:
    anchors, relations, directions, golds = (
        np.asarray(x, dtype=np.int64) for x in (anchors, relations, directions, golds))
    scores = score_candidates(params, anchors, relations, directions)
    excluded = None
    if filter_index is not None:
        excluded = _exclusion_mask(filter_index, anchors, relations, directions, golds,
                                   params.n_entities)
    return _ranks_from_scores(scores, golds, excluded)


def rank(params: ModelParams, query: Query, gold: int,
         filter_index: FilterIndex | None = None) -> int:
    """Pessimistic rank of ``gold`` among all entities as answers to ``query``."""
    return int(rank_queries(params, [query[0]], [query[1]], [int(query[2])], [gold],
                            filter_index)[0])


def split_queries(triples: np.ndarray):
    """Tail queries followed by head queries: ``(anchors, relations, directions, golds)``."""
    n = len(triples)
    anchors = np.concatenate([triples[:, 0], triples[:, 2]])
    relations = np.concatenate([triples[:, 1], triples[:, 1]])
    directions = np.repeat([Direction.TAIL, Direction.HEAD], n).astype(np.int64)
    golds = np.concatenate([triples[:, 2], triples[:, 0]])
    return anchors, relations, directions, golds


def _chunks(n_queries: int, n_entities: int, dim: int, budget: int = 4_000_000):
    size = max(1, budget // max(1, n_entities * dim))
    return [slice(i, min(i + size, n_queries)) for i in range(0, n_queries, size)]


def evaluate(params: ModelParams, dataset: Dataset, split: str = "valid",
             filtered: bool = True, threads: int = 1,
             filter_index: FilterIndex | None = None) -> Metrics:
    """MRR and Hits@{1,3,10} over both queries of every triple in ``split``."""
    triples = dataset.split(split)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    if filtered and filter_index is None:
        filter_index = FilterIndex.from_dataset(dataset)
    queries = split_queries(triples)
    chunks = _chunks(len(queries[0]), params.n_entities, params.dim)

    def run(sl):
        return rank_queries(params, *(q[sl] for q in queries),
                            filter_index if filtered else None)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(sl) for sl in chunks]
    return Metrics.from_ranks(np.concatenate(parts))


def candidate_counts(dataset: Dataset, split: str, filtered: bool = True) -> np.ndarray:
    """Number of candidates (gold included) each query of ``split`` is ranked among."""
    anchors, relations, directions, golds = split_queries(dataset.split(split))
    n = dataset.n_entities
    if not filtered:
        return np.full(len(golds), n)
    filt = FilterIndex.from_dataset(dataset)
    return np.array([n - len(filt.answers[key]) + 1
                     for key in zip(anchors.tolist(), relations.tolist(), directions.tolist())])


def random_baseline_mrr(counts) -> float:
    """Expected MRR when each gold rank is uniform over its ``n`` candidates.

    E[1/rank] = H_n / n with H_n the n-th harmonic number.
    """
    counts = np.asarray(counts, dtype=np.int64)
    harmonic = np.cumsum(1.0 / np.arange(1, counts.max() + 1))
    return float(np.mean(harmonic[counts - 1] / counts))


def predict_distribution(params: ModelParams, query: Query, max_entities: int = 1_000_000) -> np.ndarray:
    """Softmax over the scores of all entities as answers to ``query``."""
    if params.n_entities > max_entities:
        raise ValueError(f"{params.n_entities} entities exceed the guard of {max_entities}")
    s = score_candidates(params, [query[0]], [query[1]], [int(query[2])])[0]
    e = np.exp(s - s.max())
    return e / e.sum()


METRIC_COLUMNS = ["model", "loss", "assumption", "alpha", "beta", "gamma", "eta",
                  "seed", "split", "mrr", "h1", "h3", "h10"]


def metrics_row(metrics: Metrics, *, model="", loss="", assumption="", alpha="", beta="",
                gamma="", eta="", seed="", split="") -> dict:
    return dict(model=model, loss=loss, assumption=assumption, alpha=alpha, beta=beta,
                gamma=gamma, eta=eta, seed=seed, split=split, mrr=repr(metrics.mrr),
                h1=repr(metrics.hits1), h3=repr(metrics.hits3), h10=repr(metrics.hits10))


def write_metrics_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path

