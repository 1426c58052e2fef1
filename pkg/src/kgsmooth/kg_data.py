"""Loading, encoding, counting and filtering of knowledge-graph triples.

Triples are held as integer arrays of shape ``(n, 3)`` with columns
``(head, relation, tail)``. Every triple yields two completion queries:
``(head, relation, ?)`` answered by the tail and ``(?, relation, tail)``
answered by the head.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")


class ParseError(ValueError):
    """Malformed line in a triple file."""


class DataError(ValueError):
    """Structurally valid input that violates a dataset invariant."""


class Direction(enum.IntEnum):
    TAIL = 0  # (e_i, r_k, ?)
    HEAD = 1  # (?, r_k, e_j)


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Query(NamedTuple):
    anchor: int
    relation: int
    direction: Direction

    @classmethod
    def tail_query(cls, triple: Triple) -> "Query":
        return cls(triple[0], triple[1], Direction.TAIL)

    @classmethod
    def head_query(cls, triple: Triple) -> "Query":
        return cls(triple[2], triple[1], Direction.HEAD)

    def complete(self, answer: int) -> Triple:
        if self.direction == Direction.TAIL:
            return Triple(self.anchor, self.relation, answer)
        return Triple(answer, self.relation, self.anchor)


def queries_of(triple: Triple) -> tuple[Query, Query]:
    """The tail query and head query of ``triple``."""
    return Query.tail_query(triple), Query.head_query(triple)


@dataclass
class Vocab:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    entity_ids: dict[str, int] = field(default_factory=dict)
    relation_ids: dict[str, int] = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, name: str) -> int:
        idx = self.entity_ids.get(name)
        if idx is None:
            idx = self.entity_ids[name] = len(self.entities)
            self.entities.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_ids.get(name)
        if idx is None:
            idx = self.relation_ids[name] = len(self.relations)
            self.relations.append(name)
        return idx


def _as_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass
class Dataset:
    """Train/valid/test triples over one shared vocabulary.

    The vocabulary is built over the union of all splits in first-appearance
    order (train, then valid, then test), so ids are dense.
    """

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    vocab: Vocab

    @classmethod
    def from_named(
        cls,
        train: Iterable[Sequence[str]],
        valid: Iterable[Sequence[str]] = (),
        test: Iterable[Sequence[str]] = (),
    ) -> "Dataset":
        vocab = Vocab()
        encoded = []
        for split in (train, valid, test):
            rows = [
                (vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
                for h, r, t in split
            ]
            encoded.append(_as_array(rows))
        return cls(*encoded, vocab=vocab)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def named_triples(self, name: str) -> list[tuple[str, str, str]]:
        v = self.vocab
        return [
            (v.entities[h], v.relations[r], v.entities[t])
            for h, r, t in self.split(name).tolist()
        ]

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations


def _read_tsv(path: Path) -> list[tuple[str, str, str]]:
    rows = []
    seen = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            row = (fields[0], fields[1], fields[2])
            if row in seen:
                raise DataError(f"{path}:{lineno}: duplicate triple {row}")
            seen.add(row)
            rows.append(row)
    return rows


def load_triples(train_path, valid_path, test_path) -> Dataset:
    """Read three TSV files (``head<TAB>relation<TAB>tail``) into a Dataset.

    Raises
    ------
    ParseError
        A line does not have exactly three fields (message carries the line number).
    DataError
        Duplicate triple within a split, or an empty training split.
    """
    train = _read_tsv(Path(train_path))
    if not train:
        raise DataError(f"{train_path}: empty training split")
    valid = _read_tsv(Path(valid_path))
    test = _read_tsv(Path(test_path))
    return Dataset.from_named(train, valid, test)


def load_data_dir(data_dir) -> Dataset:
    d = Path(data_dir)
    return load_triples(d / "train.txt", d / "valid.txt", d / "test.txt")


def write_triples(dataset: Dataset, out_dir) -> list[Path]:
    """Write the three splits as ``train.txt``, ``valid.txt``, ``test.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in SPLITS:
        path = out / f"{name}.txt"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for h, r, t in dataset.named_triples(name):
                fh.write(f"{h}\t{r}\t{t}\n")
        paths.append(path)
    return paths


def _pair_counts(a: np.ndarray, b: np.ndarray) -> dict[tuple[int, int], int]:
    keys, counts = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
    return {(int(k[0]), int(k[1])): int(c) for k, c in zip(keys, counts)}


class FrequencyTable:
    """Appearance counts of queries over the training split.

    ``headrel[(e, r)]`` is the number of training triples ``(e, r, *)`` and
    ``reltail[(r, e)]`` the number of training triples ``(*, r, e)``. The
    frequency of a whole triple is approximated by their sum.
    """

    def __init__(self, headrel: dict, reltail: dict, n_train: int):
        self.headrel = headrel
        self.reltail = reltail
        self.n_train = n_train
        self._norm_cache: dict[tuple[str, float], float] = {}
        self._example_freqs: tuple[np.ndarray, np.ndarray] | None = None

    def query_freq(self, query: Query) -> int:
        """Training count of ``query``; 0 if the query never occurs in train."""
        anchor, rel, direction = query
        if direction == Direction.TAIL:
            return self.headrel.get((anchor, rel), 0)
        return self.reltail.get((rel, anchor), 0)

    def triple_freq(self, triple: Triple) -> int:
        h, r, t = triple
        return self.headrel.get((h, r), 0) + self.reltail.get((r, t), 0)

    def query_freqs(self, anchors, relations, directions) -> np.ndarray:
        out = np.empty(len(anchors), dtype=np.int64)
        for i, (e, r, d) in enumerate(zip(np.asarray(anchors).tolist(),
                                          np.asarray(relations).tolist(),
                                          np.asarray(directions).tolist())):
            out[i] = self.headrel.get((e, r), 0) if d == 0 else self.reltail.get((r, e), 0)
        return out

    def triple_freqs(self, triples: np.ndarray) -> np.ndarray:
        return np.array(
            [self.headrel.get((h, r), 0) + self.reltail.get((r, t), 0)
             for h, r, t in np.asarray(triples).tolist()],
            dtype=np.int64,
        )

    def set_training_examples(self, triple_freqs: np.ndarray, query_freqs: np.ndarray) -> None:
        """Register the per-example counts of the training example universe.

        Normalization sums are computed over these arrays and cached per
        temperature.
        """
        self._example_freqs = (np.asarray(triple_freqs), np.asarray(query_freqs))
        self._norm_cache.clear()

    def normalizer(self, key: str, alpha: float) -> tuple[float, int]:
        """Return ``(sum of count**-alpha, |D|)`` over the training examples.

        ``key`` is ``"triple"`` or ``"query"``.
        """
        if self._example_freqs is None:
            raise RuntimeError("training examples not registered")
        cache_key = (key, float(alpha))
        counts = self._example_freqs[0] if key == "triple" else self._example_freqs[1]
        if cache_key not in self._norm_cache:
            self._norm_cache[cache_key] = float(np.sum(np.power(counts.astype(float), -alpha)))
        return self._norm_cache[cache_key], len(counts)


def count_frequencies(dataset: Dataset) -> FrequencyTable:
    """Count head-relation and relation-tail occurrences in the training split.

    The returned table has the doubled (tail-query, head-query) training
    example universe registered for subsampling normalization.
    """
    train = dataset.train
    if len(train) == 0:
        raise DataError("empty training split")
    headrel = _pair_counts(train[:, 0], train[:, 1])
    reltail = _pair_counts(train[:, 1], train[:, 2])
    table = FrequencyTable(headrel, reltail, len(train))
    tf = table.triple_freqs(train)
    qf_tail = np.array([headrel[(h, r)] for h, r in train[:, :2].tolist()], dtype=np.int64)
    qf_head = np.array([reltail[(r, t)] for r, t in train[:, 1:].tolist()], dtype=np.int64)
    table.set_training_examples(np.concatenate([tf, tf]), np.concatenate([qf_tail, qf_head]))
    return table


class SparseMode(str, enum.Enum):
    HIGH = "high"
    LOW = "low"
    BOTH = "both"


def _triple_query_freqs(freq: FrequencyTable, triples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tail_q = np.array([freq.headrel.get((h, r), 0) for h, r, _ in triples.tolist()], dtype=np.int64)
    head_q = np.array([freq.reltail.get((r, t), 0) for _, r, t in triples.tolist()], dtype=np.int64)
    return tail_q, head_q


def sparse_thresholds(freq: FrequencyTable, fraction: float) -> tuple[int, int]:
    """``(high, low)`` query-frequency cut-offs for a given fraction.

    Cut-offs are taken on the sorted list of distinct query-frequency values
    seen in training; ``max(1, floor(fraction * K))`` of the K values are kept
    at each end.
    """
    values = np.unique(np.fromiter(
        list(freq.headrel.values()) + list(freq.reltail.values()), dtype=np.int64))
    n_keep = max(1, int(np.floor(fraction * len(values) + 1e-9)))
    return int(values[-n_keep]), int(values[n_keep - 1])


def extract_sparse_subset(dataset: Dataset, fraction: float, mode="both") -> Dataset:
    """Keep the triples whose queries are among the most or least frequent.

    A triple is kept in ``high`` mode if either of its two queries has a
    training frequency at or above the high cut-off, in ``low`` mode if
    either is at or below the low cut-off; ``both`` takes the union. Queries
    unseen in training count as frequency 0. The same cut-offs, computed on
    the training split, are applied to every split.
    """
    if not (0.0 < fraction <= 0.5):
        raise ValueError(f"fraction must lie in (0, 0.5], got {fraction}")
    mode = SparseMode(mode)
    freq = count_frequencies(dataset)
    high_thr, low_thr = sparse_thresholds(freq, fraction)

    subsets = []
    for name in SPLITS:
        triples = dataset.split(name)
        tail_q, head_q = _triple_query_freqs(freq, triples)
        high = (tail_q >= high_thr) | (head_q >= high_thr)
        low = (tail_q <= low_thr) | (head_q <= low_thr)
        keep = {SparseMode.HIGH: high, SparseMode.LOW: low, SparseMode.BOTH: high | low}[mode]
        subsets.append([t for t, k in zip(dataset.named_triples(name), keep) if k])
    return Dataset.from_named(*subsets)


def frequency_ranks(dataset: Dataset) -> dict[str, list[int]]:
    """Descending query and answer frequencies over the training split."""
    freq = count_frequencies(dataset)
    query = sorted(list(freq.headrel.values()) + list(freq.reltail.values()), reverse=True)
    train = dataset.train
    answer_counts = np.bincount(
        np.concatenate([train[:, 0], train[:, 2]]), minlength=dataset.n_entities)
    answer = sorted((int(c) for c in answer_counts if c > 0), reverse=True)
    return {"query": query, "answer": answer}


def export_frequency_ranks(dataset: Dataset, out_path) -> Path:
    """Write ``kind,rank,frequency`` rows (query rows first, then answer rows)."""
    ranks = frequency_ranks(dataset)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "rank", "frequency"])
        for kind in ("query", "answer"):
            for rank, f in enumerate(ranks[kind], start=1):
                writer.writerow([kind, rank, f])
    return out_path
