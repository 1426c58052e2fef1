import csv
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURE, random_kg, write_tsv
from kgsmooth.kg_data import (
    DataError, Dataset, Direction, ParseError, Query, Triple, count_frequencies,
    export_frequency_ranks, extract_sparse_subset, frequency_ranks, load_data_dir,
    load_triples, queries_of, sparse_thresholds, write_triples,
)


def ids(ds, h, r, t):
    v = ds.vocab
    return Triple(v.entity_ids[h], v.relation_ids[r], v.entity_ids[t])


def test_load_fixture(tiny_dir):
    ds = load_data_dir(tiny_dir)
    assert ds.n_entities == 4
    assert ds.n_relations == 1
    assert ds.train.shape == (3, 3)
    assert ds.named_triples("train") == FIXTURE


def test_load_keeps_file_order_and_shared_vocab(tmp_path):
    tr = write_tsv(tmp_path / "tr", [("x", "p", "y"), ("a", "q", "b")])
    va = write_tsv(tmp_path / "va", [("y", "q", "z")])
    te = write_tsv(tmp_path / "te", [("z", "p", "x")])
    ds = load_triples(tr, va, te)
    assert ds.named_triples("train") == [("x", "p", "y"), ("a", "q", "b")]
    assert ds.n_entities == 5
    assert sorted(ds.vocab.entity_ids.values()) == list(range(5))


def test_empty_train_rejected(tmp_path):
    for name in ("tr", "va", "te"):
        write_tsv(tmp_path / name, [])
    with pytest.raises(DataError):
        load_triples(tmp_path / "tr", tmp_path / "va", tmp_path / "te")


def test_malformed_line_reports_line_number(tmp_path):
    (tmp_path / "tr").write_text("A\tr\tB\nA\tr\n")
    write_tsv(tmp_path / "va", [])
    write_tsv(tmp_path / "te", [])
    with pytest.raises(ParseError, match=":2:"):
        load_triples(tmp_path / "tr", tmp_path / "va", tmp_path / "te")


def test_duplicate_within_split_rejected(tmp_path):
    write_tsv(tmp_path / "tr", [("A", "r", "B"), ("A", "r", "B")])
    write_tsv(tmp_path / "va", [])
    write_tsv(tmp_path / "te", [])
    with pytest.raises(DataError, match="duplicate"):
        load_triples(tmp_path / "tr", tmp_path / "va", tmp_path / "te")


def test_same_triple_in_two_splits_is_allowed(tmp_path):
    write_tsv(tmp_path / "tr", [("A", "r", "B")])
    write_tsv(tmp_path / "va", [("A", "r", "B")])
    write_tsv(tmp_path / "te", [])
    ds = load_triples(tmp_path / "tr", tmp_path / "va", tmp_path / "te")
    assert len(ds.valid) == 1


def test_write_then_load_round_trip(tmp_path):
    ds = random_kg(np.random.default_rng(3), 20, 3, 40, 5, 5)
    write_triples(ds, tmp_path)
    back = load_data_dir(tmp_path)
    for split in ("train", "valid", "test"):
        assert back.named_triples(split) == ds.named_triples(split)


def test_queries_of_gives_both_directions():
    tail, head = queries_of(Triple(1, 2, 3))
    assert tail == Query(1, 2, Direction.TAIL)
    assert head == Query(3, 2, Direction.HEAD)
    assert tail.complete(3) == head.complete(1) == Triple(1, 2, 3)


def test_fixture_counts(tiny):
    freq = count_frequencies(tiny)
    v = tiny.vocab
    A, B, C, D = (v.entity_ids[x] for x in "ABCD")
    r = v.relation_ids["r"]
    assert freq.headrel[(A, r)] == 2
    assert freq.reltail[(r, B)] == 2
    assert freq.reltail[(r, C)] == 1
    assert freq.headrel[(D, r)] == 1
    assert freq.triple_freq(ids(tiny, "A", "r", "B")) == 4
    assert freq.triple_freq(ids(tiny, "A", "r", "C")) == 3
    assert freq.triple_freq(ids(tiny, "D", "r", "B")) == 3
    assert freq.query_freq(Query(A, r, Direction.TAIL)) == 2
    assert freq.query_freq(Query(B, r, Direction.HEAD)) == 2


def test_unseen_query_has_zero_frequency(tiny):
    freq = count_frequencies(tiny)
    C = tiny.vocab.entity_ids["C"]
    assert freq.query_freq(Query(C, 0, Direction.TAIL)) == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10_000))
def test_counts_match_brute_force(seed, n):
    rng = np.random.default_rng(seed)
    n_ent = int(rng.integers(2, 200))
    n_rel = int(rng.integers(1, 20))
    n = min(n, n_ent * n_ent * n_rel // 2 or 1)
    ds = random_kg(rng, n_ent, n_rel, n)
    freq = count_frequencies(ds)

    rows = ds.train.tolist()
    hr = Counter((h, r) for h, r, _ in rows)
    rt = Counter((r, t) for _, r, t in rows)
    assert freq.headrel == dict(hr)
    assert freq.reltail == dict(rt)
    assert sum(freq.headrel.values()) == len(rows)
    assert sum(freq.reltail.values()) == len(rows)
    for h, r, t in rows[:200]:
        assert freq.triple_freq((h, r, t)) == hr[(h, r)] + rt[(r, t)] >= 2
        assert freq.query_freq(Query(h, r, Direction.TAIL)) == hr[(h, r)]
        assert freq.query_freq(Query(t, r, Direction.HEAD)) == rt[(r, t)]


def test_thresholds_on_fixture(tiny):
    # distinct query frequencies are {1, 2}; fraction 0.5 keeps one value per end
    assert sparse_thresholds(count_frequencies(tiny), 0.5) == (2, 1)


def test_extract_high_on_fixture(tiny):
    # tail/head query freqs: (A,r,B) 2/2, (A,r,C) 2/1, (D,r,B) 1/2
    high = extract_sparse_subset(tiny, 0.5, "high")
    assert sorted(high.named_triples("train")) == sorted(FIXTURE)
    low = extract_sparse_subset(tiny, 0.5, "low")
    assert sorted(low.named_triples("train")) == [("A", "r", "C"), ("D", "r", "B")]


def test_extract_both_with_full_coverage_is_identity(tiny):
    # with an even number K of distinct frequency values, fraction 0.5 covers all of them
    for seed in range(20):
        ds = random_kg(np.random.default_rng(seed), 30, 3, 200, 20, 20)
        freq = count_frequencies(ds)
        k = len(set(freq.headrel.values()) | set(freq.reltail.values()))
        if k % 2 == 0:
            break
    assert k % 2 == 0
    for d in (tiny, ds):
        out = extract_sparse_subset(d, 0.5, "both")
        for split in ("train", "valid", "test"):
            assert sorted(out.named_triples(split)) == sorted(d.named_triples(split))


@pytest.mark.parametrize("fraction", [0.0, -0.1, 0.51, 1.0])
def test_extract_rejects_bad_fraction(tiny, fraction):
    with pytest.raises(ValueError):
        extract_sparse_subset(tiny, fraction, "both")


def test_unseen_queries_always_low():
    ds = Dataset.from_named([("a", "r", "b"), ("a", "r", "c"), ("d", "r", "b"), ("a", "s", "b")],
                            [("d", "s", "c")], [])
    low = extract_sparse_subset(ds, 0.01, "low")
    assert low.named_triples("valid") == [("d", "s", "c")]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), fraction=st.floats(0.01, 0.5))
def test_extract_subset_properties(seed, fraction):
    rng = np.random.default_rng(seed)
    ds = random_kg(rng, 40, 4, 300, 30, 30)
    high = extract_sparse_subset(ds, fraction, "high")
    low = extract_sparse_subset(ds, fraction, "low")
    both = extract_sparse_subset(ds, fraction, "both")
    for split in ("train", "valid", "test"):
        src = set(ds.named_triples(split))
        h, l, b = (set(x.named_triples(split)) for x in (high, low, both))
        assert b <= src and len(b) <= len(src)
        assert b == h | l
    # the two cut-offs select disjoint sets of training queries
    freq = count_frequencies(ds)
    hi, lo = sparse_thresholds(freq, fraction)
    if len(set(freq.headrel.values()) | set(freq.reltail.values())) >= 2:
        assert hi > lo
    # output vocab is dense
    assert sorted(both.vocab.entity_ids.values()) == list(range(both.n_entities))


def test_frequency_ranks_fixture(tiny, tmp_path):
    ranks = frequency_ranks(tiny)
    assert ranks["query"] == [2, 2, 1, 1]
    # answer appearances: A 2, B 2, C 1, D 1
    assert ranks["answer"] == [2, 2, 1, 1]
    path = export_frequency_ranks(tiny, tmp_path / "out" / "ranks.csv")
    rows = list(csv.DictReader(open(path)))
    q = [r for r in rows if r["kind"] == "query"]
    assert [int(r["rank"]) for r in q] == [1, 2, 3, 4]
    assert [int(r["frequency"]) for r in q] == [2, 2, 1, 1]
    assert open(path, "rb").read().count(b"\r") == 0


def test_frequency_ranks_single_triple():
    ds = Dataset.from_named([("a", "r", "b")])
    assert frequency_ranks(ds)["query"] == [1, 1]


def test_frequency_ranks_non_increasing():
    ds = random_kg(np.random.default_rng(5), 50, 5, 500)
    for values in frequency_ranks(ds).values():
        assert all(x >= y for x, y in zip(values, values[1:]))
