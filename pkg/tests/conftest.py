import numpy as np
import pytest

from kgsmooth.kg_data import Dataset
from kgsmooth.loss import Batch
from kgsmooth.scoring import ModelKind, init_params

FIXTURE = [("A", "r", "B"), ("A", "r", "C"), ("D", "r", "B")]


@pytest.fixture
def tiny():
    return Dataset.from_named(FIXTURE, [], [])


def write_tsv(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows))
    return path


@pytest.fixture
def tiny_dir(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    write_tsv(d / "train.txt", FIXTURE)
    write_tsv(d / "valid.txt", [])
    write_tsv(d / "test.txt", [])
    return d


def random_kg(rng, n_entities, n_relations, n_triples, n_valid=0, n_test=0):
    """Unique random triples over string names; valid/test reuse train vocab."""
    total = n_triples + n_valid + n_test
    seen = set()
    while len(seen) < total:
        h, t = rng.integers(n_entities, size=2)
        r = rng.integers(n_relations)
        seen.add((f"e{h}", f"r{r}", f"e{t}"))
    rows = sorted(seen)
    rng.shuffle(rows)
    rows = [tuple(x) for x in rows]
    return Dataset.from_named(rows[:n_triples], rows[n_triples:n_triples + n_valid],
                              rows[n_triples + n_valid:])


def random_params(rng, kind, n_entities=6, n_relations=3, dim=4):
    from kgsmooth.kg_data import Vocab
    vocab = Vocab()
    for i in range(n_entities):
        vocab.add_entity(f"e{i}")
    for i in range(n_relations):
        vocab.add_relation(f"r{i}")
    return init_params(vocab, ModelKind(kind), dim, int(rng.integers(2**31)))


def random_batch(rng, params, size=4, nu=3, weighted=False):
    n_e, n_r = params.n_entities, params.n_relations
    a = rng.uniform(0.2, 2.0, size) if weighted else np.ones(size)
    b = rng.uniform(0.2, 2.0, size) if weighted else np.ones(size)
    return Batch(
        anchors=rng.integers(n_e, size=size),
        relations=rng.integers(n_r, size=size),
        directions=rng.integers(2, size=size),
        answers=rng.integers(n_e, size=size),
        negatives=rng.integers(n_e, size=(size, nu)),
        a=a, b=b,
    )


ALL_KINDS = [k.value for k in ModelKind]


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
