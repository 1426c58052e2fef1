import numpy as np
import pytest

from conftest import ALL_KINDS, random_params
from kgsmooth.kg_data import Direction, Vocab
from kgsmooth.scoring import (
    ModelKind, ModelParams, init_params, score, score_candidates, score_gradient,
)


def oracle_score(kind, h, r, t):
    """Direct formulas using complex arithmetic where applicable."""
    kind = ModelKind(kind)
    if kind is ModelKind.TRANSE_L1:
        return -np.abs(h + r - t).sum()
    if kind is ModelKind.TRANSE_L2:
        return -np.sqrt(((h + r - t) ** 2).sum())
    if kind is ModelKind.DISTMULT:
        return (h * r * t).sum()
    k = len(h) // 2
    hc, tc = h[:k] + 1j * h[k:], t[:k] + 1j * t[k:]
    if kind is ModelKind.COMPLEX:
        rc = r[:k] + 1j * r[k:]
        return np.real((hc * rc * np.conj(tc)).sum())
    return -np.abs(hc * np.exp(1j * r) - tc).sum()


def vocab(n_ent, n_rel):
    v = Vocab()
    for i in range(n_ent):
        v.add_entity(f"e{i}")
    for i in range(n_rel):
        v.add_relation(f"r{i}")
    return v


def manual(kind, h, r, t):
    h, r, t = (np.asarray(x, dtype=float) for x in (h, r, t))
    return ModelParams(ModelKind(kind), len(h), np.stack([h, t]), r[None, :], 0)


def test_init_deterministic_and_in_range():
    v = vocab(3, 2)
    a = init_params(v, "distmult", 4, 11)
    b = init_params(v, "distmult", 4, 11)
    assert np.array_equal(a.entity, b.entity) and np.array_equal(a.relation, b.relation)
    assert a.entity.shape == (3, 4) and np.isfinite(a.entity).all()
    assert np.abs(a.entity).max() <= 6 / np.sqrt(4)


def test_init_rotate_phases():
    p = init_params(vocab(5, 50), "rotate", 8, 0)
    assert p.relation.shape == (50, 4)
    assert (p.relation >= -np.pi).all() and (p.relation < np.pi).all()


@pytest.mark.parametrize("kind", ["complex", "rotate"])
def test_init_odd_dim_rejected(kind):
    with pytest.raises(ValueError):
        init_params(vocab(3, 1), kind, 5, 0)


def test_hand_examples():
    assert score(manual("transe-l1", [0, 0], [1, 2], [1, 2]), (0, 0, 1)) == 0
    assert score(manual("distmult", [1, 0], [0, 1], [7, -3]), (0, 0, 1)) == 0
    assert score(manual("rotate", [0.3, -1, 2, 0.5], [0, 0], [0.3, -1, 2, 0.5]), (0, 0, 1)) == 0


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_score_matches_oracle(kind):
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = random_params(rng, kind, dim=6)
        h, r, t = rng.integers(6), rng.integers(3), rng.integers(6)
        expected = oracle_score(kind, p.entity[h], p.relation[r], p.entity[t])
        assert score(p, (h, r, t)) == pytest.approx(expected, abs=1e-12)


def test_complex_with_zero_imaginary_equals_distmult():
    rng = np.random.default_rng(2)
    for _ in range(100):
        h, r, t = rng.normal(size=(3, 4))
        z = np.zeros(4)
        c = manual("complex", np.r_[h, z], np.r_[r, z], np.r_[t, z])
        d = manual("distmult", h, r, t)
        assert score(c, (0, 0, 1)) == pytest.approx(score(d, (0, 0, 1)), abs=1e-12)


def central_diff(params, triple, step=1e-6):
    out_e = np.zeros_like(params.entity)
    out_r = np.zeros_like(params.relation)
    for table, out in ((params.entity, out_e), (params.relation, out_r)):
        for idx in np.ndindex(table.shape):
            keep = table[idx]
            table[idx] = keep + step
            up = score(params, triple)
            table[idx] = keep - step
            down = score(params, triple)
            table[idx] = keep
            out[idx] = (up - down) / (2 * step)
    return out_e, out_r


def dense_grad(params, g):
    ge = np.zeros_like(params.entity)
    gr = np.zeros_like(params.relation)
    for k, v in g.entity.items():
        ge[k] += v
    for k, v in g.relation.items():
        gr[k] += v
    return ge, gr


def near_kink(kind, params, triple, eps=1e-3):
    h, r, t = params.entity[triple[0]], params.relation[triple[1]], params.entity[triple[2]]
    if kind == "transe-l1":
        return np.abs(h + r - t).min() < eps
    if kind == "rotate":
        k = len(h) // 2
        d = (h[:k] + 1j * h[k:]) * np.exp(1j * r) - (t[:k] + 1j * t[k:])
        return np.abs(d).min() < eps
    if kind == "transe-l2":
        return np.linalg.norm(h + r - t) < eps
    return False


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_gradient_matches_finite_difference(kind):
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 200:
        p = random_params(rng, kind, n_entities=4, n_relations=2, dim=4)
        triple = (int(rng.integers(4)), int(rng.integers(2)), int(rng.integers(4)))
        if near_kink(kind, p, triple):
            continue
        g = score_gradient(p, triple)
        assert g.value == pytest.approx(score(p, triple), abs=1e-12)
        ae, ar = dense_grad(p, g)
        ne, nr = central_diff(p, triple)
        # difference roundoff grows with |score|; exact zeros (head == tail) need a floor
        floor = 1e-5 * max(1.0, abs(g.value))
        for a, n in ((ae, ne), (ar, nr)):
            err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            assert err.max() <= 1e-4
        checked += 1


def test_distmult_gradient_is_bilinear():
    p = manual("distmult", [1.0, 2.0], [3.0, -1.0], [0.5, 4.0])
    g = score_gradient(p, (0, 0, 1))
    assert np.array_equal(g.entity[0], np.array([1.5, -4.0]))
    assert np.array_equal(g.entity[1], np.array([3.0, -2.0]))
    assert np.array_equal(g.relation[0], np.array([0.5, 8.0]))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_head_equals_tail_accumulates(kind):
    rng = np.random.default_rng(4)
    p = random_params(rng, kind)
    g = score_gradient(p, (2, 1, 2))
    assert set(g.entity) == {2} and set(g.relation) == {1}
    ne, _ = central_diff(p, (2, 1, 2))
    np.testing.assert_allclose(g.entity[2], ne[2], rtol=1e-5, atol=1e-6)


def test_only_touched_ids_present():
    p = random_params(np.random.default_rng(5), "transe-l2")
    g = score_gradient(p, (0, 2, 4))
    assert set(g.entity) == {0, 4} and set(g.relation) == {2}


def test_l1_kink_subgradient_is_zero():
    p = manual("transe-l1", [1.0, 0.0], [0.0, 1.0], [1.0, 0.0])
    g = score_gradient(p, (0, 0, 1))
    assert g.entity[0][0] == 0.0 and g.relation[0][0] == 0.0


def test_rotate_phase_periodicity():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = random_params(rng, "rotate", dim=6)
        triple = (int(rng.integers(6)), int(rng.integers(3)), int(rng.integers(6)))
        before = score(p, triple)
        p.relation[triple[1], rng.integers(3)] += 2 * np.pi
        assert abs(score(p, triple) - before) <= 1e-9


def test_symmetry():
    rng = np.random.default_rng(7)
    p = random_params(rng, "distmult")
    assert score(p, (0, 1, 3)) == pytest.approx(score(p, (3, 1, 0)), abs=1e-12)
    q = random_params(rng, "transe-l1")
    assert score(q, (0, 1, 3)) != score(q, (3, 1, 0))


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_score_candidates_matches_pointwise(kind):
    rng = np.random.default_rng(8)
    p = random_params(rng, kind, n_entities=7)
    anchors = np.array([0, 3, 6, 2])
    rels = np.array([1, 0, 2, 1])
    dirs = np.array([0, 1, 0, 1])
    out = score_candidates(p, anchors, rels, dirs)
    assert out.shape == (4, 7)
    for i in range(4):
        for e in range(7):
            triple = (anchors[i], rels[i], e) if dirs[i] == Direction.TAIL else (e, rels[i], anchors[i])
            assert out[i, e] == pytest.approx(score(p, triple), abs=1e-12)
