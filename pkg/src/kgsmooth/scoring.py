"""Embedding tables and the scoring functions s(h, r, t) with analytic gradients.

Complex-valued models (ComplEx, RotatE) store an entity vector of even
dimension ``d`` as ``[real part | imaginary part]``, each of length ``d/2``.
RotatE relations are stored as ``d/2`` phases in radians, so every relation
coordinate is the unit complex number ``exp(i*phase)``.

All array functions broadcast over leading axes: ``h`` and ``t`` are
``(..., d)`` and ``r`` is ``(..., d_r)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .kg_data import Triple, Vocab


class ModelKind(str, enum.Enum):
    TRANSE_L1 = "transe-l1"
    TRANSE_L2 = "transe-l2"
    DISTMULT = "distmult"
    COMPLEX = "complex"
    ROTATE = "rotate"

    @property
    def is_complex(self) -> bool:
        return self in (ModelKind.COMPLEX, ModelKind.ROTATE)

    def relation_dim(self, dim: int) -> int:
        return dim // 2 if self is ModelKind.ROTATE else dim


@dataclass
class ModelParams:
    kind: ModelKind
    dim: int
    entity: np.ndarray  # (|E|, d)
    relation: np.ndarray  # (|R|, d_r)
    seed: int | None = None

    @property
    def n_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def n_relations(self) -> int:
        return self.relation.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(self.kind, self.dim, self.entity.copy(), self.relation.copy(), self.seed)


@dataclass
class ScoreGradient:
    """Gradient of one score, keyed by the ids the triple touches."""

    value: float
    entity: dict[int, np.ndarray] = field(default_factory=dict)
    relation: dict[int, np.ndarray] = field(default_factory=dict)


def init_params(vocab: Vocab, kind, dim: int, seed: int) -> ModelParams:
    """Uniform init in ``[-6/sqrt(d), 6/sqrt(d)]``; RotatE phases in ``[-pi, pi)``."""
    kind = ModelKind(kind)
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if kind.is_complex and dim % 2:
        raise ValueError(f"{kind.value} needs an even dimension, got {dim}")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    entity = rng.uniform(-bound, bound, size=(vocab.n_entities, dim))
    if kind is ModelKind.ROTATE:
        relation = rng.uniform(-np.pi, np.pi, size=(vocab.n_relations, dim // 2))
    else:
        relation = rng.uniform(-bound, bound, size=(vocab.n_relations, dim))
    return ModelParams(kind, dim, entity, relation, seed)


def _halves(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


def score_arrays(kind: ModelKind, h, r, t) -> np.ndarray:
    """Vectorized scores; the trailing embedding axis is reduced."""
    if kind is ModelKind.TRANSE_L1:
        return -np.abs(h + r - t).sum(axis=-1)
    if kind is ModelKind.TRANSE_L2:
        return -np.sqrt(np.square(h + r - t).sum(axis=-1))
    if kind is ModelKind.DISTMULT:
        return (h * r * t).sum(axis=-1)
    if kind is ModelKind.COMPLEX:
        hr, hi = _halves(h)
        rr, ri = _halves(r)
        tr, ti = _halves(t)
        return (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(axis=-1)
    if kind is ModelKind.ROTATE:
        hr, hi = _halves(h)
        tr, ti = _halves(t)
        c, s = np.cos(r), np.sin(r)
        dre = hr * c - hi * s - tr
        dim_ = hr * s + hi * c - ti
        return -np.sqrt(dre * dre + dim_ * dim_).sum(axis=-1)
    raise ValueError(f"unknown model kind {kind}")


def _safe_div(num, den):
    # subgradient 0 where the norm vanishes
    out = np.zeros(np.broadcast_shapes(np.shape(num), np.shape(den)))
    np.divide(num, den, out=out, where=np.broadcast_to(den, out.shape) > 0)
    return out


def grad_arrays(kind: ModelKind, h, r, t):
    """Return ``(ds/dh, ds/dr, ds/dt)`` broadcast to a common leading shape."""
    if kind is ModelKind.TRANSE_L1:
        g = np.sign(h + r - t)
        return -g, -g, g
    if kind is ModelKind.TRANSE_L2:
        diff = h + r - t
        norm = np.sqrt(np.square(diff).sum(axis=-1, keepdims=True))
        g = _safe_div(diff, norm)
        return -g, -g, g
    if kind is ModelKind.DISTMULT:
        h, r, t = np.broadcast_arrays(h, r, t)
        return r * t, h * t, h * r
    if kind is ModelKind.COMPLEX:
        h, r, t = np.broadcast_arrays(h, r, t)
        hr, hi = _halves(h)
        rr, ri = _halves(r)
        tr, ti = _halves(t)
        dh = np.concatenate([rr * tr + ri * ti, rr * ti - ri * tr], axis=-1)
        dr = np.concatenate([hr * tr + hi * ti, hr * ti - hi * tr], axis=-1)
        dt = np.concatenate([hr * rr - hi * ri, hi * rr + hr * ri], axis=-1)
        return dh, dr, dt
    if kind is ModelKind.ROTATE:
        hr, hi = _halves(h)
        tr, ti = _halves(t)
        c, s = np.cos(r), np.sin(r)
        rot_re = hr * c - hi * s
        rot_im = hr * s + hi * c
        dre, dim_ = rot_re - tr, rot_im - ti
        mod = np.sqrt(dre * dre + dim_ * dim_)
        g_re = -_safe_div(dre, mod)
        g_im = -_safe_div(dim_, mod)
        dh = np.concatenate([g_re * c + g_im * s, -g_re * s + g_im * c], axis=-1)
        dphase = -g_re * rot_im + g_im * rot_re
        dt = np.concatenate([-g_re, -g_im], axis=-1)
        return dh, dphase, dt
    raise ValueError(f"unknown model kind {kind}")


def score(params: ModelParams, triple: Triple) -> float:
    h, r, t = triple
    return float(score_arrays(params.kind, params.entity[h], params.relation[r], params.entity[t]))


def score_gradient(params: ModelParams, triple: Triple) -> ScoreGradient:
    h, r, t = (int(x) for x in triple)
    eh, er, et = params.entity[h], params.relation[r], params.entity[t]
    dh, dr, dt = grad_arrays(params.kind, eh, er, et)
    out = ScoreGradient(float(score_arrays(params.kind, eh, er, et)))
    out.entity[h] = np.array(dh, dtype=float)
    out.entity[t] = out.entity[t] + dt if t in out.entity else np.array(dt, dtype=float)
    out.relation[r] = np.array(dr, dtype=float)
    return out


def score_candidates(params: ModelParams, anchors, relations, directions) -> np.ndarray:
    """Scores of every entity as the answer to each query; shape ``(n_queries, |E|)``."""
    anchors = np.asarray(anchors)
    relations = np.asarray(relations)
    tail = np.asarray(directions) == 0
    a = params.entity[anchors][:, None, :]
    r = params.relation[relations][:, None, :]
    cand = params.entity[None, :, :]
    out = np.empty((len(anchors), params.n_entities))
    # tail queries score (anchor, r, cand); head queries score (cand, r, anchor)
    for is_tail, mask in ((True, tail), (False, ~tail)):
        if mask.any():
            am, rm = a[mask], r[mask]
            h, t = (am, cand) if is_tail else (cand, am)
            out[mask] = score_arrays(params.kind, h, rm, t)
    return out
