"""Smoothed negative-sampling losses for knowledge graph embedding.

Every loss here is an instance of one weighted form. For a batch of ``B``
examples ``(x_j, y_j)`` with ``nu`` sampled negatives ``y_ji`` each::

    loss = -(1/B) * sum_j w_j * [ a_j * logsig(s+_j + tau)
                                  + eta * sum_i b_j * p_ji * logsig(-s-_ji - tau) ]

``a``/``b`` are count-based subsampling weights (see :mod:`kgsmooth.smoothing`),
``p_j`` is a distribution over the negatives of example ``j`` and ``w_j`` a
model-predicted query weight. The families differ only in how ``p`` and ``w``
are formed:

==========  ======================  ====================  =======
family      p_ji                    w_j                   eta
==========  ======================  ====================  =======
ns          1/nu                    1                     1
sans        softmax(beta * s-)_i    1                     1
tans        softmax(beta * s-)_i    B*softmax(gamma*s+)_j 1
unified     softmax(beta * s-)_i    B*softmax(gamma*s+)_j cfg.eta
==========  ======================  ====================  =======

``p`` and ``w`` are computed from the current scores and then held constant:
no gradient flows through them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .kg_data import Direction, Query
from .scoring import ModelParams, grad_arrays, score_arrays
from .smoothing import SubsamplingAssumption


class NumericError(ArithmeticError):
    """A score or loss value became non-finite."""


class LossFamily(str, enum.Enum):
    NS = "ns"
    SANS = "sans"
    TANS = "tans"
    UNIFIED = "unified"


@dataclass(frozen=True)
class LossConfig:
    family: LossFamily = LossFamily.NS
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    eta: float = 1.0
    tau: float = 0.0
    nu: int = 1
    assumption: SubsamplingAssumption = SubsamplingAssumption.NONE
    # sum TANS weights over positives sharing a query within the batch
    group_by_query: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        object.__setattr__(self, "assumption", SubsamplingAssumption(self.assumption))
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        """Reasons this configuration falls outside the loss lattice."""
        out = []
        f = self.family
        if self.nu < 1:
            out.append(f"nu must be >= 1, got {self.nu}")
        if self.eta <= 0:
            out.append(f"eta must be positive, got {self.eta}")
        if not all(np.isfinite([self.alpha, self.beta, self.gamma, self.eta, self.tau])):
            out.append("temperatures, eta and tau must be finite")
        if f is LossFamily.NS and (self.beta != 0 or self.gamma != 0):
            out.append("ns has beta = gamma = 0; use sans (beta) or tans (beta, gamma)")
        if f is LossFamily.SANS and self.gamma != 0:
            out.append("sans has gamma = 0; a non-zero gamma is tans")
        if f is not LossFamily.UNIFIED and self.eta != 1:
            out.append(f"eta only applies to the unified loss, got eta={self.eta} for {f.value}")
        if self.assumption is SubsamplingAssumption.NONE and self.alpha != 0:
            out.append("alpha needs a subsampling assumption (base, freq or uniq)")
        return out

    @property
    def uses_beta(self) -> bool:
        return self.family is not LossFamily.NS

    @property
    def uses_gamma(self) -> bool:
        return self.family in (LossFamily.TANS, LossFamily.UNIFIED)

    @property
    def effective_eta(self) -> float:
        return self.eta if self.family is LossFamily.UNIFIED else 1.0


@dataclass
class TrainingExample:
    query: Query
    answer: int
    negatives: Sequence[int]
    a: float = 1.0
    b: float = 1.0


@dataclass
class Batch:
    """Column-wise batch of training examples."""

    anchors: np.ndarray
    relations: np.ndarray
    directions: np.ndarray
    answers: np.ndarray
    negatives: np.ndarray  # (B, nu)
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "Batch":
        if not examples:
            raise ValueError("empty batch")
        nus = {len(ex.negatives) for ex in examples}
        if len(nus) != 1:
            raise ValueError(f"examples carry different numbers of negatives: {sorted(nus)}")
        return cls(
            anchors=np.array([ex.query.anchor for ex in examples], dtype=np.int64),
            relations=np.array([ex.query.relation for ex in examples], dtype=np.int64),
            directions=np.array([int(ex.query.direction) for ex in examples], dtype=np.int64),
            answers=np.array([ex.answer for ex in examples], dtype=np.int64),
            negatives=np.array([list(ex.negatives) for ex in examples], dtype=np.int64),
            a=np.array([ex.a for ex in examples], dtype=float),
            b=np.array([ex.b for ex in examples], dtype=float),
        )

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def nu(self) -> int:
        return self.negatives.shape[1]

    def heads_tails(self) -> tuple[np.ndarray, np.ndarray]:
        """Entity ids of the scored triples, shape ``(B, 1 + nu)``; column 0 is the positive."""
        cands = np.concatenate([self.answers[:, None], self.negatives], axis=1)
        anchor = np.broadcast_to(self.anchors[:, None], cands.shape)
        tail = (self.directions == Direction.TAIL)[:, None]
        return np.where(tail, anchor, cands), np.where(tail, cands, anchor)

    def query_groups(self) -> np.ndarray:
        keys = np.stack([self.anchors, self.relations, self.directions], axis=1)
        return np.unique(keys, axis=0, return_inverse=True)[1].reshape(-1)


class NoiseWeights(NamedTuple):
    negative: np.ndarray  # (B, nu), rows sum to 1
    query: np.ndarray  # (B,)


@dataclass
class Gradients:
    """Accumulated gradient over the rows a batch touches (ids sorted, unique)."""

    entity_ids: np.ndarray
    entity: np.ndarray
    relation_ids: np.ndarray
    relation: np.ndarray

    def dense(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        ge = np.zeros_like(params.entity)
        gr = np.zeros_like(params.relation)
        ge[self.entity_ids] = self.entity
        gr[self.relation_ids] = self.relation
        return ge, gr


def log_sigmoid(u):
    return -np.logaddexp(0.0, -u)


def sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=float)))


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def sans_weights(neg_scores, beta: float) -> np.ndarray:
    """Softmax of ``beta * scores`` over the last axis (the sampled negatives)."""
    neg_scores = np.asarray(neg_scores, dtype=float)
    if beta == 0:
        return np.full(neg_scores.shape, 1.0 / neg_scores.shape[-1])
    return _softmax(beta * neg_scores)


def tans_query_weights(batch_pos_scores, gamma: float, groups=None) -> np.ndarray:
    """In-batch query weights ``B * softmax(gamma * positive scores)``.

    The batch mean is 1. With ``groups`` (one integer label per positive),
    each positive receives the summed weight of all positives sharing its
    label.
    """
    s = np.asarray(batch_pos_scores, dtype=float)
    n = len(s)
    if n == 0:
        raise ValueError("empty batch")
    if gamma == 0 and groups is None:
        return np.ones(n)
    w = n * _softmax(gamma * s)
    if groups is not None:
        groups = np.asarray(groups)
        w = np.bincount(groups, weights=w)[groups]
    return w


def noise_weights(pos_scores, neg_scores, cfg: LossConfig, groups=None) -> NoiseWeights:
    neg_scores = np.asarray(neg_scores, dtype=float)
    p = sans_weights(neg_scores, cfg.beta if cfg.uses_beta else 0.0)
    if cfg.uses_gamma:
        w = tans_query_weights(pos_scores, cfg.gamma, groups)
    else:
        w = np.ones(len(neg_scores))
    return NoiseWeights(p, w)


def loss_from_scores(pos, neg, a, b, noise: NoiseWeights, cfg: LossConfig):
    """Loss and its derivatives with respect to the positive and negative scores."""
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    n = len(pos)
    w, p = noise.query, noise.negative
    eta = cfg.effective_eta
    tau = cfg.tau
    pos_term = a * log_sigmoid(pos + tau)
    neg_term = eta * b * (p * log_sigmoid(-neg - tau)).sum(axis=1)
    loss = -float(np.sum(w * (pos_term + neg_term))) / n
    dpos = -(w * a) * sigmoid(-(pos + tau)) / n
    dneg = (w * eta * b)[:, None] * p * sigmoid(neg + tau) / n
    return loss, dpos, dneg


def _gather(params: ModelParams, batch: Batch):
    heads, tails = batch.heads_tails()
    return (heads, tails, params.entity[heads],
            params.relation[batch.relations][:, None, :], params.entity[tails])


def _checked_scores(kind, heads, tails, relations, eh, er, et) -> np.ndarray:
    s = score_arrays(kind, eh, er, et)
    if not np.isfinite(s).all():
        j, i = np.argwhere(~np.isfinite(s))[0]
        raise NumericError(
            f"non-finite score {s[j, i]} for example {j} "
            f"(triple {heads[j, i]}, {relations[j]}, {tails[j, i]})")
    return s


def batch_scores(params: ModelParams, batch: Batch) -> np.ndarray:
    """Scores of shape ``(B, 1 + nu)``; column 0 holds the positives."""
    heads, tails, eh, er, et = _gather(params, batch)
    return _checked_scores(params.kind, heads, tails, batch.relations, eh, er, et)


def _accumulate(ids: np.ndarray, rows: np.ndarray):
    # stable sort keeps a fixed summation order per id
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.flatnonzero(np.r_[True, sorted_ids[1:] != sorted_ids[:-1]])
    return sorted_ids[starts], np.add.reduceat(rows[order], starts, axis=0)


def unified_loss(batch: Batch | Sequence[TrainingExample], params: ModelParams,
                 cfg: LossConfig, noise: NoiseWeights | None = None):
    """Evaluate the loss and its gradient for one batch.

    Parameters
    ----------
    batch : Batch or list of TrainingExample
        Examples with sampled negatives and attached subsampling weights.
    params : ModelParams
        Current embeddings; the scoring model is ``params.kind``.
    cfg : LossConfig
        Selects the family and its temperatures.
    noise : NoiseWeights, optional
        Frozen ``p``/``w`` to use instead of computing them from the current
        scores (used by gradient checking).

    Returns
    -------
    loss : float
    grads : Gradients
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_examples(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    heads, tails, eh, er, et = _gather(params, batch)
    s = _checked_scores(params.kind, heads, tails, batch.relations, eh, er, et)
    pos, neg = s[:, 0], s[:, 1:]
    if noise is None:
        groups = batch.query_groups() if cfg.group_by_query else None
        noise = noise_weights(pos, neg, cfg, groups)
    loss, dpos, dneg = loss_from_scores(pos, neg, batch.a, batch.b, noise, cfg)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")

    ds = np.concatenate([dpos[:, None], dneg], axis=1)[..., None]
    dh, dr, dt = grad_arrays(params.kind, eh, er, et)
    d = params.dim
    dr = np.broadcast_to(dr, ds.shape[:2] + (dr.shape[-1],))
    ent_ids, ent = _accumulate(
        np.concatenate([heads.reshape(-1), tails.reshape(-1)]),
        np.concatenate([(ds * dh).reshape(-1, d), (ds * dt).reshape(-1, d)]),
    )
    rel_ids, rel = _accumulate(
        np.repeat(batch.relations, s.shape[1]), (ds * dr).reshape(-1, dr.shape[-1]))
    return loss, Gradients(ent_ids, ent, rel_ids, rel)


def _batch_noise(params: ModelParams, batch: Batch, cfg: LossConfig) -> NoiseWeights:
    s = batch_scores(params, batch)
    groups = batch.query_groups() if cfg.group_by_query else None
    return noise_weights(s[:, 0], s[:, 1:], cfg, groups)


def finite_difference_grads(params: ModelParams, batch: Batch, cfg: LossConfig,
                            step: float = 1e-6, frozen: bool = True) -> Gradients:
    """Central differences of the loss over every touched coordinate.

    With ``frozen`` the noise weights stay at their values for the
    unperturbed parameters; otherwise they are recomputed at each point.
    """
    noise = _batch_noise(params, batch, cfg) if frozen else None
    heads, tails = batch.heads_tails()
    ent_ids = np.unique(np.concatenate([heads.reshape(-1), tails.reshape(-1)]))
    rel_ids = np.unique(batch.relations)
    work = params.copy()

    def loss_at():
        return unified_loss(batch, work, cfg, noise)[0]

    out = []
    for table, ids in ((work.entity, ent_ids), (work.relation, rel_ids)):
        g = np.zeros((len(ids), table.shape[1]))
        for row, idx in enumerate(ids):
            for k in range(table.shape[1]):
                orig = table[idx, k]
                table[idx, k] = orig + step
                up = loss_at()
                table[idx, k] = orig - step
                down = loss_at()
                table[idx, k] = orig
                g[row, k] = (up - down) / (2 * step)
        out.append((ids, g))
    return Gradients(out[0][0], out[0][1], out[1][0], out[1][1])


def max_relative_error(analytic: Gradients, numeric: Gradients, floor: float = 1e-5) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over matching coordinates."""
    errs = []
    for ids_a, ga, ids_n, gn in ((analytic.entity_ids, analytic.entity, numeric.entity_ids, numeric.entity),
                                 (analytic.relation_ids, analytic.relation, numeric.relation_ids, numeric.relation)):
        if not np.array_equal(ids_a, ids_n):
            raise ValueError("gradient supports differ")
        den = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), floor)
        errs.append(np.max(np.abs(ga - gn) / den, initial=0.0))
    return float(max(errs))


def loss_gradient_check(params: ModelParams, cfg: LossConfig, batch: Batch,
                        step: float = 1e-6) -> float:
    """Max relative error between analytic and frozen-weight numeric gradients.

    The denominator floor grows with ``|loss|`` because central-difference
    roundoff is about ``eps * |loss| / step`` in absolute terms.
    """
    if not isinstance(batch, Batch):
        batch = Batch.from_examples(batch)
    loss, analytic = unified_loss(batch, params, cfg)
    numeric = finite_difference_grads(params, batch, cfg, step)
    return max_relative_error(analytic, numeric, floor=1e-5 * max(1.0, abs(loss)))
