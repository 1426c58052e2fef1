"""Negative sampling, optimization loop and checkpoints."""

from __future__ import annotations

import csv
import enum
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import FilterIndex, Metrics, evaluate
from .kg_data import Dataset, Direction, Query, count_frequencies
from .loss import Batch, LossConfig, NumericError, unified_loss
from .scoring import ModelKind, ModelParams, init_params
from .smoothing import SubsamplingAssumption, example_weights

logger = logging.getLogger(__name__)


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=lambda: LossConfig(nu=16))
    model: ModelKind = ModelKind.DISTMULT
    dim: int = 32
    batch_size: int = 256
    epochs: int = 100
    learning_rate: float = 1e-3
    optimizer: Optimizer = Optimizer.ADAM
    seed: int = 0
    eval_every: int = 10
    negative_filtering: bool = False

    def __post_init__(self):
        self.model = ModelKind(self.model)
        self.optimizer = Optimizer(self.optimizer)
        for name in ("dim", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0 (0 disables evaluation)")


@dataclass
class TrainReport:
    train_loss: list[float]
    eval_epochs: list[int]
    valid_metrics: list[Metrics]
    params: ModelParams

    def curve_rows(self) -> list[dict]:
        by_epoch = dict(zip(self.eval_epochs, self.valid_metrics))
        rows = []
        for epoch, loss in enumerate(self.train_loss, start=1):
            m = by_epoch.get(epoch)
            rows.append({
                "epoch": epoch,
                "train_loss": repr(loss),
                "valid_mrr": repr(m.mrr) if m else "",
                "valid_h1": repr(m.hits1) if m else "",
                "valid_h3": repr(m.hits3) if m else "",
                "valid_h10": repr(m.hits10) if m else "",
            })
        return rows


CURVE_COLUMNS = ["epoch", "train_loss", "valid_mrr", "valid_h1", "valid_h3", "valid_h10"]


def write_curves_csv(report: TrainReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.curve_rows())
    return path


class TrainingDiverged(RuntimeError):
    pass


def answer_index(triples: np.ndarray) -> dict[tuple[int, int, int], set[int]]:
    """Known answers per ``(anchor, relation, direction)`` query."""
    index: dict[tuple[int, int, int], set[int]] = {}
    for h, r, t in triples.tolist():
        index.setdefault((h, r, int(Direction.TAIL)), set()).add(t)
        index.setdefault((t, r, int(Direction.HEAD)), set()).add(h)
    return index


def sample_negatives(rng: np.random.Generator, n_entities: int, query: Query, gold: int,
                     nu: int, filtering: bool = False,
                     train_answers: dict | None = None) -> np.ndarray:
    """Draw ``nu`` entity ids uniformly with replacement.

    With ``filtering``, draws that complete a known training triple for
    ``query`` (the gold included) are rejected and redrawn.
    """
    if n_entities < 2:
        raise ValueError("need at least two entities")
    out = rng.integers(0, n_entities, size=nu)
    if not filtering:
        return out
    known = set((train_answers or {}).get((int(query[0]), int(query[1]), int(query[2])), ()))
    known.add(int(gold))
    return _reject(rng, out, known, n_entities)


def _reject(rng, draws, known, n_entities):
    if len(known) >= n_entities:
        raise ValueError("every entity is a known answer; no admissible negative")
    bad = np.isin(draws, list(known))
    while bad.any():
        draws[bad] = rng.integers(0, n_entities, size=int(bad.sum()))
        bad = np.isin(draws, list(known))
    return draws


class SGD:
    def __init__(self, arrays, learning_rate):
        self.arrays = arrays
        self.learning_rate = learning_rate

    def step(self, grads):
        for param, grad in zip(self.arrays, grads):
            param -= self.learning_rate * grad


class Adam:
    """Dense Adam over a list of arrays, updated in place."""

    def __init__(self, arrays, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.arrays = arrays
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for param, grad, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def training_examples(triples: np.ndarray):
    """Two examples per triple: tail queries first, then head queries."""
    n = len(triples)
    anchors = np.concatenate([triples[:, 0], triples[:, 2]])
    relations = np.concatenate([triples[:, 1], triples[:, 1]])
    directions = np.repeat([int(Direction.TAIL), int(Direction.HEAD)], n).astype(np.int64)
    answers = np.concatenate([triples[:, 2], triples[:, 0]])
    return anchors, relations, directions, answers


def _streams(seed: int):
    return np.random.SeedSequence(seed).spawn(3)


def initial_params(dataset: Dataset, cfg: TrainConfig) -> ModelParams:
    """The parameters :func:`train` starts from for this config."""
    init_seq = _streams(cfg.seed)[0]
    params = init_params(dataset.vocab, cfg.model, cfg.dim, int(init_seq.generate_state(1)[0]))
    params.seed = cfg.seed
    return params


def train(dataset: Dataset, cfg: TrainConfig, checkpoint_path=None, threads: int = 1) -> TrainReport:
    """Run ``cfg.epochs`` epochs of minibatch training.

    Randomness comes from three streams spawned from ``cfg.seed``:
    initialization, batch shuffling and negative sampling, so changing
    ``nu`` leaves the batch order untouched.
    """
    lcfg = cfg.loss
    _, shuffle_seq, neg_seq = _streams(cfg.seed)
    params = initial_params(dataset, cfg)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    neg_rng = np.random.default_rng(neg_seq)

    anchors, relations, directions, answers = training_examples(dataset.train)
    n_examples = len(anchors)
    if lcfg.assumption is not SubsamplingAssumption.NONE and lcfg.alpha != 0:
        freq = count_frequencies(dataset)
        a_w, b_w = example_weights(freq, anchors, relations, directions, answers,
                                   lcfg.assumption, lcfg.alpha)
    else:
        a_w = b_w = np.ones(n_examples)

    known = answer_index(dataset.train) if cfg.negative_filtering else None
    filt = FilterIndex.from_dataset(dataset) if cfg.eval_every and len(dataset.valid) else None
    if cfg.optimizer is Optimizer.ADAM:
        opt = Adam([params.entity, params.relation], cfg.learning_rate)
    else:
        opt = SGD([params.entity, params.relation], cfg.learning_rate)

    losses, eval_epochs, metrics = [], [], []
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n_examples)
        total = 0.0
        for step, start in enumerate(range(0, n_examples, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            negs = neg_rng.integers(0, params.n_entities, size=(len(idx), lcfg.nu))
            if known is not None:
                for row, j in enumerate(idx):
                    key = (int(anchors[j]), int(relations[j]), int(directions[j]))
                    negs[row] = _reject(neg_rng, negs[row], known[key], params.n_entities)
            batch = Batch(anchors[idx], relations[idx], directions[idx], answers[idx],
                          negs, a_w[idx], b_w[idx])
            try:
                loss, grads = unified_loss(batch, params, lcfg)
            except NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}") from exc
            opt.step(grads.dense(params))
            total += loss * len(idx)
        losses.append(total / n_examples)
        if filt is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            m = evaluate(params, dataset, "valid", filtered=True, threads=threads,
                         filter_index=filt)
            eval_epochs.append(epoch)
            metrics.append(m)
            logger.info("epoch %d loss %.6f valid mrr %.4f", epoch, losses[-1], m.mrr)
        else:
            logger.debug("epoch %d loss %.6f", epoch, losses[-1])

    report = TrainReport(losses, eval_epochs, metrics, params)
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path)
    return report


# checkpoint layout: MAGIC | u32 header length | JSON header | entity f8 | relation f8
MAGIC = b"KGSMCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: ModelParams, path, meta: dict | None = None) -> Path:
    header = json.dumps({
        "version": FORMAT_VERSION,
        "kind": params.kind.value,
        "dim": params.dim,
        "seed": params.seed,
        "entity_shape": list(params.entity.shape),
        "relation_shape": list(params.relation.shape),
        "meta": meta or {},
    }, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(params.entity, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.relation, dtype="<f8").tobytes())
    return path


def read_checkpoint(path) -> tuple[ModelParams, dict]:
    """Load parameters and the stored metadata dict."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(raw[pos:pos + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt or truncated header") from exc
    pos += hlen
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}")
    ent_shape, rel_shape = tuple(header["entity_shape"]), tuple(header["relation_shape"])
    n_ent, n_rel = int(np.prod(ent_shape)), int(np.prod(rel_shape))
    if len(raw) != pos + 8 * (n_ent + n_rel):
        raise CheckpointError(f"{path}: truncated or oversized payload")
    entity = np.frombuffer(raw, dtype="<f8", count=n_ent, offset=pos).reshape(ent_shape).copy()
    relation = np.frombuffer(raw, dtype="<f8", count=n_rel,
                             offset=pos + 8 * n_ent).reshape(rel_shape).copy()
    params = ModelParams(ModelKind(header["kind"]), header["dim"], entity, relation, header["seed"])
    return params, header.get("meta", {})


def load_checkpoint(path, kind=None) -> ModelParams:
    params, _ = read_checkpoint(path)
    if kind is not None and ModelKind(kind) is not params.kind:
        raise CheckpointError(
            f"{path}: checkpoint holds a {params.kind.value} model, requested {ModelKind(kind).value}")
    return params
