"""Synthetic knowledge graphs with power-law (Zipf) query and answer frequencies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg_data import Dataset


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_entities: int = 500
    n_relations: int = 10
    n_triples: int = 5000
    zipf_exponent: float = 1.2
    seed: int = 0


def zipf_cdf(n: int, exponent: float) -> np.ndarray:
    """CDF of P(k) proportional to (k + 1)**-exponent over k = 0..n-1."""
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def _draw(rng, cdf, size):
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(idx, len(cdf) - 1)


def generate(cfg: SynthConfig) -> Dataset:
    """Draw unique triples and split them 80/10/10.

    Heads, relations and tails are drawn independently from Zipf
    distributions (exponent 0 is uniform). Valid/test triples that mention
    an entity or relation absent from train are moved to train.
    """
    if min(cfg.n_entities, cfg.n_relations, cfg.n_triples) < 1 or cfg.zipf_exponent < 0:
        raise ValueError(f"invalid synth config {cfg}")
    if cfg.n_triples > cfg.n_entities ** 2 * cfg.n_relations:
        raise ValueError(
            f"{cfg.n_triples} unique triples cannot be drawn from "
            f"{cfg.n_entities} entities and {cfg.n_relations} relations")
    rng = np.random.default_rng(cfg.seed)
    ent_cdf = zipf_cdf(cfg.n_entities, cfg.zipf_exponent)
    rel_cdf = zipf_cdf(cfg.n_relations, cfg.zipf_exponent)

    seen: set[tuple[int, int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    attempts, budget = 0, 100 * cfg.n_triples
    while len(triples) < cfg.n_triples:
        need = cfg.n_triples - len(triples)
        size = max(need, 64)
        attempts += size
        hs = _draw(rng, ent_cdf, size)
        rs = _draw(rng, rel_cdf, size)
        ts = _draw(rng, ent_cdf, size)
        for t in zip(hs.tolist(), rs.tolist(), ts.tolist()):
            if t not in seen:
                seen.add(t)
                triples.append(t)
                if len(triples) == cfg.n_triples:
                    break
        if attempts > budget and len(triples) < cfg.n_triples:
            raise GenerationError(
                f"only {len(triples)} of {cfg.n_triples} unique triples after {attempts} draws")

    order = rng.permutation(len(triples))
    n_train = int(round(0.8 * cfg.n_triples))
    n_valid = int(round(0.1 * cfg.n_triples))
    shuffled = [triples[i] for i in order]
    train = shuffled[:n_train]
    held = {"valid": shuffled[n_train:n_train + n_valid], "test": shuffled[n_train + n_valid:]}

    ents = {e for h, _, t in train for e in (h, t)}
    rels = {r for _, r, _ in train}
    kept = {}
    for name in ("valid", "test"):
        kept[name] = []
        for h, r, t in held[name]:
            if h in ents and t in ents and r in rels:
                kept[name].append((h, r, t))
            else:
                train.append((h, r, t))
                ents.update((h, t))
                rels.add(r)

    def named(rows):
        return [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in rows]

    return Dataset.from_named(named(train), named(kept["valid"]), named(kept["test"]))
