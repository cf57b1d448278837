"""Calibration math and slate construction.

The slate objective trades the summed relevance of the chosen shelves
against the KL divergence between a target content-type distribution and
the rank-weighted content mix of the slate::

    objective(I) = (1 - lam) * sum_i s(i) - lam * KL(p || q(I))

``greedy_construct`` builds the slate one rank at a time;
``brute_force_construct`` enumerates every ordered slate and is only meant
as a test oracle on tiny instances.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import (
    CalbandError,
    ContentDistribution,
    DimensionMismatch,
    InvalidRecord,
    Interaction,
    Shelf,
    Slate,
    validate_distribution,
)

RANK_WEIGHTINGS = ("uniform", "mrr", "ndcg")


class EmptySlate(CalbandError, ValueError):
    pass


class EmptyHistory(CalbandError, ValueError):
    pass


class InsufficientCandidates(CalbandError, ValueError):
    pass


class InstanceTooLarge(CalbandError, ValueError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    """Slate-construction settings.

    Parameters
    ----------
    lam : float
        Trade-off in [0, 1]; 0 is pure relevance, 1 is pure calibration.
    slate_size : int
        Number of shelves N in a slate.
    rank_weighting : str
        ``"uniform"``, ``"mrr"`` (1/r) or ``"ndcg"`` (1/log2(r+1)).
    smoothing_alpha : float
        Mix of the target into the slate distribution before taking logs.
    """

    lam: float = 0.5
    slate_size: int = 5
    rank_weighting: str = "mrr"
    smoothing_alpha: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidRecord(f"lam must be in [0, 1], got {self.lam}")
        if self.slate_size < 1:
            raise InvalidRecord(f"slate_size must be >= 1, got {self.slate_size}")
        if self.rank_weighting not in RANK_WEIGHTINGS:
            raise InvalidRecord(f"unknown rank_weighting {self.rank_weighting!r}")
        if not 0.0 <= self.smoothing_alpha <= 0.1:
            raise InvalidRecord(
                f"smoothing_alpha must be in [0, 0.1], got {self.smoothing_alpha}")


def rank_weights(n: int, scheme: str = "mrr") -> np.ndarray:
    """Position weights for ranks ``1..n``."""
    ranks = np.arange(1, n + 1, dtype=np.float64)
    if scheme == "uniform":
        return np.ones(n)
    if scheme == "mrr":
        return 1.0 / ranks
    if scheme == "ndcg":
        return 1.0 / np.log2(ranks + 1.0)
    raise InvalidRecord(f"unknown rank weighting {scheme!r}")


def _mass(d) -> np.ndarray:
    return d.mass if isinstance(d, ContentDistribution) else np.asarray(d, dtype=np.float64)


def _kl_rows(p: np.ndarray, q: np.ndarray, alpha: float) -> np.ndarray:
    """KL(p || (1-alpha) q + alpha p) for each row of ``q`` (nats)."""
    q_s = (1.0 - alpha) * q + alpha * p
    support = p > 0
    ps = p[support]
    qs = q_s[..., support]
    with np.errstate(divide="ignore"):
        terms = ps * (np.log(ps) - np.log(qs))
    return np.maximum(terms.sum(axis=-1), 0.0)


def kl_divergence(target, empirical, alpha: float = 0.01) -> float:
    """KL divergence of a smoothed empirical distribution from the target.

    The empirical side is first mixed toward the target,
    ``q~ = (1 - alpha) q + alpha p``, so the result is finite whenever
    ``alpha > 0``. Entries with zero target mass contribute nothing.

    Examples
    --------
    >>> round(kl_divergence([0.5, 0.5], [0.75, 0.25], alpha=0.0), 6)
    0.143841
    """
    p = _mass(target)
    q = _mass(empirical)
    if p.shape != q.shape:
        raise DimensionMismatch(f"target has {p.size} types, empirical has {q.size}")
    return float(_kl_rows(p, q, alpha))


def _slate_mass(dists: np.ndarray, weights: np.ndarray) -> np.ndarray:
    acc = np.zeros(dists.shape[1])
    for w, d in zip(weights, dists):
        acc = acc + w * d
    return acc / weights.sum()


def empirical_distribution(slate: Slate) -> ContentDistribution:
    """Rank-weighted content-type distribution of a slate."""
    if len(slate) == 0:
        raise EmptySlate("cannot take the distribution of an empty slate")
    dists = np.stack([s.dist.mass for s in slate.shelves])
    return validate_distribution(_slate_mass(dists, slate.weights))


def steck_target(history: Sequence[Interaction]) -> ContentDistribution:
    """Interaction-weighted average of the consumed shelves' distributions."""
    if len(history) == 0:
        raise EmptyHistory("no interactions to estimate a target from")
    weights = np.array([it.weight for it in history], dtype=np.float64)
    dists = np.stack([it.shelf_dist.mass for it in history])
    return validate_distribution(weights @ dists / weights.sum())


def _ordered_objective(rel: np.ndarray, dists: np.ndarray, weights: np.ndarray,
                       p: np.ndarray, cfg: CalibrationConfig) -> float:
    rel_sum = math.fsum(rel.tolist())
    # lam == 0 must ignore an infinite KL rather than produce nan.
    if cfg.lam == 0.0:
        return (1.0 - cfg.lam) * rel_sum
    kl = float(_kl_rows(p, _slate_mass(dists, weights), cfg.smoothing_alpha))
    return (1.0 - cfg.lam) * rel_sum - cfg.lam * kl


def slate_objective(slate: Slate, target, cfg: CalibrationConfig) -> float:
    """Relevance/calibration trade-off of a complete slate."""
    if len(slate) == 0:
        raise EmptySlate("objective of an empty slate is undefined")
    p = _mass(target)
    dists = np.stack([s.dist.mass for s in slate.shelves])
    if dists.shape[1] != p.shape[0]:
        raise DimensionMismatch(f"target has {p.size} types, slate has {dists.shape[1]}")
    rel = np.array([s.relevance for s in slate.shelves])
    return _ordered_objective(rel, dists, slate.weights, p, cfg)


def greedy_indices(relevance: np.ndarray, dists: np.ndarray, target: np.ndarray,
                   cfg: CalibrationConfig, ids: Sequence[str] | None = None) -> list[int]:
    """Array form of :func:`greedy_construct`; returns candidate indices in rank order.

    ``dists`` has one row per candidate. When ``ids`` is None candidates
    are tie-broken by their index instead of their shelf id.
    """
    n_cand = relevance.shape[0]
    n = cfg.slate_size
    if n_cand < n:
        raise InsufficientCandidates(f"need {n} candidates, got {n_cand}")
    if dists.shape[1] != target.shape[0]:
        raise DimensionMismatch(
            f"target has {target.shape[0]} types, shelves have {dists.shape[1]}")
    w = rank_weights(n, cfg.rank_weighting)
    if ids is None:
        id_rank = np.arange(n_cand)
    else:
        id_rank = np.empty(n_cand, dtype=np.int64)
        id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(n_cand)

    # Candidates sharing a content distribution differ only in relevance, so
    # each step need only score the best available member of every group.
    # Arrays here are tiny; plain floats beat numpy call overhead.
    rel = relevance.tolist()
    ranks = id_rank.tolist()
    rows = dists.tolist()
    groups: dict[tuple, list[int]] = {}
    for i in sorted(range(n_cand), key=lambda i: (-rel[i], ranks[i])):
        groups.setdefault(tuple(rows[i]), []).append(i)
    keys = list(groups)
    queues = [groups[k] for k in keys]
    heads = [0] * len(keys)
    p = target.tolist()
    support = [(c, pc, math.log(pc)) for c, pc in enumerate(p) if pc > 0]
    alpha, lam = cfg.smoothing_alpha, cfg.lam
    chosen: list[int] = []
    acc = [0.0] * len(p)
    w_sum = 0.0
    rel_sum = 0.0
    for r in range(n):
        wr = float(w[r])
        w_new = w_sum + wr
        best_key = None
        best_g = -1
        for g, key in enumerate(keys):
            if heads[g] == len(queues[g]):
                continue
            i = queues[g][heads[g]]
            obj = (1.0 - lam) * (rel_sum + rel[i])
            if lam != 0.0:
                kl = 0.0
                for c, pc, log_pc in support:
                    qs = (1.0 - alpha) * ((acc[c] + wr * key[c]) / w_new) + alpha * pc
                    kl = kl + (pc * (log_pc - math.log(qs)) if qs > 0 else math.inf)
                obj = obj - lam * max(kl, 0.0)
            # objective desc, relevance desc, shelf id asc
            k = (-obj, -rel[i], ranks[i])
            if best_key is None or k < best_key:
                best_key, best_g = k, g
        pick = queues[best_g][heads[best_g]]
        heads[best_g] += 1
        chosen.append(pick)
        row = keys[best_g]
        acc = [a + wr * d for a, d in zip(acc, row)]
        w_sum = w_new
        rel_sum = rel_sum + rel[pick]
    return chosen


def _unpack(candidates: Sequence[Shelf], target):
    ids = [s.shelf_id for s in candidates]
    if len(set(ids)) != len(ids):
        raise InvalidRecord("candidate shelf ids must be unique")
    rel = np.array([s.relevance for s in candidates], dtype=np.float64)
    dists = np.stack([s.dist.mass for s in candidates]) if candidates else np.zeros((0, 0))
    return ids, rel, dists, _mass(target)


def greedy_construct(candidates: Sequence[Shelf], target, cfg: CalibrationConfig) -> Slate:
    """Build a slate greedily, one rank at a time.

    At each step the candidate that maximizes the objective of the extended
    slate is appended. Exact ties go to the higher relevance, then to the
    lexicographically smaller shelf id.
    """
    if len(candidates) < cfg.slate_size:
        raise InsufficientCandidates(
            f"need {cfg.slate_size} candidates, got {len(candidates)}")
    ids, rel, dists, p = _unpack(candidates, target)
    order = greedy_indices(rel, dists, p, cfg, ids)
    return Slate(tuple(candidates[i] for i in order),
                 rank_weights(cfg.slate_size, cfg.rank_weighting))


def brute_force_construct(candidates: Sequence[Shelf], target,
                          cfg: CalibrationConfig) -> Slate:
    """Exact maximizer of the slate objective by enumerating ordered slates.

    Limited to 10 candidates and N <= 4. Ties are resolved position by
    position with the same rule as the greedy constructor.
    """
    n = cfg.slate_size
    if len(candidates) > 10 or n > 4:
        raise InstanceTooLarge(
            f"brute force limited to 10 candidates and N <= 4, got "
            f"{len(candidates)} and {n}")
    if len(candidates) < n:
        raise InsufficientCandidates(f"need {n} candidates, got {len(candidates)}")
    ids, rel, dists, p = _unpack(candidates, target)
    if dists.shape[1] != p.shape[0]:
        raise DimensionMismatch(f"target has {p.size} types, shelves have {dists.shape[1]}")
    w = rank_weights(n, cfg.rank_weighting)

    best_key = None
    best_perm = None
    for perm in itertools.permutations(range(len(candidates)), n):
        idx = list(perm)
        obj = _ordered_objective(rel[idx], dists[idx], w, p, cfg)
        # maximize obj, then per position: higher relevance, smaller id
        key = (obj, tuple((rel[i], _neg_str(ids[i])) for i in perm))
        if best_key is None or _key_gt(key, best_key):
            best_key = key
            best_perm = perm
    return Slate(tuple(candidates[i] for i in best_perm), w)


class _neg_str(str):
    """String whose ordering is reversed, so max() prefers the smaller id."""

    def __lt__(self, other):
        return str.__gt__(self, other)

    def __gt__(self, other):
        return str.__lt__(self, other)


def _key_gt(a, b) -> bool:
    if a[0] != b[0]:
        return a[0] > b[0]
    return a[1] > b[1]
