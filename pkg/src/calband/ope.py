"""Off-policy evaluation with capped inverse propensity scoring.

Given logs ``(x_k, a_k, mu_k, r_k)`` and a target policy ``pi``::

    V_ips    = 1/K * sum_k r_k * pi(a_k|x_k) / mu_k
    V_capped = 1/K * sum_k r_k * min(M, pi(a_k|x_k) / mu_k)

Precision@1 reuses the same capped ratios as weights in a self-normalized
hit rate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .domain import DEFAULT_CATALOG, CalbandError, InvalidRecord, LoggedTriplet


class PropensityUnderflow(CalbandError, ValueError):
    pass


class TargetProbabilityUnavailable(CalbandError, ValueError):
    pass


class MissingGroundTruth(CalbandError, ValueError):
    pass


@dataclass(frozen=True)
class OpeConfig:
    cap: float = 10.0
    min_propensity: float = 1e-4
    bootstrap_resamples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.cap >= 1.0:
            raise InvalidRecord(f"cap must be >= 1, got {self.cap}")
        if not self.min_propensity > 0:
            raise InvalidRecord("min_propensity must be positive")
        if self.bootstrap_resamples < 0:
            raise InvalidRecord("bootstrap_resamples must be >= 0")


@dataclass
class PrecisionReport:
    overall: float
    per_content: dict[str, float]
    support: dict[str, float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OpeReport:
    ips_value: float
    capped_ips_value: float
    effective_sample_size: float
    clipped_fraction: float
    ci_low: float
    ci_high: float
    n: int
    cap: float
    precision: Optional[PrecisionReport] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.precision is None:
            d["precision"] = None
        return d


TargetLike = Union[np.ndarray, Sequence[float], Callable[[LoggedTriplet], np.ndarray], None]


def _target_of_logged(logs: Sequence[LoggedTriplet], target: TargetLike,
                      actions: np.ndarray) -> np.ndarray:
    if target is None:
        raise TargetProbabilityUnavailable("no target policy probabilities given")
    if callable(target):
        probs = np.array([float(np.asarray(target(t))[t.action_index]) for t in logs])
    else:
        arr = np.asarray(target, dtype=np.float64)
        if arr.ndim == 2:
            if arr.shape[0] != len(logs):
                raise TargetProbabilityUnavailable(
                    f"{arr.shape[0]} target rows for {len(logs)} logged triplets")
            if actions.size and actions.max() >= arr.shape[1]:
                raise TargetProbabilityUnavailable("logged action outside target pmf")
            probs = arr[np.arange(len(logs)), actions]
        elif arr.ndim == 1 and arr.shape[0] == len(logs):
            probs = arr
        else:
            raise TargetProbabilityUnavailable("target probabilities have the wrong shape")
    if not np.all(np.isfinite(probs)) or np.any(probs < 0) or np.any(probs > 1):
        raise TargetProbabilityUnavailable("target probabilities must be finite and in [0, 1]")
    return probs


def importance_ratios(target_probs: np.ndarray, propensities: np.ndarray) -> np.ndarray:
    """pi/mu, exactly 1.0 wherever the two probabilities coincide."""
    t = np.asarray(target_probs, dtype=np.float64)
    m = np.asarray(propensities, dtype=np.float64)
    return np.where(t == m, 1.0, t / m)


def bootstrap_ci(values: np.ndarray, resamples: int, seed: int,
                 chunk: int = 64) -> tuple[float, float]:
    """Percentile 2.5/97.5 interval of the mean of ``values``."""
    if resamples == 0 or values.size == 0:
        return float("nan"), float("nan")
    rng = np.random.default_rng(seed)
    n = values.size
    means = np.empty(resamples)
    for start in range(0, resamples, chunk):
        b = min(chunk, resamples - start)
        idx = rng.integers(0, n, size=(b, n))
        means[start:start + b] = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def ips_estimate(logs: Sequence[LoggedTriplet], target: TargetLike,
                 cfg: Optional[OpeConfig] = None,
                 rank1_content: Optional[Sequence[int]] = None,
                 engaged_content: Optional[Sequence[int]] = None,
                 n_content: int = DEFAULT_CATALOG.size) -> OpeReport:
    """Capped and uncapped IPS value of a target policy from logged triplets.

    ``target`` gives the target policy's probabilities: a ``(K, A)`` pmf
    matrix, a length-K vector of ``pi(a_k|x_k)``, or a function mapping a
    triplet to its pmf. If ``rank1_content`` and ``engaged_content`` are
    supplied, Precision@1 weighted by the same capped ratios is attached.
    """
    cfg = cfg or OpeConfig()
    actions = np.array([t.action_index for t in logs], dtype=np.int64)
    mu = np.array([t.propensity for t in logs], dtype=np.float64)
    r = np.array([t.reward for t in logs], dtype=np.float64)
    pi = _target_of_logged(logs, target, actions)
    return ips_from_arrays(r, mu, pi, cfg, rank1_content, engaged_content, n_content)


def ips_from_arrays(rewards: np.ndarray, propensities: np.ndarray, target_probs: np.ndarray,
                    cfg: Optional[OpeConfig] = None,
                    rank1_content: Optional[Sequence[int]] = None,
                    engaged_content: Optional[Sequence[int]] = None,
                    n_content: int = DEFAULT_CATALOG.size) -> OpeReport:
    cfg = cfg or OpeConfig()
    r = np.asarray(rewards, dtype=np.float64)
    mu = np.asarray(propensities, dtype=np.float64)
    k = r.size
    if k == 0:
        raise InvalidRecord("cannot evaluate on an empty log")
    if np.any(mu < cfg.min_propensity):
        raise PropensityUnderflow(
            f"{int(np.sum(mu < cfg.min_propensity))} propensities below {cfg.min_propensity}")
    ratio = importance_ratios(target_probs, mu)
    capped = np.minimum(ratio, cfg.cap)
    # fsum is correctly rounded, so values do not depend on log order
    ips = math.fsum(r * ratio) / k
    capped_terms = r * capped
    capped_value = math.fsum(capped_terms) / k
    sq = float(np.sum(capped * capped))
    ess = float(np.sum(capped) ** 2 / sq) if sq > 0 else 0.0
    lo, hi = bootstrap_ci(capped_terms, cfg.bootstrap_resamples, cfg.seed)
    prec = None
    if rank1_content is not None or engaged_content is not None:
        if rank1_content is None or engaged_content is None:
            raise MissingGroundTruth("Precision@1 needs both rank-1 and engaged content")
        prec = precision_at_1(rank1_content, engaged_content, capped, n_content)
    return OpeReport(ips_value=ips, capped_ips_value=capped_value, effective_sample_size=ess,
                     clipped_fraction=float(np.mean(ratio > cfg.cap)),
                     ci_low=lo, ci_high=hi, n=k, cap=float(cfg.cap), precision=prec)


def precision_at_1(rank1_content: Sequence[int], engaged_content: Sequence[Optional[int]],
                   weights: Optional[np.ndarray] = None,
                   n_content: int = DEFAULT_CATALOG.size,
                   labels: Optional[Sequence[str]] = None) -> PrecisionReport:
    """Weighted hit rate of the rank-1 shelf's content type.

    A request is a hit when the user engaged with the content type shown
    at rank 1 (``engaged_content`` is -1 when there was no engagement).
    Per-content precision conditions on the rank-1 type; a type never
    shown at rank 1 gets NaN. Weights default to 1.
    """
    if engaged_content is None or any(e is None for e in engaged_content):
        raise MissingGroundTruth("engaged content missing for some requests")
    top = np.asarray(rank1_content, dtype=np.int64)
    eng = np.asarray(engaged_content, dtype=np.int64)
    if top.shape != eng.shape:
        raise MissingGroundTruth("rank-1 and engagement records differ in length")
    w = np.ones(top.size) if weights is None else np.asarray(weights, dtype=np.float64)
    labels = list(labels) if labels is not None else (
        DEFAULT_CATALOG.labels if n_content == DEFAULT_CATALOG.size
        else [str(c) for c in range(n_content)])
    hit = (top == eng).astype(np.float64)
    total = w.sum()
    overall = float(np.sum(w * hit) / total) if total > 0 else float("nan")
    per, support = {}, {}
    for c in range(n_content):
        m = top == c
        wc = float(w[m].sum())
        support[labels[c]] = wc
        per[labels[c]] = float(np.sum(w[m] * hit[m]) / wc) if wc > 0 else float("nan")
    return PrecisionReport(overall=overall, per_content=per, support=support)


def relative_lift(candidate: float, baseline: float) -> float:
    """Signed relative change ``(candidate - baseline) / baseline`` (NaN if baseline is 0)."""
    if baseline == 0 or not (math.isfinite(candidate) and math.isfinite(baseline)):
        return float("nan")
    return (candidate - baseline) / baseline
