"""Action space, logging policies, the epsilon-greedy bandit and baselines.

Every policy exposes its full probability mass function over the action
set through ``pmf(ctx)`` so that off-policy estimators can use exact
propensities. ``decide(ctx, rng)`` samples from that pmf and reports the
propensity of the sampled action.

The module-level functions (``uniform_logging``, ``gaussian_logging``,
``epsilon_greedy``, ``sc_policy``, ``mb_policy``) are single-call
conveniences over the policy classes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .domain import (
    CalbandError,
    ContentDistribution,
    InvalidRecord,
    Shelf,
    UserContext,
    validate_distribution,
)

RngLike = Union[int, np.random.Generator, None]

DEFAULT_EPSILON = 0.015
DEFAULT_SIGMA = 0.15
_TIE_ATOL = 1e-12


class UnsupportedCatalog(CalbandError, ValueError):
    pass


class ModelNotTrained(CalbandError, RuntimeError):
    pass


def as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class ActionSet:
    """Ordered, duplicate-free set of candidate target distributions."""

    actions: tuple[ContentDistribution, ...]

    def __post_init__(self):
        acts = tuple(self.actions)
        if not acts:
            raise InvalidRecord("action set must be non-empty")
        sizes = {a.size for a in acts}
        if len(sizes) != 1:
            raise InvalidRecord("all actions must share one catalog size")
        if len(set(acts)) != len(acts):
            raise InvalidRecord("actions must be pairwise distinct")
        object.__setattr__(self, "actions", acts)
        m = np.stack([a.mass for a in acts])
        m.setflags(write=False)
        object.__setattr__(self, "_matrix", m)

    @classmethod
    def grid(cls, steps: int = 10) -> "ActionSet":
        """Podcast-share grid ``0, 1/steps, ..., 1`` over (music, podcast)."""
        return cls(tuple(ContentDistribution.from_share(i / steps) for i in range(steps + 1)))

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> ContentDistribution:
        return self.actions[i]

    @property
    def matrix(self) -> np.ndarray:
        """Actions stacked as an ``(A, C)`` array."""
        return self._matrix

    @property
    def n_content(self) -> int:
        return self._matrix.shape[1]

    @property
    def podcast_shares(self) -> np.ndarray:
        if self.n_content != 2:
            raise UnsupportedCatalog("podcast share is only defined for two content types")
        return self._matrix[:, 1]

    def nearest(self, target) -> int:
        """Index of the action closest to ``target`` in L1; ties go to the lower index."""
        t = target.mass if isinstance(target, ContentDistribution) else np.asarray(target, float)
        d = np.abs(self._matrix - t[None, :]).sum(axis=1)
        return int(np.flatnonzero(d <= d.min() + _TIE_ATOL)[0])


@dataclass(frozen=True)
class PolicyDecision:
    action_index: int
    propensity: float
    exploring: bool = False


def _sample(pmf: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(pmf)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), pmf.size - 1))


class Policy:
    """Base class: subclasses implement ``pmf``."""

    name = "policy"
    deterministic = False

    def __init__(self, actions: ActionSet):
        self.actions = actions

    def pmf(self, ctx: UserContext) -> np.ndarray:
        raise NotImplementedError

    def pmf_batch(self, contexts: Sequence[UserContext]) -> np.ndarray:
        return np.stack([self.pmf(c) for c in contexts])

    def decide(self, ctx: UserContext, rng: RngLike = None) -> PolicyDecision:
        p = self.pmf(ctx)
        a = _sample(p, as_rng(rng))
        return PolicyDecision(a, float(p[a]), exploring=not self.deterministic)


def steck_share_or_uniform(ctx: UserContext, window: str, n_content: int) -> ContentDistribution:
    """The window's consumption aggregate, or the uniform prior without history."""
    agg = ctx.aggregate(window) if window in ctx.consumption_aggregates else None
    return agg if agg is not None else ContentDistribution.uniform(n_content)


class UniformLogging(Policy):
    name = "uniform"

    def pmf(self, ctx=None) -> np.ndarray:
        n = len(self.actions)
        return np.full(n, 1.0 / n)


def truncated_gaussian_pmf(center: float, shares: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian density at each grid share, renormalized over the grid.

    Renormalizing over grid points inside [0, 1] is the truncation; it
    keeps propensities exact and closed-form.
    """
    if not sigma > 0:
        raise InvalidRecord(f"sigma must be positive, got {sigma}")
    z = (shares - center) / sigma
    logd = -0.5 * z * z
    d = np.exp(logd - logd.max())
    return d / d.sum()


class GaussianLogging(Policy):
    """Truncated Gaussian exploration around the user's historical podcast share."""

    name = "gaussian"

    def __init__(self, actions: ActionSet, sigma: float = DEFAULT_SIGMA, window: str = "90d"):
        super().__init__(actions)
        if actions.n_content != 2:
            raise UnsupportedCatalog("truncated Gaussian logging needs a two-type catalog")
        if not sigma > 0:
            raise InvalidRecord(f"sigma must be positive, got {sigma}")
        self.sigma = sigma
        self.window = window

    def pmf_for(self, steck: ContentDistribution) -> np.ndarray:
        return truncated_gaussian_pmf(steck[1], self.actions.podcast_shares, self.sigma)

    def pmf(self, ctx: UserContext) -> np.ndarray:
        return self.pmf_for(steck_share_or_uniform(ctx, self.window, self.actions.n_content))


class NearestTargetPolicy(Policy):
    """Deterministic policy picking the action nearest a per-context target."""

    deterministic = True

    def target(self, ctx: UserContext) -> ContentDistribution:
        raise NotImplementedError

    def choose(self, ctx: UserContext) -> int:
        return self.actions.nearest(self.target(ctx))

    def pmf(self, ctx: UserContext) -> np.ndarray:
        p = np.zeros(len(self.actions))
        p[self.choose(ctx)] = 1.0
        return p

    def decide(self, ctx: UserContext, rng: RngLike = None) -> PolicyDecision:
        return PolicyDecision(self.choose(ctx), 1.0, exploring=False)


class SteckPolicy(NearestTargetPolicy):
    """SC baseline: historical consumption share over a fixed window."""

    def __init__(self, actions: ActionSet, window: str = "90d"):
        super().__init__(actions)
        self.window = window
        self.name = f"sc{window.rstrip('d')}"

    def target(self, ctx: UserContext) -> ContentDistribution:
        return steck_share_or_uniform(ctx, self.window, self.actions.n_content)


class BusinessMixPolicy(NearestTargetPolicy):
    """MB baseline: one fixed business target distribution for everyone.

    ``mode="sequential"`` marks that slates should be built by sampling
    content types from ``business_dist`` rank by rank (see
    :func:`mb_sequential_slate`) instead of calibrating toward the target.
    """

    name = "mb"

    def __init__(self, actions: ActionSet, business_dist, mode: str = "target"):
        super().__init__(actions)
        if mode not in ("target", "sequential"):
            raise InvalidRecord(f"unknown MB mode {mode!r}")
        self.business_dist = validate_distribution(
            business_dist.mass if isinstance(business_dist, ContentDistribution)
            else business_dist)
        self.mode = mode

    def target(self, ctx=None) -> ContentDistribution:
        return self.business_dist


class FixedActionPolicy(NearestTargetPolicy):
    def __init__(self, actions: ActionSet, action_index: int):
        super().__init__(actions)
        if not 0 <= action_index < len(actions):
            raise InvalidRecord(f"action index {action_index} out of range")
        self.action_index = action_index
        self.name = f"fixed{action_index}"

    def choose(self, ctx=None) -> int:
        return self.action_index


class EpsilonGreedyPolicy(Policy):
    """Exploit the reward model with probability 1 - epsilon, else explore.

    The greedy action is the argmax of the predicted engagement over the
    action set (lowest index on ties). Exploration delegates to a logging
    policy, and the reported propensity is the exact mixture probability
    ``(1 - eps) * 1{a = greedy} + eps * logging(a)``.
    """

    name = "cb"

    def __init__(self, actions: ActionSet, model, epsilon: float = DEFAULT_EPSILON,
                 logging: Optional[Policy] = None):
        super().__init__(actions)
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidRecord(f"epsilon must be in [0, 1], got {epsilon}")
        if model is None or not getattr(model, "trained", False):
            raise ModelNotTrained("epsilon-greedy needs a trained reward model")
        self.model = model
        self.epsilon = float(epsilon)
        self.logging = logging if logging is not None else GaussianLogging(actions)

    def scores(self, ctx: UserContext) -> np.ndarray:
        return self.model.score_actions(self.model.spec.encode_context(ctx))

    def greedy_action(self, ctx: UserContext) -> int:
        return int(np.argmax(self.scores(ctx)))

    def pmf(self, ctx: UserContext) -> np.ndarray:
        return mixture_pmf(self.greedy_action(ctx), self.logging.pmf(ctx), self.epsilon)

    def pmf_batch(self, contexts: Sequence[UserContext]) -> np.ndarray:
        if not contexts:
            return np.zeros((0, len(self.actions)))
        feats = np.stack([self.model.spec.encode_context(c) for c in contexts])
        greedy = np.argmax(self.model.score_actions_batch(feats), axis=1)
        log = self.logging.pmf_batch(contexts)
        out = self.epsilon * log
        out[np.arange(len(contexts)), greedy] += 1.0 - self.epsilon
        return out

    def decide(self, ctx: UserContext, rng: RngLike = None) -> PolicyDecision:
        return _epsilon_greedy_draw(self.greedy_action(ctx), self.logging.pmf(ctx),
                                    self.epsilon, as_rng(rng))


def mixture_pmf(greedy: int, logging_pmf: np.ndarray, epsilon: float) -> np.ndarray:
    out = epsilon * np.asarray(logging_pmf, dtype=np.float64)
    out[greedy] += 1.0 - epsilon
    return out


def _epsilon_greedy_draw(greedy: int, logging_pmf: np.ndarray, epsilon: float,
                         rng: np.random.Generator) -> PolicyDecision:
    # draw order is fixed (explore coin, then logging sample) for replayability
    explore = rng.random() < epsilon
    a = _sample(logging_pmf, rng) if explore else greedy
    prop = (1.0 - epsilon) * (a == greedy) + epsilon * float(logging_pmf[a])
    return PolicyDecision(a, float(prop), exploring=bool(explore))


# -- single-call forms -----------------------------------------------------

def uniform_logging(ctx: Optional[UserContext], actions: ActionSet,
                    rng_seed: RngLike = None) -> PolicyDecision:
    return UniformLogging(actions).decide(ctx, rng_seed)


def gaussian_logging(ctx: Optional[UserContext], steck_p: ContentDistribution,
                     actions: ActionSet, sigma: float = DEFAULT_SIGMA,
                     rng_seed: RngLike = None) -> PolicyDecision:
    pol = GaussianLogging(actions, sigma)
    if steck_p.size != 2:
        raise UnsupportedCatalog("truncated Gaussian logging needs a two-type catalog")
    p = pol.pmf_for(steck_p)
    a = _sample(p, as_rng(rng_seed))
    return PolicyDecision(a, float(p[a]), exploring=True)


def epsilon_greedy(ctx_features: np.ndarray, actions: ActionSet, model,
                   epsilon: float, logging, rng_seed: RngLike = None) -> PolicyDecision:
    """Epsilon-greedy decision from already-encoded context features.

    ``logging`` is the exploration pmf over ``actions`` for this context,
    or a policy whose ``pmf`` ignores the context (e.g. uniform).
    """
    if model is None or not getattr(model, "trained", False):
        raise ModelNotTrained("epsilon-greedy needs a trained reward model")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidRecord(f"epsilon must be in [0, 1], got {epsilon}")
    log_pmf = logging.pmf(None) if isinstance(logging, Policy) else np.asarray(logging, float)
    if log_pmf.shape != (len(actions),):
        raise InvalidRecord("logging pmf does not match the action set")
    greedy = int(np.argmax(model.score_actions(np.asarray(ctx_features, float))))
    return _epsilon_greedy_draw(greedy, log_pmf, epsilon, as_rng(rng_seed))


def sc_policy(ctx: UserContext, window: str, actions: ActionSet) -> PolicyDecision:
    return SteckPolicy(actions, window).decide(ctx)


def mb_policy(actions: ActionSet, business_dist, rng_seed: RngLike = None) -> PolicyDecision:
    return BusinessMixPolicy(actions, business_dist).decide(None)


def mb_sequential_slate(candidates: Sequence[Shelf], business_dist: ContentDistribution,
                        slate_size: int, rng: RngLike = None) -> list[int]:
    """Literal blending: sample a content type per rank, take its best remaining shelf.

    Returns candidate indices in rank order. If the sampled type has no
    shelves left, the best remaining shelf of any type is used.
    """
    g = as_rng(rng)
    rel = np.array([s.relevance for s in candidates])
    dom = np.array([s.dist.dominant() for s in candidates])
    left = np.ones(len(candidates), dtype=bool)
    out = []
    for _ in range(slate_size):
        c = _sample(business_dist.mass, g)
        pool = np.flatnonzero(left & (dom == c))
        if pool.size == 0:
            pool = np.flatnonzero(left)
        pick = int(pool[np.argmax(rel[pool])])
        out.append(pick)
        left[pick] = False
    return out
