"""Synthetic users with context-dependent podcast preferences.

Each user belongs to a cohort whose preferred podcast share follows a
weekly and a daily sinusoid, shifted by a per-user offset. Users listen
organically every day (this feeds their 7d/30d/90d consumption
aggregates) and issue Home requests. A request's engagement probability
depends only on how far the slate's rank-weighted podcast share is from
the user's preferred share at that moment::

    P(engage) = base_engagement * exp(-steepness * |q_podcast - preferred|)

When a user engages, the streamed shelf is drawn with probability
proportional to its rank weight times the user's affinity for its
content, and the stream is appended to the user's history.

All randomness is derived from ``(seed, stream, user_index)`` so users can
be simulated in any order, or in parallel, with identical results.
Request times, candidates and organic listening come from one stream;
rewards and policy draws each have their own, so two policies run on the
same seed see the same requests and candidates.
"""
from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from .calibration import CalibrationConfig, greedy_indices, rank_weights
from .domain import (
    DEFAULT_CATALOG,
    PODCAST,
    ContentDistribution,
    InvalidRecord,
    LoggedTriplet,
    Shelf,
    UserContext,
)
from .io import context_from_dict, context_to_dict
from .policy import ActionSet, BusinessMixPolicy, NearestTargetPolicy, Policy, mb_sequential_slate
from .reward_model import FeatureSpec

DAY = 86_400
HOUR = 3_600
# 2024-01-01 00:00 UTC, a Monday
DEFAULT_START = 1_704_067_200

_STREAM_TRAFFIC = 1
_STREAM_REWARD = 2
_STREAM_POLICY = 3
_STREAM_POPULATION = 0


@dataclass(frozen=True)
class CohortProfile:
    """Preference dynamics and engagement sensitivity of one user cohort."""

    cohort_id: int
    base_podcast_share: float
    weekly_amplitude: float = 0.0
    daily_amplitude: float = 0.0
    weekly_phase: float = 0.0
    daily_phase: float = 0.0
    engagement_steepness: float = 3.0
    base_engagement: float = 0.6
    label: str = ""

    def __post_init__(self):
        if not 0.0 <= self.base_podcast_share <= 1.0:
            raise InvalidRecord("base_podcast_share must be in [0, 1]")
        if not self.engagement_steepness > 0:
            raise InvalidRecord("engagement_steepness must be positive")
        if not 0.0 < self.base_engagement < 1.0:
            raise InvalidRecord("base_engagement must be in (0, 1)")


def default_cohorts() -> tuple[CohortProfile, ...]:
    """Three synthetic cohorts: music-first, commuters, podcast-leaning.

    Parameters are invented for the simulation; they only echo the shape
    of real cohort curves (different levels, daily and weekly cycles with
    different phases).
    """
    return (
        CohortProfile(0, 0.12, weekly_amplitude=0.05, daily_amplitude=0.08,
                      weekly_phase=0.0, daily_phase=0.0, engagement_steepness=3.0,
                      base_engagement=0.65, label="music-first"),
        CohortProfile(1, 0.35, weekly_amplitude=0.12, daily_amplitude=0.20,
                      weekly_phase=1.0, daily_phase=-1.2, engagement_steepness=3.0,
                      base_engagement=0.6, label="commuters"),
        CohortProfile(2, 0.55, weekly_amplitude=0.15, daily_amplitude=0.20,
                      weekly_phase=2.5, daily_phase=2.0, engagement_steepness=3.0,
                      base_engagement=0.55, label="podcast-leaning"),
    )


def preferred_share(cohort: CohortProfile, hour: int, day: int, offset: float = 0.0) -> float:
    """Cohort's preferred podcast share at (hour of day, day of week), clamped to [0, 1].

    ``offset`` shifts the curve for an individual user.
    """
    v = (cohort.base_podcast_share + offset
         + cohort.weekly_amplitude * math.sin(2.0 * math.pi * day / 7.0 + cohort.weekly_phase)
         + cohort.daily_amplitude * math.sin(2.0 * math.pi * hour / 24.0 + cohort.daily_phase))
    return min(1.0, max(0.0, v))


def engagement_probability(cohort: CohortProfile, slate_q, preferred: float) -> float:
    """Ground-truth chance that a user engages with a slate of content mix ``slate_q``."""
    q = slate_q.mass if isinstance(slate_q, ContentDistribution) else np.asarray(slate_q)
    mismatch = abs(float(q[PODCAST]) - preferred)
    return cohort.base_engagement * math.exp(-cohort.engagement_steepness * mismatch)


WINDOWS = (("7d", 7), ("30d", 30), ("90d", 90))


@dataclass
class SimConfig:
    num_users: int = 2000
    cohorts: tuple[CohortProfile, ...] = field(default_factory=default_cohorts)
    candidates_per_request: int = 20
    slate_size: int = 5
    horizon_days: int = 21
    train_days: int = 14
    requests_per_user_per_day: float = 2.0
    seed: int = 0
    countries: tuple[str, ...] = ("SE", "US", "BR", "DE", "JP")
    devices: tuple[str, ...] = ("mobile", "desktop", "tv")
    history_days: int = 90
    organic_sessions_per_day: float = 0.5
    activity_shape: float = 0.5
    mean_stream_seconds: float = 1200.0
    user_share_sd: float = 0.08
    podcast_candidate_fraction: float = 0.4
    relevance_mean: tuple[float, float] = (0.55, 0.5)
    relevance_sd: float = 0.15
    start_timestamp: int = DEFAULT_START
    windows: tuple[tuple[str, int], ...] = WINDOWS

    def __post_init__(self):
        self.cohorts = tuple(c if isinstance(c, CohortProfile) else CohortProfile(**c)
                             for c in self.cohorts)
        self.countries = tuple(self.countries)
        self.devices = tuple(self.devices)
        self.relevance_mean = tuple(self.relevance_mean)
        self.windows = tuple((str(n), int(d)) for n, d in self.windows)
        if self.num_users < 1:
            raise InvalidRecord("num_users must be >= 1")
        if not self.cohorts:
            raise InvalidRecord("need at least one cohort")
        if [c.cohort_id for c in self.cohorts] != list(range(len(self.cohorts))):
            raise InvalidRecord("cohort ids must be 0..K-1 in order")
        if self.candidates_per_request < self.slate_size:
            raise InvalidRecord("candidates_per_request must be >= slate_size")
        if not 0 <= self.train_days <= self.horizon_days:
            raise InvalidRecord("train_days must lie within the horizon")
        if self.requests_per_user_per_day < 0 or self.organic_sessions_per_day < 0:
            raise InvalidRecord("rates must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cohorts"] = [asdict(c) for c in self.cohorts]
        d["countries"] = list(self.countries)
        d["devices"] = list(self.devices)
        d["relevance_mean"] = list(self.relevance_mean)
        d["windows"] = [list(w) for w in self.windows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "windows" in d:
            d["windows"] = tuple(tuple(w) for w in d["windows"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def feature_spec(self, actions: ActionSet, embedding_dim: int = 4) -> FeatureSpec:
        """Feature spec covering every context attribute the simulator produces."""
        return FeatureSpec(
            action_grid=tuple(tuple(a.to_list()) for a in actions.actions),
            windows=tuple(n for n, _ in self.windows),
            n_content=DEFAULT_CATALOG.size,
            categorical=(("cohort", tuple(str(c.cohort_id) for c in self.cohorts)),
                         ("country", self.countries),
                         ("device", self.devices)),
            temporal=True,
            embedding_dim=embedding_dim,
        )

    @property
    def train_end_timestamp(self) -> int:
        return self.start_timestamp + self.train_days * DAY


def _rng(seed: int, stream: int, user: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, user]))


@dataclass(frozen=True)
class UserProfile:
    index: int
    user_id: str
    cohort: CohortProfile
    country: str
    device: str
    share_offset: float
    activity: float = 1.0
    tz_offset_hours: int = 0

    def local_time(self, ts: int, start_timestamp: int) -> tuple[int, int]:
        """(hour of day, day of week with Monday = 0) at ``ts``."""
        local = ts + self.tz_offset_hours * HOUR
        days = local // DAY
        return int((local % DAY) // HOUR), int((days + 3) % 7)

    def preferred(self, hour: int, day: int) -> float:
        return preferred_share(self.cohort, hour, day, self.share_offset)


def make_population(cfg: SimConfig) -> list[UserProfile]:
    users = []
    for u in range(cfg.num_users):
        g = _rng(cfg.seed, _STREAM_POPULATION, u)
        cohort = cfg.cohorts[int(g.integers(len(cfg.cohorts)))]
        users.append(UserProfile(
            index=u, user_id=f"u{u:05d}", cohort=cohort,
            country=cfg.countries[int(g.integers(len(cfg.countries)))],
            device=cfg.devices[int(g.integers(len(cfg.devices)))],
            share_offset=float(g.normal(0.0, cfg.user_share_sd)) if cfg.user_share_sd > 0 else 0.0,
            activity=(float(g.gamma(cfg.activity_shape, 1.0 / cfg.activity_shape))
                      if cfg.activity_shape > 0 else 1.0),
        ))
    return users


class UserHistory:
    """Append-only, time-ordered stream log with rolling per-window content shares.

    Per-content prefix sums of stream seconds make each window lookup two
    binary searches.
    """

    def __init__(self, n_content: int, windows: Sequence[tuple[str, int]]):
        self.n_content = n_content
        self.windows = tuple(windows)
        self.ts: list[int] = []
        self.content: list[int] = []
        self.seconds: list[float] = []
        self._cum: list[list[float]] = [[0.0] for _ in range(n_content)]

    def add(self, ts: int, content: int, seconds: float) -> None:
        if self.ts and ts < self.ts[-1]:
            raise InvalidRecord("history events must be added in time order")
        self.ts.append(int(ts))
        self.content.append(int(content))
        self.seconds.append(float(seconds))
        for c, cum in enumerate(self._cum):
            cum.append(cum[-1] + (float(seconds) if c == content else 0.0))

    def aggregates(self, now: int) -> dict[str, np.ndarray]:
        """Stream-time share per content type over each window ending before ``now``."""
        end = bisect.bisect_left(self.ts, now)
        out = {}
        for name, days in self.windows:
            start = bisect.bisect_left(self.ts, now - days * DAY, 0, end)
            tot = [cum[end] - cum[start] for cum in self._cum]
            total = sum(tot)
            out[name] = (np.array(tot) / total if total > 0
                         else np.zeros(self.n_content))
        return out


@dataclass
class Request:
    """One Home request: context, candidates, and ground truth for diagnostics."""

    request_id: str
    user: UserProfile
    ctx: UserContext
    timestamp: int
    day_index: int
    preferred: float
    relevance: np.ndarray
    dists: np.ndarray
    rng_reward: np.random.Generator
    rng_policy: np.random.Generator
    history: UserHistory

    @property
    def candidates(self) -> list[Shelf]:
        return [Shelf(f"c{j:03d}", float(r), ContentDistribution(d))
                for j, (r, d) in enumerate(zip(self.relevance, self.dists))]

    def record_stream(self, content: int, seconds: float) -> None:
        self.history.add(self.timestamp, content, seconds)


def _organic_session(user: UserProfile, cfg: SimConfig, g: np.random.Generator,
                     ts: int) -> tuple[int, int, float]:
    hour, dow = user.local_time(ts, cfg.start_timestamp)
    content = PODCAST if g.random() < user.preferred(hour, dow) else 0
    return ts, content, float(g.exponential(cfg.mean_stream_seconds))


def _day_times(g: np.random.Generator, rate: float, day_start: int) -> list[int]:
    n = int(g.poisson(rate)) if rate > 0 else 0
    return sorted(int(day_start + t) for t in g.integers(0, DAY, size=n))


def _user_requests(user: UserProfile, cfg: SimConfig, traffic_seed: int,
                   first_day: int, n_days: int) -> Iterator[Request]:
    g = _rng(traffic_seed, _STREAM_TRAFFIC, user.index)
    rng_reward = _rng(traffic_seed, _STREAM_REWARD, user.index)
    rng_policy = _rng(traffic_seed, _STREAM_POLICY, user.index)
    hist = UserHistory(DEFAULT_CATALOG.size, cfg.windows)

    organic_rate = cfg.organic_sessions_per_day * user.activity
    for d in range(first_day - cfg.history_days, first_day):
        for ts in _day_times(g, organic_rate, cfg.start_timestamp + d * DAY):
            hist.add(*_organic_session(user, cfg, g, ts))

    n_cand = cfg.candidates_per_request
    k = 0
    for d in range(first_day, first_day + n_days):
        day_start = cfg.start_timestamp + d * DAY
        organic = _day_times(g, organic_rate, day_start)
        requests = _day_times(g, cfg.requests_per_user_per_day, day_start)
        # organic sessions sort before requests at the same second
        events = sorted([(t, 0) for t in organic] + [(t, 1) for t in requests])
        for ts, kind in events:
            if kind == 0:
                hist.add(*_organic_session(user, cfg, g, ts))
                continue
            hour, dow = user.local_time(ts, cfg.start_timestamp)
            is_pod = g.random(n_cand) < cfg.podcast_candidate_fraction
            means = np.where(is_pod, cfg.relevance_mean[1], cfg.relevance_mean[0])
            rel = np.clip(means + cfg.relevance_sd * g.standard_normal(n_cand), 0.0, 1.0)
            dists = np.zeros((n_cand, DEFAULT_CATALOG.size))
            dists[np.arange(n_cand), is_pod.astype(np.int64)] = 1.0
            ctx = UserContext(user.user_id, user.cohort.cohort_id, user.country, user.device,
                              hour, dow, hist.aggregates(ts))
            yield Request(f"{user.user_id}-{k:05d}", user, ctx, ts, d,
                          user.preferred(hour, dow), rel, dists, rng_reward, rng_policy, hist)
            k += 1


def generate_requests(cfg: SimConfig, traffic_seed: Optional[int] = None,
                      first_day: int = 0, n_days: Optional[int] = None) -> Iterator[Request]:
    """Stream requests user by user, each user's requests in time order.

    The caller may call ``request.record_stream(...)`` before advancing the
    iterator to add an engagement to the user's history; later requests'
    aggregates then include it.
    """
    seed = cfg.seed if traffic_seed is None else traffic_seed
    days = cfg.horizon_days if n_days is None else n_days
    for user in make_population(cfg):
        yield from _user_requests(user, cfg, seed, first_day, days)


class OraclePolicy(NearestTargetPolicy):
    """Cheating baseline: the grid point nearest the user's true preferred share."""

    name = "oracle"

    def __init__(self, actions: ActionSet, cfg: SimConfig):
        super().__init__(actions)
        self._users = {u.user_id: u for u in make_population(cfg)}

    def target(self, ctx: UserContext) -> ContentDistribution:
        u = self._users[ctx.user_id]
        return ContentDistribution.from_share(u.preferred(ctx.hour_of_day, ctx.day_of_week))


@dataclass
class Episode:
    """Diagnostics for one served request."""

    request_id: str
    user_id: str
    cohort_id: int
    timestamp: int
    day_index: int
    split: str
    context: UserContext
    action_index: int
    propensity: float
    exploring: bool
    slate: list[str]
    rank1_content: int
    slate_q: list[float]
    preferred_share: float
    engagement_prob: float
    reward: int
    engaged_content: int
    engaged_rank: int
    policy: str = ""


def episode_to_dict(e: Episode) -> dict:
    d = {f.name: getattr(e, f.name) for f in fields(Episode)}
    d["context"] = context_to_dict(e.context)
    d["slate_q"] = [float(v) for v in e.slate_q]
    return d


def episode_from_dict(d: dict) -> Episode:
    d = dict(d)
    d["context"] = context_from_dict(d["context"])
    return Episode(**{f.name: d[f.name] for f in fields(Episode)})


PolicyLike = Union[Policy, Callable[[UserProfile], Policy]]


def _engaged_shelf(dists: np.ndarray, weights: np.ndarray, preferred: float, u: float) -> int:
    affinity = dists @ np.array([1.0 - preferred, preferred])
    score = weights * affinity
    if score.sum() <= 0:
        score = weights
    cdf = np.cumsum(score)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(score) - 1))


def serve(req: Request, policy: Policy, actions: ActionSet, calibration: CalibrationConfig):
    """Run one request end to end and return ``(decision, episode fields)``.

    Draw order on the reward stream is fixed (engage coin, shelf pick,
    stream length) so realizations stay aligned across policies.
    """
    decision = policy.decide(req.ctx, req.rng_policy)
    target = actions[decision.action_index].mass
    if isinstance(policy, BusinessMixPolicy) and policy.mode == "sequential":
        order = mb_sequential_slate(req.candidates, policy.business_dist,
                                    calibration.slate_size, req.rng_policy)
    else:
        order = greedy_indices(req.relevance, req.dists, target, calibration)
    w = rank_weights(calibration.slate_size, calibration.rank_weighting)
    sd = req.dists[order]
    q = (w @ sd) / w.sum()
    p = engagement_probability(req.user.cohort, q, req.preferred)
    u_engage, u_shelf = req.rng_reward.random(2)
    seconds = float(req.rng_reward.exponential(1.0))
    reward = int(u_engage < p)
    engaged_content, engaged_rank = -1, -1
    if reward:
        r = _engaged_shelf(sd, w, req.preferred, u_shelf)
        engaged_rank = r + 1
        engaged_content = int(np.argmax(sd[r]))
    return decision, order, q, p, reward, engaged_content, engaged_rank, seconds


def run_logging(cfg: SimConfig, policy: PolicyLike, calibration: CalibrationConfig,
                actions: Optional[ActionSet] = None, spec: Optional[FeatureSpec] = None,
                traffic_seed: Optional[int] = None, first_day: int = 0,
                n_days: Optional[int] = None) -> tuple[list[LoggedTriplet], list[Episode]]:
    """Serve simulated traffic with ``policy`` and log bandit feedback.

    For each request the policy picks a target distribution, the greedy
    constructor builds the slate, a Bernoulli reward is drawn from the
    ground-truth engagement probability, and a triplet is emitted.
    ``policy`` may also be a function of the user (for split traffic).
    Requests on days before ``cfg.train_days`` are tagged ``train``, the
    rest ``eval``.
    """
    if calibration.slate_size != cfg.slate_size:
        raise InvalidRecord(f"calibration slate size {calibration.slate_size} != "
                            f"simulator slate size {cfg.slate_size}")
    actions = actions or ActionSet.grid()
    spec = spec or cfg.feature_spec(actions)
    route = policy if not isinstance(policy, Policy) else (lambda _u: policy)
    triplets, episodes = [], []
    for req in generate_requests(cfg, traffic_seed, first_day, n_days):
        pol = route(req.user)
        decision, order, q, p, reward, ec, er, seconds = serve(req, pol, actions, calibration)
        if reward:
            req.record_stream(ec, seconds * cfg.mean_stream_seconds)
        triplets.append(LoggedTriplet(spec.encode_context(req.ctx), decision.action_index,
                                      decision.propensity, reward, req.timestamp))
        episodes.append(Episode(
            request_id=req.request_id, user_id=req.user.user_id,
            cohort_id=req.user.cohort.cohort_id, timestamp=req.timestamp,
            day_index=req.day_index,
            split="train" if req.day_index < cfg.train_days else "eval",
            context=req.ctx, action_index=decision.action_index,
            propensity=decision.propensity, exploring=decision.exploring,
            slate=[f"c{j:03d}" for j in order],
            rank1_content=int(np.argmax(req.dists[order[0]])),
            slate_q=[float(v) for v in q], preferred_share=req.preferred,
            engagement_prob=p, reward=reward, engaged_content=ec, engaged_rank=er,
            policy=getattr(pol, "name", "")))
    return triplets, episodes


def expected_value(cfg: SimConfig, policy: Policy, calibration: CalibrationConfig,
                   actions: Optional[ActionSet] = None, traffic_seed: Optional[int] = None,
                   first_day: int = 0, n_days: Optional[int] = None,
                   max_requests: Optional[int] = None) -> float:
    """Mean ground-truth engagement probability of ``policy`` over a traffic stream.

    No rewards are drawn and nothing is added to user histories, so
    contexts carry organic listening only. For policies that ignore the
    context (fixed or business-mix targets) this is exactly the on-policy
    value of the requests that :func:`run_logging` would serve with the
    same seed. ``max_requests`` stops after that many requests, matching a
    log truncated to its first ``max_requests`` triplets.
    """
    actions = actions or ActionSet.grid()
    w = rank_weights(calibration.slate_size, calibration.rank_weighting)
    total, n = 0.0, 0
    for req in generate_requests(cfg, traffic_seed, first_day, n_days):
        if max_requests is not None and n >= max_requests:
            break
        a = policy.decide(req.ctx, req.rng_policy).action_index
        order = greedy_indices(req.relevance, req.dists, actions[a].mass, calibration)
        q = (w @ req.dists[order]) / w.sum()
        total += engagement_probability(req.user.cohort, q, req.preferred)
        n += 1
    if n == 0:
        raise InvalidRecord("no requests in the traffic window")
    return total / n
