"""Core vocabulary types: content types, distributions, shelves, slates,
user contexts, interactions and logged bandit triplets.

All types are immutable once built. Numeric vectors are stored as
read-only float64 numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DIST_ATOL = 1e-9
INGEST_ATOL = 1e-6


class CalbandError(Exception):
    """Base class for every error raised by this package."""


class NegativeMass(CalbandError, ValueError):
    pass


class NotNormalized(CalbandError, ValueError):
    pass


class DimensionMismatch(CalbandError, ValueError):
    pass


class InvalidRecord(CalbandError, ValueError):
    pass


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContentType:
    id: int
    label: str


@dataclass(frozen=True)
class Catalog:
    """Ordered set of content types with dense ids ``0..C-1``."""

    types: tuple[ContentType, ...]

    def __post_init__(self):
        ids = [t.id for t in self.types]
        labels = [t.label for t in self.types]
        if not self.types:
            raise InvalidRecord("catalog must contain at least one content type")
        if ids != list(range(len(ids))):
            raise InvalidRecord(f"content type ids must be dense 0..C-1, got {ids}")
        if len(set(labels)) != len(labels):
            raise InvalidRecord(f"content type labels must be unique, got {labels}")

    @classmethod
    def from_labels(cls, labels: Sequence[str]) -> "Catalog":
        return cls(tuple(ContentType(i, lab) for i, lab in enumerate(labels)))

    @property
    def size(self) -> int:
        return len(self.types)

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.types]

    def index(self, label: str) -> int:
        for t in self.types:
            if t.label == label:
                return t.id
        raise KeyError(label)


DEFAULT_CATALOG = Catalog.from_labels(["music", "podcast"])
MUSIC = 0
PODCAST = 1


@dataclass(frozen=True, eq=False)
class ContentDistribution:
    """Probability vector over the content types of a catalog.

    Build through :func:`validate_distribution` when the input may carry
    float noise; the constructor itself only accepts vectors that are
    already normalized to within ``DIST_ATOL``.
    """

    mass: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mass)
        if m.ndim != 1 or m.size == 0:
            raise DimensionMismatch("distribution must be a non-empty 1-d vector")
        if not np.all(np.isfinite(m)):
            raise NotNormalized("distribution has non-finite entries")
        if np.any(m < 0):
            raise NegativeMass(f"negative mass in {m.tolist()}")
        if abs(m.sum() - 1.0) > DIST_ATOL:
            raise NotNormalized(f"mass sums to {m.sum()!r}")
        object.__setattr__(self, "mass", m)

    @property
    def size(self) -> int:
        return self.mass.size

    def __len__(self) -> int:
        return self.mass.size

    def __getitem__(self, c: int) -> float:
        return float(self.mass[c])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContentDistribution):
            return NotImplemented
        return np.array_equal(self.mass, other.mass)

    def __hash__(self) -> int:
        return hash(self.mass.tobytes())

    def __repr__(self) -> str:
        return f"ContentDistribution({', '.join(repr(float(v)) for v in self.mass)})"

    def dominant(self) -> int:
        """Index of the largest entry; ties go to the lower index."""
        return int(np.argmax(self.mass))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.mass]

    @classmethod
    def uniform(cls, size: int) -> "ContentDistribution":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def one_hot(cls, index: int, size: int) -> "ContentDistribution":
        m = np.zeros(size)
        m[index] = 1.0
        return cls(m)

    @classmethod
    def from_share(cls, podcast_share: float) -> "ContentDistribution":
        """Two-type (music, podcast) distribution from the podcast share."""
        return validate_distribution([1.0 - podcast_share, podcast_share])


def validate_distribution(mass) -> ContentDistribution:
    """Validate a raw mass vector and return it as a distribution.

    Sums within ``1e-6`` of one are renormalized (left untouched when
    already within ``1e-9``, which makes validation idempotent); anything
    further off is rejected with :class:`NotNormalized`. Negative entries
    raise :class:`NegativeMass`.
    """
    m = np.asarray(mass, dtype=np.float64).ravel()
    if m.size == 0:
        raise DimensionMismatch("distribution must be non-empty")
    if not np.all(np.isfinite(m)):
        raise NotNormalized("distribution has non-finite entries")
    if np.any(m < 0):
        raise NegativeMass(f"negative mass in {m.tolist()}")
    total = m.sum()
    if abs(total - 1.0) > INGEST_ATOL:
        raise NotNormalized(f"mass sums to {total!r}, off by more than {INGEST_ATOL}")
    if abs(total - 1.0) > DIST_ATOL:
        m = m / total
    return ContentDistribution(m)


@dataclass(frozen=True)
class Shelf:
    shelf_id: str
    relevance: float
    dist: ContentDistribution

    def __post_init__(self):
        if not np.isfinite(self.relevance):
            raise InvalidRecord(f"shelf {self.shelf_id!r} has non-finite relevance")


@dataclass(frozen=True)
class Slate:
    """Ordered shelves with their rank weights (rank = 1-based position)."""

    shelves: tuple[Shelf, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        object.__setattr__(self, "shelves", tuple(self.shelves))
        if w.ndim != 1 or w.size != len(self.shelves):
            raise DimensionMismatch(
                f"{w.size} weights for {len(self.shelves)} shelves")
        if np.any(~(w > 0)):
            raise InvalidRecord("rank weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.shelves)

    @property
    def shelf_ids(self) -> list[str]:
        return [s.shelf_id for s in self.shelves]

    @property
    def relevance(self) -> float:
        return float(sum(s.relevance for s in self.shelves))


@dataclass(frozen=True, eq=False)
class UserContext:
    """Everything known about a user at request time.

    ``consumption_aggregates`` maps a window name (``"7d"``, ``"90d"``...) to
    the stream-time share per content type over that window, or to an
    all-zero vector when the window holds no history.
    """

    user_id: str
    cohort_id: int
    country: str
    device: str
    hour_of_day: int
    day_of_week: int
    consumption_aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.hour_of_day <= 23:
            raise InvalidRecord(f"hour_of_day {self.hour_of_day} outside 0..23")
        if not 0 <= self.day_of_week <= 6:
            raise InvalidRecord(f"day_of_week {self.day_of_week} outside 0..6")
        aggs = {}
        for window, vec in self.consumption_aggregates.items():
            v = _frozen(vec)
            vals = v.tolist()
            if min(vals, default=0.0) < 0:
                raise NegativeMass(f"aggregate {window} has negative entries")
            s = sum(vals)
            if not math.isfinite(s):
                raise NotNormalized(f"aggregate {window} has non-finite entries")
            if s != 0.0 and abs(s - 1.0) > INGEST_ATOL:
                raise NotNormalized(f"aggregate {window} sums to {s!r}")
            aggs[window] = v
        object.__setattr__(self, "consumption_aggregates", aggs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UserContext):
            return NotImplemented
        mine, theirs = self.consumption_aggregates, other.consumption_aggregates
        return ((self.user_id, self.cohort_id, self.country, self.device,
                 self.hour_of_day, self.day_of_week)
                == (other.user_id, other.cohort_id, other.country, other.device,
                    other.hour_of_day, other.day_of_week)
                and mine.keys() == theirs.keys()
                and all(np.array_equal(mine[k], theirs[k]) for k in mine))

    def aggregate(self, window: str) -> Optional[ContentDistribution]:
        """The window's aggregate as a distribution, or None without history."""
        v = self.consumption_aggregates[window]
        if v.sum() == 0.0:
            return None
        return validate_distribution(v)


@dataclass(frozen=True)
class Interaction:
    shelf_dist: ContentDistribution
    weight: float
    timestamp: int

    def __post_init__(self):
        if not self.weight > 0:
            raise InvalidRecord(f"interaction weight must be positive, got {self.weight}")


@dataclass(frozen=True, eq=False)
class LoggedTriplet:
    """One unit of bandit feedback: context features, logged action, reward."""

    features: np.ndarray
    action_index: int
    propensity: float
    reward: int
    timestamp: int

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features))
        if not 0.0 < self.propensity <= 1.0:
            raise InvalidRecord(f"propensity {self.propensity} outside (0, 1]")
        if self.reward not in (0, 1):
            raise InvalidRecord(f"reward must be 0 or 1, got {self.reward}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoggedTriplet):
            return NotImplemented
        return (np.array_equal(self.features, other.features)
                and self.action_index == other.action_index
                and self.propensity == other.propensity
                and self.reward == other.reward
                and self.timestamp == other.timestamp)
