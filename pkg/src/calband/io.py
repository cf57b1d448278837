"""JSON-lines serialization of the record types.

One JSON object per line, field names as in the dataclasses. Floats go
through ``repr`` so every value round-trips at full precision, and keys
are sorted so identical records always produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .domain import (
    CalbandError,
    ContentDistribution,
    Interaction,
    LoggedTriplet,
    Shelf,
    UserContext,
)


class RecordParseError(CalbandError, ValueError):
    """A JSONL line could not be decoded; carries the 1-based line number."""

    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def shelf_to_dict(s: Shelf) -> dict:
    return {"shelf_id": s.shelf_id, "relevance": float(s.relevance),
            "dist": s.dist.to_list()}


def shelf_from_dict(d: dict) -> Shelf:
    return Shelf(str(d["shelf_id"]), float(d["relevance"]), ContentDistribution(d["dist"]))


def interaction_to_dict(it: Interaction) -> dict:
    return {"shelf_dist": it.shelf_dist.to_list(), "weight": float(it.weight),
            "timestamp": int(it.timestamp)}


def interaction_from_dict(d: dict) -> Interaction:
    return Interaction(ContentDistribution(d["shelf_dist"]), float(d["weight"]),
                       int(d["timestamp"]))


def triplet_to_dict(t: LoggedTriplet) -> dict:
    return {"features": [float(v) for v in t.features],
            "action_index": int(t.action_index),
            "propensity": float(t.propensity),
            "reward": int(t.reward),
            "timestamp": int(t.timestamp)}


def triplet_from_dict(d: dict) -> LoggedTriplet:
    return LoggedTriplet(np.asarray(d["features"], dtype=np.float64), int(d["action_index"]),
                         float(d["propensity"]), int(d["reward"]), int(d["timestamp"]))


def context_to_dict(c: UserContext) -> dict:
    return {"user_id": c.user_id, "cohort_id": int(c.cohort_id), "country": c.country,
            "device": c.device, "hour_of_day": int(c.hour_of_day),
            "day_of_week": int(c.day_of_week),
            "consumption_aggregates": {k: [float(x) for x in v]
                                       for k, v in c.consumption_aggregates.items()}}


def context_from_dict(d: dict) -> UserContext:
    return UserContext(str(d["user_id"]), int(d["cohort_id"]), str(d["country"]),
                       str(d["device"]), int(d["hour_of_day"]), int(d["day_of_week"]),
                       {k: np.asarray(v, dtype=np.float64)
                        for k, v in d["consumption_aggregates"].items()})


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path, decode: Callable[[dict], object] = lambda d: d) -> list:
    """Read a JSONL file, decoding each object with ``decode``.

    Blank lines are skipped. Any malformed line raises
    :class:`RecordParseError` naming the file and line.
    """
    return list(iter_jsonl(path, decode))


def iter_jsonl(path, decode: Callable[[dict], object] = lambda d: d) -> Iterator:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("record is not a JSON object")
                yield decode(obj)
            except (ValueError, KeyError, TypeError) as exc:
                raise RecordParseError(path, line_no, f"{type(exc).__name__}: {exc}") from exc


def read_triplets(path) -> list[LoggedTriplet]:
    return read_jsonl(path, triplet_from_dict)


def write_triplets(path, triplets: Iterable[LoggedTriplet]) -> int:
    return write_jsonl(path, (triplet_to_dict(t) for t in triplets))
