"""Check-in and interval embeddings, with their backward passes.

Parameters live in a plain ``dict[str, np.ndarray]``; the table names used
here are ``user_table``, ``location_table``, ``time_table``,
``duration_table``, ``unit_dt``, ``unit_ds`` and ``reduce_w``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

TIME_SLOTS = 168
DURATION_BUCKETS = 48
BUCKET_SECONDS = 1800
# 1970-01-01 was a Thursday; shifting by 3 days puts Monday 00:00 in slot 0
_WEEK_OFFSET = 3 * 86_400

TABLE_NAMES = ("user_table", "location_table", "time_table", "duration_table")
INTERVAL_NAMES = ("unit_dt", "unit_ds", "reduce_w")


def discretize_time(t) -> int | np.ndarray:
    """Hour-of-week slot in UTC, Monday 00:00 = 0."""
    t = np.asarray(t, dtype=np.int64)
    slot = ((t + _WEEK_OFFSET) // 3600) % TIME_SLOTS
    return int(slot) if slot.ndim == 0 else slot


def bucketize_duration(d, num_buckets: int = DURATION_BUCKETS) -> int | np.ndarray:
    """Half-hour duration bucket, capped at ``num_buckets - 1``."""
    d = np.asarray(d, dtype=np.int64)
    if np.any(d < 0):
        raise ValueError("negative duration")
    b = np.minimum(d // BUCKET_SECONDS, num_buckets - 1)
    return int(b) if b.ndim == 0 else b


def init_embedding_params(num_users: int, num_locations: int, dim: int, rng: np.random.Generator,
                          num_buckets: int = DURATION_BUCKETS) -> dict[str, np.ndarray]:
    bound = 1.0 / np.sqrt(dim)
    shapes = {
        "user_table": (num_users, dim),
        "location_table": (num_locations, dim),
        "time_table": (TIME_SLOTS, dim),
        "duration_table": (num_buckets, dim),
        "unit_dt": (dim,),
        "unit_ds": (dim,),
        "reduce_w": (dim,),
    }
    return {name: rng.uniform(-bound, bound, size=shape) for name, shape in shapes.items()}


def _lookup_ids(checkins: Sequence, tables) -> tuple[np.ndarray, ...]:
    users = np.array([c.user for c in checkins], dtype=np.int64)
    locs = np.array([c.location for c in checkins], dtype=np.int64)
    slots = np.asarray(discretize_time([c.time for c in checkins]), dtype=np.int64)
    buckets = np.asarray(bucketize_duration([c.duration for c in checkins],
                                            tables["duration_table"].shape[0]), dtype=np.int64)
    for ids, name in ((users, "user_table"), (locs, "location_table")):
        if ids.size and (ids.min() < 0 or ids.max() >= tables[name].shape[0]):
            raise IndexError("unknown id")
    return users, locs, slots, buckets


def embed_sequence(checkins: Sequence, tables, use_duration: bool = True) -> np.ndarray:
    """Stack of per-check-in embeddings, shape ``(n, d)``.

    Each row is user + location + hour-of-week + duration bucket; the duration
    term is left out when ``use_duration`` is false.
    """
    d = tables["location_table"].shape[1]
    if not checkins:
        return np.zeros((0, d))
    users, locs, slots, buckets = _lookup_ids(checkins, tables)
    out = tables["user_table"][users] + tables["location_table"][locs] + tables["time_table"][slots]
    if use_duration:
        out = out + tables["duration_table"][buckets]
    return out


def embed_checkin(checkin, tables, use_duration: bool = True) -> np.ndarray:
    return embed_sequence([checkin], tables, use_duration)[0]


def embed_sequence_backward(checkins: Sequence, grad_rows: np.ndarray, tables, grads: dict,
                            use_duration: bool = True) -> None:
    """Scatter-add row gradients into the four lookup tables (in place)."""
    if not checkins:
        return
    users, locs, slots, buckets = _lookup_ids(checkins, tables)
    np.add.at(grads["user_table"], users, grad_rows)
    np.add.at(grads["location_table"], locs, grad_rows)
    np.add.at(grads["time_table"], slots, grad_rows)
    if use_duration:
        np.add.at(grads["duration_table"], buckets, grad_rows)


def interval_coefficients(tables) -> tuple[float, float]:
    """Scalar weights that time and distance intervals receive after reduction.

    ``reduce_w . (dt * unit_dt + ds * unit_ds)`` equals
    ``dt * (reduce_w . unit_dt) + ds * (reduce_w . unit_ds)``.
    """
    w = tables["reduce_w"]
    return float(w @ tables["unit_dt"]), float(w @ tables["unit_ds"])


def embed_intervals(dt: np.ndarray, ds: np.ndarray, tables) -> np.ndarray:
    """Scalar interval embedding ``E[i, j] = reduce_w . (dt[i, j] unit_dt + ds[i, j] unit_ds)``."""
    a, b = interval_coefficients(tables)
    return a * dt + b * ds


def embed_intervals_backward(dt: np.ndarray, ds: np.ndarray, grad: np.ndarray, tables, grads: dict) -> None:
    ga = float(np.sum(grad * dt))
    gb = float(np.sum(grad * ds))
    w = tables["reduce_w"]
    grads["reduce_w"] += ga * tables["unit_dt"] + gb * tables["unit_ds"]
    grads["unit_dt"] += ga * w
    grads["unit_ds"] += gb * w
