"""Check-in sequences: sessionization, filtering, sample splits, relation matrices.

The on-disk dataset is a UTF-8 text file::

    NEXTPOI-DATASET 1
    {json header: format, num_users, num_locations, num_sessions, num_checkins, stats}
    L lines   loc_id <TAB> key <TAB> lat <TAB> lon
    U lines   user_id <TAB> key <TAB> num_sessions
    N lines   user_id <TAB> session_idx <TAB> loc_id <TAB> time <TAB> duration

Floats are written with ``repr`` so a load/save cycle is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Sequence

import numpy as np

from .trajectory import InputFormatError, haversine_matrix

logger = logging.getLogger(__name__)

SESSION_WINDOW = 86_400
MAX_DURATION = 86_400
FALLBACK_DURATION = 1800
DATASET_MAGIC = "NEXTPOI-DATASET"
DATASET_VERSION = 1


@dataclass(frozen=True)
class CheckIn:
    user: int
    location: int
    time: int
    duration: int


@dataclass
class Sample:
    """One prediction instance: a history prefix and the next location."""

    user: int
    inputs: list[CheckIn]
    label: int
    query_time: int


@dataclass
class TrajectorySplit:
    long: list[CheckIn]
    short: list[CheckIn]
    label: int
    query_time: int

    @property
    def user(self) -> int:
        return self.short[-1].user


@dataclass
class RelationMatrices:
    """Interval matrices for one branch; ``cand_*`` rows follow the candidate order."""

    dt: np.ndarray
    ds: np.ndarray
    cand_dt: np.ndarray
    cand_ds: np.ndarray


@dataclass
class Dataset:
    user_keys: list[str]
    location_keys: list[str]
    coords: np.ndarray  # (L, 2) lat/lon
    sessions: list[list[list[CheckIn]]]  # per user, per session
    source: str = "checkin"
    stats: dict = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    @property
    def num_locations(self) -> int:
        return len(self.location_keys)

    def checkins(self, user: int) -> list[CheckIn]:
        return [c for s in self.sessions[user] for c in s]

    def distance_matrix(self) -> np.ndarray:
        lat, lon = self.coords[:, 0], self.coords[:, 1]
        return haversine_matrix(lat, lon, lat, lon)


def sessionize(checkins: Sequence[CheckIn], window: int = SESSION_WINDOW) -> list[list[CheckIn]]:
    """Split a time-sorted sequence into sessions.

    A check-in opens a new session when it falls more than ``window`` seconds
    after the first check-in of the current session.
    """
    sessions: list[list[CheckIn]] = []
    for c in checkins:
        if sessions and c.time - sessions[-1][0].time <= window:
            sessions[-1].append(c)
        else:
            sessions.append([c])
    return sessions


def filter_dataset(user_sessions: dict, min_poi_visits: int = 5, min_session_len: int = 3,
                   min_sessions: int = 3):
    """Apply the POI/session/user filters until nothing changes.

    Returns ``(user_sessions, location_map)`` where surviving location ids are
    re-indexed densely in ascending order of their original id and
    ``location_map`` maps old id to new id. Users keep their input keys;
    ``CheckIn.user`` is left untouched.
    """
    current = {u: [list(s) for s in sess] for u, sess in user_sessions.items()}
    while True:
        counts = Counter(c.location for sess in current.values() for s in sess for c in s)
        nxt = {}
        for u, sess in current.items():
            kept = [[c for c in s if counts[c.location] >= min_poi_visits] for s in sess]
            kept = [s for s in kept if len(s) >= min_session_len]
            if len(kept) >= min_sessions:
                nxt[u] = kept
        if nxt == current:
            break
        current = nxt
    if not current:
        raise ValueError("empty dataset")
    survivors = sorted({c.location for sess in current.values() for s in sess for c in s})
    location_map = {old: new for new, old in enumerate(survivors)}
    remapped = {
        u: [[CheckIn(c.user, location_map[c.location], c.time, c.duration) for c in s] for s in sess]
        for u, sess in current.items()
    }
    return remapped, location_map


def derive_duration(checkins: Sequence[CheckIn], cap: int = MAX_DURATION,
                    fallback: int = FALLBACK_DURATION) -> list[int]:
    """Activity durations for check-in data: gap to the next check-in, capped.

    The last check-in gets the median of the other durations, or ``fallback``
    if there are none.
    """
    durations = [min(b.time - a.time, cap) for a, b in zip(checkins, checkins[1:])]
    if not checkins:
        return []
    last = int(np.median(durations)) if durations else fallback
    return durations + [last]


def split_train_val_test(checkins: Sequence[CheckIn]):
    """Leave-last-out splits for one user's ``m`` check-ins.

    Training samples use the first ``m'`` check-ins (``m'`` in ``1..m-3``) to
    predict check-in ``m'+1``; validation predicts check-in ``m-1`` from the
    first ``m-2``; test predicts check-in ``m`` from the first ``m-1``.
    Returns ``None`` (with a warning) when ``m < 4``.
    """
    m = len(checkins)
    if m < 4:
        logger.warning("user %s skipped: only %d check-ins", checkins[0].user if checkins else "?", m)
        return None

    def sample(k):
        return Sample(checkins[k].user, list(checkins[:k]), checkins[k].location, checkins[k].time)

    train = [sample(k) for k in range(1, m - 2)]
    return train, sample(m - 2), sample(m - 1)


def split_long_short(inputs: Sequence[CheckIn], label: int = -1, query_time: int | None = None,
                     max_len: int = 100, window: int = SESSION_WINDOW,
                     fallback_short: int = 10) -> TrajectorySplit:
    """Partition a history into a long-term part and the final session.

    The history is first truncated to its last ``max_len`` check-ins. The short
    part holds every check-in within ``window`` seconds of the last one. If that
    covers the whole history and it has more than ``fallback_short`` check-ins,
    the short part is the last ``fallback_short`` check-ins instead.
    """
    if not inputs:
        raise ValueError("empty input")
    seq = list(inputs[-max_len:])
    last = seq[-1].time
    cut = len(seq)
    while cut > 0 and last - seq[cut - 1].time <= window:
        cut -= 1
    if cut == 0 and len(seq) > fallback_short:
        cut = len(seq) - fallback_short
    if query_time is None:
        query_time = last
    return TrajectorySplit(seq[:cut], seq[cut:], label, query_time)


def relation_scales(samples: Sequence[Sample], dist: np.ndarray,
                    max_len: int | None = None) -> tuple[float, float]:
    """Normalization constants (time, space) from training samples, clamped to >= 1.

    Time scale is the largest gap between a query time and any input check-in;
    space scale the largest distance from a visited location to any location.
    """
    t_max = 0.0
    s_max = 0.0
    for smp in samples:
        inputs = smp.inputs if max_len is None else smp.inputs[-max_len:]
        t_max = max(t_max, smp.query_time - inputs[0].time)
        locs = sorted({c.location for c in inputs})
        if locs:
            s_max = max(s_max, float(dist[locs].max()))
    return max(1.0, float(t_max)), max(1.0, float(s_max))


def branch_relations(part, query_time, dist, candidates, t_scale, s_scale) -> RelationMatrices:
    times = np.array([c.time for c in part], dtype=np.float64)
    locs = np.array([c.location for c in part], dtype=np.int64)
    dt = np.abs(times[:, None] - times[None, :]) / t_scale
    ds = dist[np.ix_(locs, locs)] / s_scale
    cand_dt = np.broadcast_to(np.abs(query_time - times)[None, :] / t_scale,
                              (len(candidates), len(part))).copy()
    cand_ds = dist[np.ix_(candidates, locs)] / s_scale
    return RelationMatrices(dt, ds, cand_dt, cand_ds)


def build_relation_matrices(split: TrajectorySplit, dist: np.ndarray, candidates=None,
                            t_scale: float = 1.0, s_scale: float = 1.0):
    """Long and short relation matrices for ``split``.

    ``dist`` is the L x L location distance matrix in meters; ``candidates``
    defaults to every location. Entries are divided by the dataset scales.
    """
    if candidates is None:
        candidates = np.arange(dist.shape[0])
    candidates = np.asarray(candidates, dtype=np.int64)
    long = branch_relations(split.long, split.query_time, dist, candidates, t_scale, s_scale)
    short = branch_relations(split.short, split.query_time, dist, candidates, t_scale, s_scale)
    return long, short


@dataclass
class Splits:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]

    def get(self, name: str) -> list[Sample]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def make_splits(ds: Dataset, last_m: int | None = None) -> Splits:
    """All users' samples in user order; ``last_m`` keeps each user's most recent check-ins."""
    train, val, test = [], [], []
    for u in range(ds.num_users):
        seq = ds.checkins(u)
        if last_m is not None:
            seq = seq[-last_m:]
        parts = split_train_val_test(seq)
        if parts is None:
            continue
        train.extend(parts[0])
        val.append(parts[1])
        test.append(parts[2])
    return Splits(train, val, test)


def training_history(ds: Dataset, user: int, last_m: int | None = None) -> list[CheckIn]:
    """Check-ins that appear in the user's training samples (the first m-2)."""
    seq = ds.checkins(user)
    if last_m is not None:
        seq = seq[-last_m:]
    return seq[:-2]


def parse_utc_time(text: str) -> int:
    """Foursquare-style ``Tue Apr 03 18:00:09 +0000 2012`` or integer epoch seconds."""
    text = text.strip()
    if text.lstrip("-").isdigit():
        return int(text)
    return int(datetime.strptime(text, "%a %b %d %H:%M:%S %z %Y").timestamp())


def read_checkin_tsv(path):
    """Parse a Foursquare-style TSV.

    Columns: user_id, venue_id, category, lat, lon, tz_offset_min, utc_time.
    Category and tz offset are validated but unused. Returns
    ``(user_checkins, venue_keys, venue_coords)``: per-user time-sorted
    check-ins whose ``location`` indexes ``venue_keys`` (sorted venue ids) and
    whose ``user`` is the rank of the user key; durations are zero.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise InputFormatError(lineno, f"expected 7 tab-separated fields, got {len(parts)}")
            try:
                lat, lon = float(parts[3]), float(parts[4])
                int(parts[5])
                ts = parse_utc_time(parts[6])
            except ValueError as exc:
                raise InputFormatError(lineno, str(exc)) from None
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise InputFormatError(lineno, "coordinate out of bounds")
            rows.append((parts[0], parts[1], lat, lon, ts))
    venues = sorted({r[1] for r in rows})
    vidx = {v: i for i, v in enumerate(venues)}
    acc = np.zeros((len(venues), 3))
    for _, v, lat, lon, _ in rows:
        acc[vidx[v]] += (lat, lon, 1.0)
    coords = acc[:, :2] / np.maximum(acc[:, 2:], 1.0)
    users = sorted({r[0] for r in rows})
    uidx = {u: i for i, u in enumerate(users)}
    per_user: dict[str, list[CheckIn]] = {u: [] for u in users}
    for u, v, _, _, ts in rows:
        per_user[u].append(CheckIn(uidx[u], vidx[v], ts, 0))
    for u in users:
        per_user[u].sort(key=lambda c: (c.time, c.location))
    return per_user, venues, coords


def assemble_dataset(user_sessions: dict, location_map: dict, location_keys: Sequence[str],
                     location_coords: np.ndarray, source: str, durations=None) -> Dataset:
    """Re-index users densely (sorted key order) and attach geometry.

    ``durations="derive"`` recomputes check-in durations from gaps, otherwise
    the stored durations are kept.
    """
    users = sorted(user_sessions)
    sessions = []
    for new_u, key in enumerate(users):
        sess = user_sessions[key]
        flat = [c for s in sess for c in s]
        if durations == "derive":
            dur = derive_duration(flat)
        else:
            dur = [c.duration for c in flat]
        it = iter(dur)
        sessions.append([[CheckIn(new_u, c.location, c.time, int(next(it))) for c in s] for s in sess])
    inverse = sorted(location_map.items(), key=lambda kv: kv[1])
    keys = [str(location_keys[old]) for old, _ in inverse]
    coords = np.array([location_coords[old] for old, _ in inverse], dtype=np.float64).reshape(-1, 2)
    return Dataset(list(users), keys, coords, sessions, source=source)


def dumps_dataset(ds: Dataset) -> str:
    n_sessions = sum(len(s) for s in ds.sessions)
    n_checkins = sum(len(x) for s in ds.sessions for x in s)
    header = {
        "format": ds.source,
        "num_users": ds.num_users,
        "num_locations": ds.num_locations,
        "num_sessions": n_sessions,
        "num_checkins": n_checkins,
        "stats": ds.stats,
    }
    lines = [f"{DATASET_MAGIC} {DATASET_VERSION}", json.dumps(header, sort_keys=True)]
    for i, key in enumerate(ds.location_keys):
        lines.append(f"{i}\t{key}\t{float(ds.coords[i, 0])!r}\t{float(ds.coords[i, 1])!r}")
    for u, key in enumerate(ds.user_keys):
        lines.append(f"{u}\t{key}\t{len(ds.sessions[u])}")
    for u, sess in enumerate(ds.sessions):
        for k, s in enumerate(sess):
            for c in s:
                lines.append(f"{u}\t{k}\t{c.location}\t{c.time}\t{c.duration}")
    return "\n".join(lines) + "\n"


def dataset_fingerprint(ds: Dataset) -> str:
    return hashlib.sha256(dumps_dataset(ds).encode("utf-8")).hexdigest()


def save_dataset(path, ds: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    magic = lines[0].split(" ")
    if len(magic) != 2 or magic[0] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    if int(magic[1]) != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {magic[1]}")
    header = json.loads(lines[1])
    L, U, N = header["num_locations"], header["num_users"], header["num_checkins"]
    pos = 2
    keys, coords = [], []
    for line in lines[pos:pos + L]:
        _, key, lat, lon = line.split("\t")
        keys.append(key)
        coords.append((float(lat), float(lon)))
    pos += L
    user_keys, sessions = [], []
    for line in lines[pos:pos + U]:
        _, key, ns = line.split("\t")
        user_keys.append(key)
        sessions.append([[] for _ in range(int(ns))])
    pos += U
    for line in lines[pos:pos + N]:
        u, k, loc, t, d = (int(x) for x in line.split("\t"))
        sessions[u][k].append(CheckIn(u, loc, t, d))
    if len(lines) - pos - N != 1 or lines[-1] != "":
        raise ValueError(f"{path}: check-in count does not match header")
    return Dataset(user_keys, keys, np.array(coords, dtype=np.float64).reshape(-1, 2), sessions,
                   source=header["format"], stats=header["stats"])
