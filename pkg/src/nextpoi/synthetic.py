"""Deterministic synthetic fixtures: a periodic check-in corpus and GPS traces."""

from __future__ import annotations

import csv
import math
from datetime import datetime, timezone

import numpy as np

from .trajectory import TrackPoint

# Monday 2012-04-02 00:00 UTC
BASE_MONDAY = int(datetime(2012, 4, 2, tzinfo=timezone.utc).timestamp())
CENTER = (40.7500, -73.9800)

# (day of week, hour) for the 12 weekly visits; sessions are days, 3 visits each.
# Saturday is shifted by one hour so it never falls within 24 h of Friday's first visit.
WEEKLY_SLOTS = [(0, 9), (0, 13), (0, 18), (2, 9), (2, 13), (2, 18),
                (4, 9), (4, 13), (4, 18), (5, 10), (5, 14), (5, 19)]


def ring_coords(n: int, radius_m: float = 2000.0, center=CENTER) -> np.ndarray:
    lat0, lon0 = center
    ang = 2 * np.pi * np.arange(n) / n
    dlat = radius_m * np.cos(ang) / 111_195.0
    dlon = radius_m * np.sin(ang) / (111_195.0 * math.cos(math.radians(lat0)))
    return np.column_stack([lat0 + dlat, lon0 + dlon])


def periodic_checkin_rows(num_users: int = 20, num_locations: int = 12, weeks: int = 3):
    """Foursquare-style TSV rows for strictly cyclic weekly routines.

    User ``u`` visits location ``(u + k) mod num_locations`` at its k-th visit,
    on the fixed weekly slot ``WEEKLY_SLOTS[k mod 12]`` plus ``u`` minutes.
    """
    coords = ring_coords(num_locations)
    rows = []
    for u in range(num_users):
        for w in range(weeks):
            for k, (day, hour) in enumerate(WEEKLY_SLOTS):
                visit = w * len(WEEKLY_SLOTS) + k
                loc = (u + visit) % num_locations
                t = BASE_MONDAY + w * 7 * 86_400 + day * 86_400 + hour * 3600 + u * 60
                stamp = datetime.fromtimestamp(t, tz=timezone.utc).strftime("%a %b %d %H:%M:%S +0000 %Y")
                rows.append([f"u{u:02d}", f"v{loc:02d}", "cat", repr(float(coords[loc, 0])),
                             repr(float(coords[loc, 1])), "0", stamp])
    return rows


def write_checkin_tsv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write("\t".join(r) + "\n")


def periodic_dataset(num_users: int = 20, num_locations: int = 12, weeks: int = 3):
    """The periodic corpus pushed through the check-in preprocessing pipeline."""
    from .dataset import CheckIn, parse_utc_time
    from .pipeline import dataset_from_checkins

    rows = periodic_checkin_rows(num_users, num_locations, weeks)
    coords = ring_coords(num_locations)
    venues = [f"v{i:02d}" for i in range(num_locations)]
    per_user: dict[str, list] = {}
    users = sorted({r[0] for r in rows})
    for r in rows:
        per_user.setdefault(r[0], []).append(
            CheckIn(users.index(r[0]), venues.index(r[1]), parse_utc_time(r[6]), 0))
    return dataset_from_checkins(per_user, venues, coords)


def _offset(lat, lon, north_m, east_m):
    return (lat + north_m / 111_195.0,
            lon + east_m / (111_195.0 * math.cos(math.radians(lat))))


def gps_traces(num_users: int = 50, seed: int = 7, num_places: int = 15, days: int = 6):
    """Synthetic GPS traces of daily routines among shared places.

    Places sit on a 1.2 km grid. Each user has an active day every other day
    with four dwells (45-100 min, a point every 5 min, <= 25 m jitter) joined
    by straight trips sampled every minute at 10 m/s. The last five users are
    active on only two days so the user filter removes them; each user also
    makes one dwell at a private spot which DBSCAN treats as noise; one place
    is reserved for rare visits that fall under the POI visit threshold.
    """
    rng = np.random.default_rng(seed)
    side = math.ceil(math.sqrt(num_places))
    places = [_offset(CENTER[0], CENTER[1], 1200.0 * (i // side), 1200.0 * (i % side))
              for i in range(num_places)]
    rare = num_places - 1
    traces = {}
    for u in range(num_users):
        uid = f"g{u:02d}"
        routine = [int(p) for p in rng.choice(num_places - 1, size=5, replace=False)]
        active_days = 2 if u >= num_users - 5 else days
        pts: list[TrackPoint] = []
        t = BASE_MONDAY + 8 * 3600
        for day in range(active_days):
            t = BASE_MONDAY + 2 * day * 86_400 + 8 * 3600 + int(rng.integers(0, 1800))
            plan = [routine[(day + j) % len(routine)] for j in range(4)]
            if day == 1:
                plan[2] = -1  # private noise spot
            if day == 2 and u % 13 == 0:
                plan[3] = rare
            pos = None
            for place in plan:
                if place == -1:
                    target = _offset(CENTER[0], CENTER[1], -3000.0 - 400.0 * u, -2500.0)
                else:
                    target = places[place]
                if pos is not None:
                    north = (target[0] - pos[0]) * 111_195.0
                    east = (target[1] - pos[1]) * 111_195.0 * math.cos(math.radians(pos[0]))
                    dist = math.hypot(north, east)
                    steps = max(1, int(dist / 600.0))
                    for s in range(1, steps):
                        f = s / steps
                        t += 60
                        pts.append(TrackPoint(uid, pos[0] + f * (target[0] - pos[0]),
                                              pos[1] + f * (target[1] - pos[1]), t))
                    t += 60
                dwell = int(rng.integers(45, 101)) * 60
                end = t + dwell
                while t <= end:
                    jn, je = rng.uniform(-25.0, 25.0, size=2)
                    lat, lon = _offset(target[0], target[1], jn / math.sqrt(2), je / math.sqrt(2))
                    pts.append(TrackPoint(uid, float(lat), float(lon), t))
                    t += 300
                t = end
                pos = target
        traces[uid] = pts
    return traces


def write_gps_csv(path, traces) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "lat", "lon", "timestamp"])
        for uid in sorted(traces):
            for p in traces[uid]:
                w.writerow([uid, repr(float(p.lat)), repr(float(p.lon)), p.timestamp])
