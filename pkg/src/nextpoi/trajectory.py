"""Raw GPS traces to stay points and clustered locations.

Pipeline: track points -> sliding-window stay points -> DBSCAN over stay
centroids -> locations with convex-hull geometry -> enriched stays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

DEFAULT_DIST_THRESHOLD = 200.0
DEFAULT_TIME_THRESHOLD = 1800
DEFAULT_EPS = 150.0
DEFAULT_MIN_PTS = 3


class InputFormatError(ValueError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TrackPoint:
    user_id: str
    lat: float
    lon: float
    timestamp: int


@dataclass(frozen=True)
class StayPoint:
    user_id: str
    start_time: int
    duration: int
    lat: float
    lon: float
    member_count: int
    location_id: int | None = None


@dataclass
class Location:
    id: int
    lat: float
    lon: float
    hull: list[tuple[float, float]]
    member_stays: list[int] = field(default_factory=list)


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lat, lon) pairs in degrees."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Pairwise haversine distances (meters) between two coordinate arrays.

    Returns an array of shape ``(len(lat1), len(lat2))``.
    """
    p1 = np.radians(np.asarray(lat1, dtype=np.float64))[:, None]
    l1 = np.radians(np.asarray(lon1, dtype=np.float64))[:, None]
    p2 = np.radians(np.asarray(lat2, dtype=np.float64))[None, :]
    l2 = np.radians(np.asarray(lon2, dtype=np.float64))[None, :]
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def read_gps_csv(path) -> dict[str, list[TrackPoint]]:
    """Read a ``user_id,lat,lon,timestamp`` CSV into sorted, deduplicated traces.

    Duplicate timestamps within a user keep the first row seen. Users are
    returned in sorted key order.
    """
    traces: dict[str, list[TrackPoint]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["user_id", "lat", "lon", "timestamp"]:
            raise InputFormatError(1, "expected header 'user_id,lat,lon,timestamp'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputFormatError(lineno, f"expected 4 fields, got {len(row)}")
            try:
                lat, lon = float(row[1]), float(row[2])
                ts = int(row[3])
            except ValueError as exc:
                raise InputFormatError(lineno, str(exc)) from None
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise InputFormatError(lineno, "coordinate out of bounds")
            traces.setdefault(row[0], []).append(TrackPoint(row[0], lat, lon, ts))
    out = {}
    for user in sorted(traces):
        pts = sorted(traces[user], key=lambda p: p.timestamp)  # stable: first duplicate wins
        dedup = [p for i, p in enumerate(pts) if i == 0 or p.timestamp != pts[i - 1].timestamp]
        out[user] = dedup
    return out


def detect_stay_points(points: Sequence[TrackPoint], dist_threshold: float = DEFAULT_DIST_THRESHOLD,
                       time_threshold: float = DEFAULT_TIME_THRESHOLD) -> list[StayPoint]:
    """Sliding-window stay-point detection over one user's time-sorted trace.

    The window is anchored at its first point and grows while every new point
    stays within ``dist_threshold`` meters of that anchor. A window whose time
    span reaches ``time_threshold`` seconds becomes a stay point and the scan
    resumes after it; otherwise the scan advances the anchor by one point.
    """
    if dist_threshold <= 0 or time_threshold <= 0:
        raise ValueError("thresholds must be positive")
    stays: list[StayPoint] = []
    n = len(points)
    i = 0
    while i < n:
        anchor = points[i]
        j = i + 1
        while j < n and haversine((anchor.lat, anchor.lon), (points[j].lat, points[j].lon)) <= dist_threshold:
            j += 1
        # window is points[i:j]
        span = points[j - 1].timestamp - anchor.timestamp
        if span >= time_threshold:
            window = points[i:j]
            stays.append(StayPoint(
                user_id=anchor.user_id,
                start_time=anchor.timestamp,
                duration=span,
                lat=float(np.mean([p.lat for p in window])),
                lon=float(np.mean([p.lon for p in window])),
                member_count=len(window),
            ))
            i = j
        else:
            i += 1
    return stays


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(coords: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    """Monotone-chain hull of (lat, lon) pairs, counter-clockwise in (lon, lat).

    Collinear points are dropped, so degenerate input yields one point or the
    two segment endpoints.
    """
    # hull is computed in the (x=lon, y=lat) plane
    pts = sorted({(lon, lat) for lat, lon in coords})
    if len(pts) <= 2:
        return [(y, x) for x, y in pts]
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return [(y, x) for x, y in hull]


def point_in_hull(point: tuple[float, float], hull: Sequence[tuple[float, float]], tol: float = 1e-12) -> bool:
    """True if (lat, lon) ``point`` lies inside or on a hull from :func:`convex_hull`."""
    px, py = point[1], point[0]
    xy = [(lon, lat) for lat, lon in hull]
    if len(xy) == 1:
        return abs(px - xy[0][0]) <= tol and abs(py - xy[0][1]) <= tol
    if len(xy) == 2:
        (ax, ay), (bx, by) = xy
        if abs(_cross((ax, ay), (bx, by), (px, py))) > tol * max(1.0, abs(bx - ax) + abs(by - ay)):
            return False
        return (min(ax, bx) - tol <= px <= max(ax, bx) + tol
                and min(ay, by) - tol <= py <= max(ay, by) + tol)
    for k in range(len(xy)):
        if _cross(xy[k], xy[(k + 1) % len(xy)], (px, py)) < -tol:
            return False
    return True


def location_geometry(members: Sequence[StayPoint]) -> tuple[list[tuple[float, float]], tuple[float, float]]:
    """Convex hull and mean centroid of a cluster's stay centroids."""
    if not members:
        raise ValueError("empty cluster")
    coords = [(s.lat, s.lon) for s in members]
    centroid = (float(np.mean([c[0] for c in coords])), float(np.mean([c[1] for c in coords])))
    return convex_hull(coords), centroid


def dbscan_labels(lat, lon, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN cluster labels (``-1`` for noise) under haversine distance.

    Neighborhoods count the point itself. Clusters are seeded from core points
    in index order, so a border point reachable from several clusters joins the
    one whose lowest-index core point comes first.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be > 0 and min_pts >= 1")
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    n = len(lat)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    neighbors = []
    chunk = 1024
    for start in range(0, n, chunk):
        dist = haversine_matrix(lat[start:start + chunk], lon[start:start + chunk], lat, lon)
        neighbors.extend(np.flatnonzero(row <= eps) for row in dist)
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        queue = [i]
        while queue:
            p = queue.pop()
            for q in neighbors[p]:
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


def cluster_stays_dbscan(stays: Sequence[StayPoint], eps: float = DEFAULT_EPS,
                         min_pts: int = DEFAULT_MIN_PTS) -> list[Location]:
    """Group stay points into locations; noise stays belong to no location.

    Location ids are ordered by the earliest member start time, ties broken by
    centroid latitude then longitude. ``member_stays`` holds indices into
    ``stays``.
    """
    labels = dbscan_labels([s.lat for s in stays], [s.lon for s in stays], eps, min_pts)
    groups: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        if lab >= 0:
            groups.setdefault(int(lab), []).append(idx)
    protos = []
    for members in groups.values():
        hull, centroid = location_geometry([stays[m] for m in members])
        first = min(stays[m].start_time for m in members)
        protos.append((first, centroid[0], centroid[1], hull, members))
    protos.sort(key=lambda p: (p[0], p[1], p[2]))
    return [Location(id=k, lat=p[1], lon=p[2], hull=p[3], member_stays=sorted(p[4]))
            for k, p in enumerate(protos)]


def enrich_stays(stays: Sequence[StayPoint], locations: Sequence[Location]) -> list[StayPoint]:
    """Attach location ids to clustered stays and drop noise, preserving order."""
    owner = {}
    for loc in locations:
        for m in loc.member_stays:
            owner[m] = loc.id
    return [replace(s, location_id=owner[i]) for i, s in enumerate(stays) if i in owner]
