"""Raw input files to a filtered, model-ready :class:`~nextpoi.dataset.Dataset`."""

from __future__ import annotations

import numpy as np

from .dataset import (CheckIn, Dataset, assemble_dataset, filter_dataset, make_splits, read_checkin_tsv,
                      sessionize)
from .trajectory import (DEFAULT_DIST_THRESHOLD, DEFAULT_EPS, DEFAULT_MIN_PTS, DEFAULT_TIME_THRESHOLD,
                         cluster_stays_dbscan, detect_stay_points, enrich_stays, read_gps_csv)


def _finish(per_user: dict, location_keys, coords, source: str, durations, stats: dict) -> Dataset:
    stats["users_before"] = sum(1 for seq in per_user.values() if seq)
    stats["checkins_before"] = sum(len(seq) for seq in per_user.values())
    stats["locations_before"] = len({c.location for seq in per_user.values() for c in seq})
    sessions = {u: sessionize(seq) for u, seq in per_user.items() if seq}
    kept, location_map = filter_dataset(sessions)
    ds = assemble_dataset(kept, location_map, location_keys, coords, source, durations)
    splits = make_splits(ds)
    stats.update(
        users_after=ds.num_users,
        locations_after=ds.num_locations,
        sessions_after=sum(len(s) for s in ds.sessions),
        checkins_after=sum(len(x) for s in ds.sessions for x in s),
        train_samples=len(splits.train),
        val_samples=len(splits.val),
        test_samples=len(splits.test),
    )
    ds.stats = stats
    return ds


def dataset_from_checkins(per_user: dict, venue_keys, coords, source: str = "checkin") -> Dataset:
    """Sessionize, filter and derive gap-based durations for parsed check-ins."""
    stats = {"format": source, "stay_point_stage": "skipped"}
    return _finish(per_user, venue_keys, coords, source, "derive", stats)


def preprocess_checkins(path) -> Dataset:
    per_user, venues, coords = read_checkin_tsv(path)
    return dataset_from_checkins(per_user, venues, coords)


def dataset_from_traces(traces: dict, dist_threshold: float = DEFAULT_DIST_THRESHOLD,
                        time_threshold: float = DEFAULT_TIME_THRESHOLD, eps: float = DEFAULT_EPS,
                        min_pts: int = DEFAULT_MIN_PTS) -> Dataset:
    """Stay points per user, DBSCAN over all users' stays, then the check-in pipeline.

    Each enriched stay becomes a check-in at its start time with its dwell
    duration; location coordinates are cluster centroids.
    """
    users = sorted(traces)
    stays = []
    for u in users:
        stays.extend(detect_stay_points(traces[u], dist_threshold, time_threshold))
    locations = cluster_stays_dbscan(stays, eps, min_pts)
    enriched = enrich_stays(stays, locations)
    uidx = {u: i for i, u in enumerate(users)}
    per_user: dict[str, list[CheckIn]] = {u: [] for u in users}
    for s in enriched:
        per_user[s.user_id].append(CheckIn(uidx[s.user_id], s.location_id, s.start_time, s.duration))
    stats = {
        "format": "gps",
        "stay_point_stage": "run",
        "track_points": sum(len(t) for t in traces.values()),
        "stay_points": len(stays),
        "noise_stays": len(stays) - len(enriched),
        "locations_clustered": len(locations),
    }
    coords = np.array([(loc.lat, loc.lon) for loc in locations], dtype=np.float64).reshape(-1, 2)
    keys = [str(loc.id) for loc in locations]
    return _finish(per_user, keys, coords, "gps", None, stats)


def preprocess_gps(path, **thresholds) -> Dataset:
    return dataset_from_traces(read_gps_csv(path), **thresholds)
