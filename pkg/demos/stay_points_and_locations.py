# %% [markdown]
# # From GPS tracks to locations
#
# Raw tracks are reduced to stay points (places where someone lingered), stay
# points from all users are clustered with DBSCAN under great-circle distance,
# and every cluster becomes a location with a centroid and a convex hull.

# %%
import numpy as np

from nextpoi.pipeline import dataset_from_traces
from nextpoi.synthetic import gps_traces
from nextpoi.trajectory import cluster_stays_dbscan, detect_stay_points, enrich_stays, point_in_hull

traces = gps_traces(num_users=10, seed=3)
user = sorted(traces)[0]
print(f"{len(traces)} users, {sum(len(t) for t in traces.values())} track points")

# %% [markdown]
# A stay point needs 30 minutes inside a 200 m radius of the window's first fix.

# %%
stays = detect_stay_points(traces[user])
for s in stays[:5]:
    print(s.start_time, s.duration, round(s.lat, 5), round(s.lon, 5), s.member_count)

# %%
all_stays = [s for u in sorted(traces) for s in detect_stay_points(traces[u])]
locations = cluster_stays_dbscan(all_stays, eps=150.0, min_pts=3)
enriched = enrich_stays(all_stays, locations)
print(f"{len(all_stays)} stays -> {len(locations)} locations, {len(all_stays) - len(enriched)} noise stays")

# %% [markdown]
# Every member stay lies inside (or on) the hull of its location.

# %%
inside = all(point_in_hull((all_stays[m].lat, all_stays[m].lon), loc.hull)
             for loc in locations for m in loc.member_stays)
sizes = np.array([len(loc.member_stays) for loc in locations])
print("members inside hull:", inside, "| cluster sizes:", sizes.min(), np.median(sizes), sizes.max())

# %% [markdown]
# The full pipeline adds sessionizing and the fixed-point filter on top.

# %%
ds = dataset_from_traces(traces)
for key in ("stay_points", "locations_clustered", "users_after", "locations_after", "train_samples"):
    print(f"{key:>20}: {ds.stats[key]}")
