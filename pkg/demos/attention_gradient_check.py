# %% [markdown]
# # One forward pass and a finite-difference check
#
# A single history is split into a long-term part and the final session, each
# part runs through relation-aware self-attention, a scalar gate fuses the two,
# and candidates are scored by attention over the fused rows.

# %%
import numpy as np

from nextpoi.dataset import CheckIn, split_long_short
from nextpoi.model import Geometry, backward, cross_entropy, forward, init_params
from nextpoi.synthetic import ring_coords
from nextpoi.trajectory import haversine_matrix

L, d = 6, 8
coords = ring_coords(L)
dist = haversine_matrix(coords[:, 0], coords[:, 1], coords[:, 0], coords[:, 1])
geo = Geometry(dist, t_scale=86_400.0, s_scale=float(dist.max()))
params = init_params(num_users=1, num_locations=L, dim=d, seed=0)

day = 86_400
history = [CheckIn(0, loc, t, 3600) for loc, t in
           [(0, 0), (1, 4 * 3600), (2, 2 * day), (3, 2 * day + 3 * 3600), (4, 5 * day), (5, 5 * day + 7200)]]
split = split_long_short(history, label=0, query_time=5 * day + 4 * 3600)
print("long:", [c.location for c in split.long], "short:", [c.location for c in split.short])

# %% [markdown]
# Scores over all locations sum to the number of context rows, because each
# row's attention over candidates is a distribution.

# %%
candidates = np.arange(L)
score, prob, cache = forward(params, split, candidates, geo)
print("scores:", np.round(score, 4), "sum:", score.sum())
print("probabilities:", np.round(prob, 4))

# %% [markdown]
# Analytic gradients against central differences for the gate weights.

# %%
loss, g_score = cross_entropy(score, positive=0)
grads = backward(params, cache, g_score)

def loss_of_params():
    return cross_entropy(forward(params, split, candidates, geo)[0], 0)[0]

w = params["gate_w"]
numeric = np.zeros_like(w)
for i in range(w.size):
    old = w[i]
    w[i] = old + 1e-4
    up = loss_of_params()
    w[i] = old - 1e-4
    down = loss_of_params()
    w[i] = old
    numeric[i] = (up - down) / 2e-4
rel = np.linalg.norm(grads["gate_w"] - numeric) / np.linalg.norm(numeric)
print(f"loss {loss:.6f}, gate_w relative error {rel:.2e}")
