# %% [markdown]
# # How much history helps
#
# Every user's history is truncated to the most recent m check-ins, the model
# is retrained from the same seed, and test metrics are recorded per m.

# %%
from nextpoi.experiments import input_length_experiment
from nextpoi.synthetic import periodic_dataset
from nextpoi.training import TrainConfig

ds = periodic_dataset(weeks=4)
rows = input_length_experiment(ds, [8, 16, 32, 64], TrainConfig(dim=16, epochs=10, seed=0))
print(f"{'m':>4} {'ndcg@5':>8} {'recall@5':>9}")
for r in rows:
    print(f"{r['m']:>4} {r['ndcg@5']:>8.3f} {r['recall@5']:>9.3f}")
