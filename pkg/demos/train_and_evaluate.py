# %% [markdown]
# # Training on a weekly routine
#
# Synthetic users visit a fixed location at each of 21 slots a week, so the
# next location is predictable from the hour of the week. A popularity
# baseline cannot exploit that; the attention model can.

# %%
from nextpoi.dataset import make_splits
from nextpoi.evaluation import UserPop, evaluate
from nextpoi.synthetic import periodic_dataset
from nextpoi.training import ModelScorer, TrainConfig, train

ds = periodic_dataset()
splits = make_splits(ds)
print(f"{ds.num_users} users, {ds.num_locations} locations, "
      f"{len(splits.train)}/{len(splits.val)}/{len(splits.test)} train/val/test samples")

# %%
cfg = TrainConfig(dim=32, epochs=30, seed=0)
result = train(ds, cfg, splits)
for row in result.log[::5]:
    print(row)
print("best epoch by validation Recall@5:", result.best_epoch)

# %%
model = evaluate(ModelScorer(result.best_params, result.geometry, cfg), splits.test, (1, 5, 10))
pop = evaluate(UserPop(ds), splits.test, (1, 5, 10))
for k in (1, 5, 10):
    print(f"Recall@{k}: model {model.recall_at[k]:.3f}  userpop {pop.recall_at[k]:.3f}   "
          f"NDCG@{k}: model {model.ndcg_at[k]:.3f}  userpop {pop.ndcg_at[k]:.3f}")

# %% [markdown]
# Switching off the duration embedding or the long/short split gives the
# ablated variants.

# %%
for flags in ({"use_duration": False}, {"use_long_short": False}):
    c = TrainConfig(dim=32, epochs=30, seed=0, **flags)
    r = train(ds, c, splits)
    rep = evaluate(ModelScorer(r.best_params, r.geometry, c), splits.test, (5,))
    print(flags, f"Recall@5 {rep.recall_at[5]:.3f}")
