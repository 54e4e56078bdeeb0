"""Input-length sweep: retrain on each user's last ``m`` check-ins."""

from __future__ import annotations

import csv
from dataclasses import replace
from typing import Sequence

from .dataset import Dataset, make_splits
from .evaluation import evaluate
from .training import ModelScorer, TrainConfig, train

DEFAULT_M_VALUES = tuple(range(20, 201, 20))


def input_length_experiment(ds: Dataset, m_values: Sequence[int] = DEFAULT_M_VALUES,
                            config: TrainConfig | None = None) -> list[dict]:
    """One row per ``m``: test NDCG@5 and Recall@5 after training with a fixed seed.

    Users shorter than ``m`` keep all their check-ins; ``max_len`` is raised to
    ``m`` when needed so the whole truncated history reaches the model.
    """
    config = config or TrainConfig()
    rows = []
    for m in m_values:
        if m < 4:
            raise ValueError("m must be at least 4")
        cfg = replace(config, max_len=max(config.max_len, m))
        splits = make_splits(ds, last_m=m)
        result = train(ds, cfg, splits)
        rep = evaluate(ModelScorer(result.params, result.geometry, cfg), splits.test, (5,))
        rows.append({"m": m, "ndcg@5": rep.ndcg_at[5], "recall@5": rep.recall_at[5]})
    return rows


def write_rows(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "ndcg@5", "recall@5"])
        for r in rows:
            w.writerow([r["m"], repr(r["ndcg@5"]), repr(r["recall@5"])])
