"""Full model: embeddings -> two attention branches -> fusion -> matching.

``forward`` records what ``backward`` needs, so one training sample costs one
forward and one backward pass with no recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import (BranchParams, attention_match, attention_match_backward, fuse_backward,
                        fuse_long_short, self_attention_aggregate, self_attention_backward)
from .dataset import Sample, TrajectorySplit, branch_relations, split_long_short
from .embedding import (embed_intervals, embed_intervals_backward, embed_sequence,
                        embed_sequence_backward, init_embedding_params)

PARAM_NAMES = (
    "user_table", "location_table", "time_table", "duration_table",
    "unit_dt", "unit_ds", "reduce_w",
    "long_wq", "long_wk", "long_wv", "short_wq", "short_wk", "short_wv",
    "gate_w", "gate_b",
)


@dataclass
class Geometry:
    """Location distances and interval normalizers shared by all samples."""

    dist: np.ndarray
    t_scale: float = 1.0
    s_scale: float = 1.0


def init_params(num_users: int, num_locations: int, dim: int, seed: int,
                num_buckets: int = 48) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) initialization of every parameter."""
    rng = np.random.default_rng(seed)
    params = init_embedding_params(num_users, num_locations, dim, rng, num_buckets)
    bound = 1.0 / np.sqrt(dim)
    for name in PARAM_NAMES[7:13]:
        params[name] = rng.uniform(-bound, bound, size=(dim, dim))
    params["gate_w"] = rng.uniform(-bound, bound, size=(2 * dim,))
    params["gate_b"] = rng.uniform(-bound, bound, size=(1,))
    return {name: params[name] for name in PARAM_NAMES}


def zeros_like_params(params) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def make_split(sample: Sample, max_len: int, use_long_short: bool = True) -> TrajectorySplit:
    """Long/short split of a sample; with the ablation off everything is short."""
    split = split_long_short(sample.inputs, sample.label, sample.query_time, max_len=max_len)
    if not use_long_short:
        split = TrajectorySplit([], split.long + split.short, split.label, split.query_time)
    return split


def _branch(params, prefix):
    return BranchParams(params[f"{prefix}_wq"], params[f"{prefix}_wk"], params[f"{prefix}_wv"])


def _dropout_mask(rng, shape, rate):
    if rng is None or rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(params, split: TrajectorySplit, candidates, geo: Geometry, use_duration: bool = True,
            use_long_short: bool = True, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Scores and probabilities over ``candidates`` for one split.

    Dropout is applied to both sequence embeddings and the fused rows when
    ``rng`` is given. Returns ``(score, prob, cache)``.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if not use_long_short and split.long:
        split = TrajectorySplit([], split.long + split.short, split.label, split.query_time)
    branches = {}
    for name, part in (("long", split.long), ("short", split.short)):
        X = embed_sequence(part, params, use_duration)
        mask = _dropout_mask(rng, X.shape, dropout)
        Xd = X if mask is None else X * mask
        r = branch_relations(part, split.query_time, geo.dist, candidates, geo.t_scale, geo.s_scale)
        dt, ds, cand_dt, cand_ds = r.dt, r.ds, r.cand_dt, r.cand_ds
        rel = embed_intervals(dt, ds, params)
        S, att_cache = self_attention_aggregate(Xd, rel, None, _branch(params, name))
        branches[name] = dict(part=part, mask=mask, dt=dt, ds=ds, cand_dt=cand_dt, cand_ds=cand_ds,
                              S=S, att=att_cache)
    if use_long_short:
        fused, fuse_cache = fuse_long_short(branches["long"]["S"], branches["short"]["S"],
                                            params["gate_w"], float(params["gate_b"][0]))
        F = fused.matrix
    else:
        fuse_cache = None
        F = branches["short"]["S"]
    f_mask = _dropout_mask(rng, F.shape, dropout)
    Fd = F if f_mask is None else F * f_mask
    cand_dt = np.hstack([branches["long"]["cand_dt"], branches["short"]["cand_dt"]])
    cand_ds = np.hstack([branches["long"]["cand_ds"], branches["short"]["cand_ds"]])
    EN = embed_intervals(cand_dt, cand_ds, params)
    E_L = params["location_table"][candidates]
    score, prob, match_cache = attention_match(E_L, Fd, EN)
    cache = dict(branches=branches, fuse=fuse_cache, f_mask=f_mask, cand_dt=cand_dt, cand_ds=cand_ds,
                 match=match_cache, candidates=candidates, use_duration=use_duration,
                 use_long_short=use_long_short)
    return score, prob, cache


def backward(params, cache, grad_score: np.ndarray, grads: dict | None = None) -> dict:
    """Accumulate gradients of a scalar objective given ``d objective / d score``."""
    if grads is None:
        grads = zeros_like_params(params)
    dE_L, dF, dEN = attention_match_backward(cache["match"], grad_score)
    np.add.at(grads["location_table"], cache["candidates"], dE_L)
    embed_intervals_backward(cache["cand_dt"], cache["cand_ds"], dEN, params, grads)
    if cache["f_mask"] is not None:
        dF = dF * cache["f_mask"]
    br = cache["branches"]
    if cache["use_long_short"]:
        dS_long, dS_short, dgw, dgb = fuse_backward(cache["fuse"], dF)
        grads["gate_w"] += dgw
        grads["gate_b"] += dgb
    else:
        dS_long, dS_short = dF[:0], dF
    for name, dS in (("long", dS_long), ("short", dS_short)):
        b = br[name]
        if b["att"] is None:
            continue
        dX, drel, dWq, dWk, dWv = self_attention_backward(b["att"], dS)
        grads[f"{name}_wq"] += dWq
        grads[f"{name}_wk"] += dWk
        grads[f"{name}_wv"] += dWv
        embed_intervals_backward(b["dt"], b["ds"], drel, params, grads)
        if b["mask"] is not None:
            dX = dX * b["mask"]
        embed_sequence_backward(b["part"], dX, params, grads, cache["use_duration"])
    return grads


def cross_entropy(score: np.ndarray, positive: int = 0) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of ``score`` with class ``positive``; returns (loss, dloss/dscore)."""
    m = np.max(score)
    lse = m + np.log(np.sum(np.exp(score - m)))
    prob = np.exp(score - lse)
    grad = prob.copy()
    grad[positive] -= 1.0
    return float(lse - score[positive]), grad


def score_candidates(params, sample: Sample, geo: Geometry, candidates=None, max_len: int = 100,
                     use_duration: bool = True, use_long_short: bool = True) -> np.ndarray:
    """Inference-mode scores for ``candidates`` (default: whole catalog)."""
    if candidates is None:
        candidates = np.arange(params["location_table"].shape[0])
    split = make_split(sample, max_len, use_long_short)
    score, _, _ = forward(params, split, candidates, geo, use_duration, use_long_short)
    return score
