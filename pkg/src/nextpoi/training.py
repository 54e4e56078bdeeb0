"""Negative-sampled cross-entropy training with Adam, and checkpoints.

Seeds derived from ``TrainConfig.seed`` (``base``):

* initialization: ``base``
* negatives for the sample at global step ``s``: ``base + s``
* dropout masks at step ``s``: ``SeedSequence([base, 1, s])``
* epoch ``e`` shuffling: ``SeedSequence([base, 2, e])``

where the global step counts training samples processed since epoch 1.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import Dataset, Splits, dataset_fingerprint, derive_duration, make_splits, relation_scales
from .evaluation import MetricsReport, evaluate
from .model import (PARAM_NAMES, Geometry, backward, cross_entropy, forward, init_params, make_split,
                    score_candidates, zeros_like_params)

__all__ = ["TrainConfig", "AdamState", "adam_step", "sample_negatives", "batch_loss", "train",
           "TrainResult", "save_checkpoint", "load_checkpoint", "Checkpoint", "ModelScorer",
           "derive_duration"]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NPOICKPT"
CHECKPOINT_VERSION = 1


class NumericalInstability(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    dim: int = 50
    learning_rate: float = 0.001
    dropout: float = 0.2
    epochs: int = 50
    max_len: int = 100
    num_negatives: int = 10
    batch_size: int = 32
    seed: int = 0
    use_duration: bool = True
    use_long_short: bool = True
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.dim < 1 or self.max_len < 1 or self.batch_size < 1:
            raise ValueError("dim, max_len and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.num_negatives < 0:
            raise ValueError("epochs and num_negatives must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls(zeros_like_params(params), zeros_like_params(params))


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def sample_negatives(label: int, num_locations: int, k: int, seed: int) -> np.ndarray:
    """``k`` distinct ids drawn uniformly from the catalog minus ``label``."""
    if k >= num_locations:
        raise ValueError(f"cannot draw {k} negatives from {num_locations} locations")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    draw = rng.choice(num_locations - 1, size=k, replace=False).astype(np.int64)
    return draw + (draw >= label)


def batch_loss(score_lists) -> float:
    """Mean cross-entropy over a batch; the positive sits at index 0 of each score vector."""
    return float(np.mean([cross_entropy(np.asarray(s), 0)[0] for s in score_lists]))


def _global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


class ModelScorer:
    """Callable producing full-catalog inference scores for a sample."""

    def __init__(self, params, geo: Geometry, config: TrainConfig):
        self.params = params
        self.geo = geo
        self.config = config
        self.candidates = np.arange(params["location_table"].shape[0])

    def __call__(self, sample) -> np.ndarray:
        return score_candidates(self.params, sample, self.geo, self.candidates, self.config.max_len,
                                self.config.use_duration, self.config.use_long_short)


@dataclass
class TrainResult:
    params: dict
    adam: AdamState
    best_params: dict
    best_epoch: int
    log: list[dict] = field(default_factory=list)
    geometry: Geometry | None = None
    splits: Splits | None = None


def geometry_for(ds: Dataset, splits: Splits, max_len: int) -> Geometry:
    dist = ds.distance_matrix()
    t_scale, s_scale = relation_scales(splits.train, dist, max_len)
    return Geometry(dist, t_scale, s_scale)


def train_step(params, samples, config: TrainConfig, geo: Geometry, num_locations: int, first_step: int):
    """Gradients averaged over ``samples`` (in order) and the mean loss."""
    grads = zeros_like_params(params)
    losses = []
    for offset, smp in enumerate(samples):
        step = first_step + offset
        negatives = sample_negatives(smp.label, num_locations, config.num_negatives, config.seed + step)
        candidates = np.concatenate([[smp.label], negatives])
        split = make_split(smp, config.max_len, config.use_long_short)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, step]))
        score, _, cache = forward(params, split, candidates, geo, config.use_duration,
                                  config.use_long_short, config.dropout, rng)
        loss, gscore = cross_entropy(score, 0)
        if not np.isfinite(loss):
            raise NumericalInstability("non-finite loss")
        losses.append(loss)
        backward(params, cache, gscore, grads)
    n = len(samples)
    for name in PARAM_NAMES:
        grads[name] /= n
        if not np.all(np.isfinite(grads[name])):
            raise NumericalInstability(f"numerical instability in {name}")
    return grads, float(np.mean(losses))


def train(ds: Dataset, config: TrainConfig, splits: Splits | None = None, on_epoch=None,
          eval_k: int = 5) -> TrainResult:
    """Train on ``splits.train`` and monitor ``splits.val`` every epoch.

    The best parameters by validation Recall@``eval_k`` (earliest epoch wins
    ties; epoch 0 is the initialization) are kept next to the final ones.
    ``on_epoch(row, params)`` is called after each epoch and may return True
    to stop early.
    """
    if splits is None:
        splits = make_splits(ds)
    if not splits.train:
        raise ValueError("empty dataset")
    L = ds.num_locations
    if config.num_negatives >= L:
        raise ValueError(f"num_negatives={config.num_negatives} must be below the {L} locations")
    geo = geometry_for(ds, splits, config.max_len)
    params = init_params(ds.num_users, L, config.dim, config.seed)
    adam = AdamState.zeros(params)
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch, best_recall = 0, -1.0
    if splits.val:
        best_recall = evaluate(ModelScorer(params, geo, config), splits.val, (eval_k,)).recall_at[eval_k]
    log = []
    step = 0
    n = len(splits.train)
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([config.seed, 2, epoch])).permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [splits.train[i] for i in order[start:start + config.batch_size]]
            grads, loss = train_step(params, batch, config, geo, L, step)
            step += len(batch)
            norm = _global_norm(grads)
            if config.clip_norm > 0 and norm > config.clip_norm:
                for g in grads.values():
                    g *= config.clip_norm / norm
            adam_step(params, grads, adam, config.learning_rate)
            losses.extend([loss] * len(batch))
        row = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if splits.val:
            rep = evaluate(ModelScorer(params, geo, config), splits.val, (eval_k,))
            row[f"val_recall@{eval_k}"] = rep.recall_at[eval_k]
            row[f"val_ndcg@{eval_k}"] = rep.ndcg_at[eval_k]
            if rep.recall_at[eval_k] > best_recall:
                best_recall = rep.recall_at[eval_k]
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in params.items()}
        log.append(row)
        logger.info("epoch %d loss %.6f", epoch, row["train_loss"])
        if on_epoch is not None and on_epoch(row, params):
            break
    return TrainResult(params, adam, best_params, best_epoch, log, geo, splits)


def write_log(path, log: list[dict], eval_k: int = 5) -> None:
    cols = ["epoch", "train_loss", f"val_recall@{eval_k}", f"val_ndcg@{eval_k}"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in log:
            w.writerow([row["epoch"]] + [repr(row.get(c, float("nan"))) for c in cols[1:]])


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState
    config: TrainConfig
    meta: dict


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize: magic, u32 version, u64 header length, JSON header, raw little-endian blocks."""
    blocks = []
    for prefix, arrays in (("params", ckpt.params), ("adam_m", ckpt.adam.m), ("adam_v", ckpt.adam.v)):
        for name in PARAM_NAMES:
            blocks.append((f"{prefix}/{name}", np.ascontiguousarray(arrays[name], dtype="<f8")))
    offset = 0
    index = []
    for name, arr in blocks:
        index.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "offset": offset,
                      "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {
        "config": asdict(ckpt.config),
        "meta": ckpt.meta,
        "adam": {"step": ckpt.adam.step, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps},
        "blocks": index,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    parts.extend(arr.tobytes() for _, arr in blocks)
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    groups = {"params": {}, "adam_m": {}, "adam_v": {}}
    for blk in header["blocks"]:
        prefix, name = blk["name"].split("/", 1)
        chunk = raw[base + blk["offset"]: base + blk["offset"] + blk["nbytes"]]
        groups[prefix][name] = np.frombuffer(chunk, dtype=blk["dtype"]).reshape(blk["shape"]).astype(np.float64)
    a = header["adam"]
    adam = AdamState(groups["adam_m"], groups["adam_v"], a["step"], a["beta1"], a["beta2"], a["eps"])
    return Checkpoint(groups["params"], adam, TrainConfig.from_dict(header["config"]), header["meta"])


def checkpoint_meta(ds: Dataset, result: TrainResult, kind: str) -> dict:
    return {
        "kind": kind,
        "dataset_fingerprint": dataset_fingerprint(ds),
        "num_users": ds.num_users,
        "num_locations": ds.num_locations,
        "t_scale": result.geometry.t_scale,
        "s_scale": result.geometry.s_scale,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.log),
    }


def geometry_from_checkpoint(ds: Dataset, ckpt: Checkpoint) -> Geometry:
    if ckpt.meta.get("dataset_fingerprint") != dataset_fingerprint(ds):
        raise ValueError("checkpoint was trained on a different dataset")
    return Geometry(ds.distance_matrix(), ckpt.meta["t_scale"], ckpt.meta["s_scale"])


def evaluate_checkpoint(ds: Dataset, ckpt: Checkpoint, samples, ks=(5, 10)) -> MetricsReport:
    geo = geometry_from_checkpoint(ds, ckpt)
    return evaluate(ModelScorer(ckpt.params, geo, ckpt.config), samples, ks)
