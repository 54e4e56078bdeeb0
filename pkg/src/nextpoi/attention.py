"""Self-attention aggregation, long/short fusion and candidate matching.

Every forward function returns its output together with a cache consumed by
the matching ``*_backward`` function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = -1e30


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def padding_mask(valid) -> np.ndarray:
    """``M[i, j] = 1`` iff positions i and j are both valid."""
    v = np.asarray(valid, dtype=np.float64)
    return np.outer(v, v)


@dataclass
class BranchParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray


@dataclass
class FusedSequence:
    matrix: np.ndarray
    alpha: float


def self_attention_aggregate(E: np.ndarray, rel: np.ndarray, M: np.ndarray | None, params: BranchParams,
                             valid=None):
    """``S = (M * softmax((Q K^T + rel) / sqrt(d))) V`` with ``Q, K, V = E W_Q, E W_K, E W_V``.

    The mask multiplies the row-softmax output; it does not renormalize it.
    Columns of invalid positions get a large negative logit so every row's
    softmax stays well defined. Returns ``(S, cache)``.
    """
    n, d = E.shape
    if n == 0:
        return np.zeros((0, params.wv.shape[1])), None
    if rel.shape != (n, n):
        raise ValueError(f"relation shape {rel.shape} does not match sequence length {n}")
    if M is None:
        M = np.ones((n, n))
    elif M.shape != (n, n):
        raise ValueError(f"mask shape {M.shape} does not match sequence length {n}")
    Q = E @ params.wq
    K = E @ params.wk
    V = E @ params.wv
    scale = np.sqrt(d)
    logits = (Q @ K.T + rel) / scale
    if valid is not None:
        logits = np.where(np.asarray(valid, dtype=bool)[None, :], logits, NEG_INF)
    A = softmax(logits, axis=1)
    B = M * A
    S = B @ V
    cache = (E, Q, K, V, A, B, M, params, scale)
    return S, cache


def self_attention_backward(cache, grad_S: np.ndarray):
    """Gradients ``(dE, drel, dWq, dWk, dWv)`` of a :func:`self_attention_aggregate` call."""
    E, Q, K, V, A, B, M, params, scale = cache
    dB = grad_S @ V.T
    dV = B.T @ grad_S
    dA = M * dB
    dlogits = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    dpre = dlogits / scale
    dQ = dpre @ K
    dK = dpre.T @ Q
    dWq = E.T @ dQ
    dWk = E.T @ dK
    dWv = E.T @ dV
    dE = dQ @ params.wq.T + dK @ params.wk.T + dV @ params.wv.T
    return dE, dpre, dWq, dWk, dWv


def _row_mean(S: np.ndarray) -> np.ndarray:
    if S.shape[0] == 0:
        return np.zeros(S.shape[1])
    return S.mean(axis=0)


def fuse_long_short(S_long: np.ndarray, S_short: np.ndarray, gate_w: np.ndarray, gate_b: float):
    """Gated fusion: long rows scaled by ``alpha``, short rows by ``1 - alpha``.

    ``alpha = sigmoid(gate_w . [mean(S_long), mean(S_short)] + gate_b)``; the
    mean of an empty branch is the zero vector.
    """
    pooled = np.concatenate([_row_mean(S_long), _row_mean(S_short)])
    alpha = sigmoid(float(gate_w @ pooled + gate_b))
    fused = np.vstack([alpha * S_long, (1.0 - alpha) * S_short])
    return FusedSequence(fused, alpha), (S_long, S_short, pooled, alpha, gate_w)


def fuse_backward(cache, grad_F: np.ndarray):
    """Gradients ``(dS_long, dS_short, dgate_w, dgate_b)``."""
    S_long, S_short, pooled, alpha, gate_w = cache
    n_long, d = S_long.shape
    g_long, g_short = grad_F[:n_long], grad_F[n_long:]
    d_alpha = float(np.sum(g_long * S_long) - np.sum(g_short * S_short))
    d_h = d_alpha * alpha * (1.0 - alpha)
    d_pooled = d_h * gate_w
    dS_long = alpha * g_long
    dS_short = (1.0 - alpha) * g_short
    if n_long:
        dS_long = dS_long + d_pooled[:d] / n_long
    if S_short.shape[0]:
        dS_short = dS_short + d_pooled[d:] / S_short.shape[0]
    return dS_long, dS_short, d_h * pooled, d_h


def attention_match(E_L: np.ndarray, F: np.ndarray, EN: np.ndarray):
    """Score candidates against the fused sequence.

    ``A = softmax((E_L F^T + EN) / sqrt(d))`` normalized over candidates (axis
    0), ``score[c] = sum_j A[c, j]`` and ``prob = softmax(score)``. Returns
    ``(score, prob, cache)``.
    """
    if F.shape[0] == 0:
        raise ValueError("no context")
    C, d = E_L.shape
    if EN.shape != (C, F.shape[0]):
        raise ValueError(f"candidate relation shape {EN.shape} != {(C, F.shape[0])}")
    scale = np.sqrt(d)
    logits = (E_L @ F.T + EN) / scale
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    # summing sorted columns makes the normalizer independent of candidate order
    A = e / np.sort(e, axis=0).sum(axis=0, keepdims=True)
    score = A.sum(axis=1)
    prob = softmax(score)
    return score, prob, (E_L, F, A, scale)


def attention_match_backward(cache, grad_score: np.ndarray):
    """Gradients ``(dE_L, dF, dEN)`` given the gradient of the summed scores."""
    E_L, F, A, scale = cache
    dA = np.broadcast_to(grad_score[:, None], A.shape)
    dY = A * (dA - np.sum(dA * A, axis=0, keepdims=True))
    dpre = dY / scale
    return dpre @ F, dpre.T @ E_L, dpre
