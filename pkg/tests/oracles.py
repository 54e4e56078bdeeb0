"""Independent reference implementations used as test oracles.

Each oracle recomputes a quantity by a different route than the package:
scalar loops instead of vectorized code, brute force instead of clever
algorithms. None of them import the code they check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

R_EARTH = 6_371_000.0


def law_of_cosines_distance(a, b) -> float:
    """Great-circle distance by the spherical law of cosines."""
    p1, l1 = math.radians(a[0]), math.radians(a[1])
    p2, l2 = math.radians(b[0]), math.radians(b[1])
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1)
    return R_EARTH * math.acos(max(-1.0, min(1.0, c)))


def vector_angle_distance(a, b) -> float:
    """Great-circle distance from the angle between unit vectors (atan2 form)."""
    def unit(p):
        phi, lam = math.radians(p[0]), math.radians(p[1])
        return np.array([math.cos(phi) * math.cos(lam), math.cos(phi) * math.sin(lam), math.sin(phi)])

    u, v = unit(a), unit(b)
    return R_EARTH * math.atan2(float(np.linalg.norm(np.cross(u, v))), float(u @ v))


def pairwise_distances(coords, dist=vector_angle_distance) -> list[list[float]]:
    n = len(coords)
    return [[dist(coords[i], coords[j]) for j in range(n)] for i in range(n)]


def brute_dbscan(coords, eps: float, min_pts: int, dist=vector_angle_distance):
    """Clusters (as frozensets) and the noise set by core-pair connectivity.

    Cores are linked when within eps; each connected core component is one
    cluster. A border point joins the adjacent component whose smallest core
    index is lowest.
    """
    n = len(coords)
    d = pairwise_distances(coords, dist)
    nbr = [[j for j in range(n) if d[i][j] <= eps] for i in range(n)]
    core = [len(nbr[i]) >= min_pts for i in range(n)]
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        if core[i]:
            for j in nbr[i]:
                if core[j]:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
    comp_min = {}
    for i in range(n):
        if core[i]:
            r = find(i)
            comp_min[r] = min(comp_min.get(r, i), i)
    members = {r: {i for i in range(n) if core[i] and find(i) == r} for r in comp_min}
    for i in range(n):
        if core[i]:
            continue
        adjacent = {find(j) for j in nbr[i] if core[j]}
        if adjacent:
            members[min(adjacent, key=lambda r: comp_min[r])].add(i)
    clusters = {frozenset(m) for m in members.values()}
    clustered = set().union(*clusters) if clusters else set()
    return clusters, set(range(n)) - clustered


def brute_hull_vertices(points) -> set:
    """Points not inside any triangle of, nor on any segment between, other points.

    Points are (x, y) pairs; duplicates must be removed beforehand.
    """
    pts = list(points)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def on_segment(p, a, b):
        return (cross(a, b, p) == 0 and min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))

    def in_triangle(p, a, b, c):
        s = [cross(a, b, p), cross(b, c, p), cross(c, a, p)]
        return all(x >= 0 for x in s) or all(x <= 0 for x in s)

    out = set()
    for p in pts:
        others = [q for q in pts if q != p]
        covered = any(on_segment(p, a, b) for a, b in itertools.combinations(others, 2))
        if not covered:
            covered = any(cross(a, b, c) != 0 and in_triangle(p, a, b, c)
                          for a, b, c in itertools.combinations(others, 3))
        if not covered:
            out.add(p)
    return out


def walk_sessions(times, window=86_400) -> list[list[int]]:
    """Session index lists by walking the gap-from-first rule."""
    sessions = []
    start = None
    for i, t in enumerate(times):
        if start is None or t - start > window:
            sessions.append([i])
            start = t
        else:
            sessions[-1].append(i)
    return sessions


def filter_fixed_point(user_sessions, min_poi=5, min_len=3, min_sessions=3):
    """Apply one rule at a time, round-robin, until a full round changes nothing.

    ``user_sessions`` maps user -> list of sessions -> list of (location, time).
    Returns the surviving structure with original location ids.
    """
    cur = {u: [list(s) for s in ss] for u, ss in user_sessions.items()}
    while True:
        before = repr(sorted(cur.items()))
        counts = {}
        for ss in cur.values():
            for s in ss:
                for loc, _ in s:
                    counts[loc] = counts.get(loc, 0) + 1
        cur = {u: [[x for x in s if counts[x[0]] >= min_poi] for s in ss] for u, ss in cur.items()}
        cur = {u: [s for s in ss if len(s) >= min_len] for u, ss in cur.items()}
        cur = {u: ss for u, ss in cur.items() if len(ss) >= min_sessions}
        if repr(sorted(cur.items())) == before:
            return cur


def relation_loops(times, locs, coords_dist, query_time, candidates):
    """Double-loop relation matrices in raw units (seconds, meters)."""
    n = len(times)
    dt = np.zeros((n, n))
    ds = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            dt[i, j] = abs(times[i] - times[j])
            ds[i, j] = coords_dist(locs[i], locs[j])
    cdt = np.zeros((len(candidates), n))
    cds = np.zeros((len(candidates), n))
    for c, cand in enumerate(candidates):
        for j in range(n):
            cdt[c, j] = abs(query_time - times[j])
            cds[c, j] = coords_dist(cand, locs[j])
    return dt, ds, cdt, cds


def textbook_attention(X, Wq, Wk, Wv):
    """softmax(Q K^T / sqrt(d)) V with scalar loops for the softmax."""
    Q, K, V = X @ Wq, X @ Wk, X @ Wv
    n, d = X.shape
    out = np.zeros((n, Wv.shape[1]))
    for i in range(n):
        logits = [float(Q[i] @ K[j]) / math.sqrt(d) for j in range(n)]
        m = max(logits)
        w = [math.exp(x - m) for x in logits]
        z = sum(w)
        for j in range(n):
            out[i] += (w[j] / z) * V[j]
    return out


def match_scores_loops(E_L, F, EN):
    """Per-entry candidate scores: column softmax over candidates, then row sums."""
    C, d = E_L.shape
    n = F.shape[0]
    raw = [[(sum(E_L[c, k] * F[j, k] for k in range(d)) + EN[c, j]) / math.sqrt(d) for j in range(n)]
           for c in range(C)]
    score = [0.0] * C
    for j in range(n):
        col = [raw[c][j] for c in range(C)]
        m = max(col)
        z = sum(math.exp(x - m) for x in col)
        for c in range(C):
            score[c] += math.exp(col[c] - m) / z
    return np.array(score)


def ndcg_brute(ranks, k: int, catalog: int) -> float:
    """Mean NDCG@K from explicit relevance lists with one relevant item each."""
    per = []
    for r in ranks:
        rel = [1 if pos == r else 0 for pos in range(1, catalog + 1)]
        dcg = math.fsum(rel[j - 1] / math.log2(j + 1) for j in range(1, k + 1) if j <= catalog)
        ideal = sorted(rel, reverse=True)
        idcg = math.fsum(ideal[j - 1] / math.log2(j + 1) for j in range(1, k + 1) if j <= catalog)
        per.append(dcg / idcg)
    return math.fsum(per) / len(per)


def recall_brute(ranks, k: int) -> float:
    hits = 0
    for r in ranks:
        if r in range(1, k + 1):
            hits += 1
    return hits / len(ranks)


def rank_by_sort(scores, label: int) -> int:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order.index(label) + 1


def log_sum_exp_ce(scores, positive: int) -> float:
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores)) - scores[positive]


class ReferenceAdam:
    """Scalar-loop Adam with bias correction."""

    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, p in params.items():
            flat_p = list(np.asarray(p, dtype=float).ravel())
            flat_g = list(np.asarray(grads[name], dtype=float).ravel())
            m = self.m.setdefault(name, [0.0] * len(flat_p))
            v = self.v.setdefault(name, [0.0] * len(flat_p))
            for i, g in enumerate(flat_g):
                m[i] = self.b1 * m[i] + (1 - self.b1) * g
                v[i] = self.b2 * v[i] + (1 - self.b2) * g * g
                mh = m[i] / (1 - self.b1 ** self.t)
                vh = v[i] / (1 - self.b2 ** self.t)
                flat_p[i] -= self.lr * mh / (math.sqrt(vh) + self.eps)
            out[name] = np.array(flat_p).reshape(np.shape(p))
        return out


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error; the denominator never drops below ``floor``."""
    num = float(np.linalg.norm(a - b))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return num / den
