"""Slow, independent reference implementations used as test oracles.

Nothing here imports from the package except plain data types, so a bug in
a vectorized kernel cannot hide in both sides of a comparison.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def cos(a, b) -> float:
    a = [float(v) for v in np.ravel(a)]
    b = [float(v) for v in np.ravel(b)]
    sa, sb = max(map(abs, a), default=0.0), max(map(abs, b), default=0.0)
    if sa == 0.0 or sb == 0.0:
        return 0.0
    a, b = [v / sa for v in a], [v / sb for v in b]
    na = math.sqrt(sum(v * v for v in a))
    nb = math.sqrt(sum(v * v for v in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def neg_entropy(row) -> float:
    return sum(p * math.log(p) for p in row if p > 0)


def minmax(values):
    lo, hi = min(values), max(values)
    if hi - lo <= 1e-12:
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def all_pairs_mean_cosine(track) -> float:
    """Mean cosine over all unordered frame pairs of one position's keys."""
    n = len(track)
    if n < 2:
        return 1.0
    vals = [cos(track[i], track[j]) for i in range(n) for j in range(i + 1, n)]
    return sum(vals) / len(vals)


def brute_force_bsm(keys, a_idx, b_idx, r):
    """Best ``r`` edges over every A->B assignment and every r-subset of A.

    Returns a sorted list of ``(a, b)`` pairs. Assignments are enumerated
    exhaustively (|B|^|A|), subsets by ``itertools.combinations``; the
    objective is the summed cosine of the kept edges. Vectorized over
    assignments with numpy only for speed.
    """
    a_idx, b_idx = list(a_idx), list(b_idx)
    if r == 0:
        return []
    s = np.array([[cos(keys[a], keys[b]) for b in b_idx] for a in a_idx])
    na, nb = len(a_idx), len(b_idx)
    assign = np.array(list(itertools.product(range(nb), repeat=na)))  # [nb^na, na]
    edge = s[np.arange(na)[None, :], assign]  # [n_assign, na]
    best, best_pairs = -np.inf, None
    for subset in itertools.combinations(range(na), r):
        tot = edge[:, list(subset)].sum(axis=1)
        k = int(np.argmax(tot))
        if tot[k] > best + 1e-15:
            best = tot[k]
            best_pairs = [(a_idx[i], b_idx[assign[k, i]]) for i in subset]
    return sorted(best_pairs)


def apply_pairs(tokens, sizes, pairs):
    """Merge each ``(src, dst)`` pair by direct size-weighted mean.

    Returns ``(tokens, sizes)`` with sources removed and survivors in order.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    n = tokens.shape[0]
    srcs = {a for a, _ in pairs}
    groups = {p: [p] for p in range(n) if p not in srcs}
    for a, b in pairs:
        groups[b].append(a)
    out_x, out_s = [], []
    for p in sorted(groups):
        members = groups[p]
        w = sum(sizes[q] for q in members)
        out_x.append(sum(sizes[q] * tokens[q] for q in members) / w)
        out_s.append(w)
    return np.array(out_x), np.array(out_s)


def simulate_tim_track(tokens, keys, attention, r_t):
    """TIM merging for one position in pure python.

    Saliency is fixed from ``attention``; a fused cell takes the mean of the
    two saliencies, values and keys are fused with renormalized weights.
    Returns ``(tokens, groups)`` where groups are lists of original frames.
    """
    x = [np.asarray(v, dtype=np.float64) for v in tokens]
    k = [np.asarray(v, dtype=np.float64) for v in keys]
    alpha = minmax([neg_entropy(row) for row in attention])
    groups = [[t] for t in range(len(x))]
    for _ in range(r_t):
        sims = [cos(k[t], k[t + 1]) for t in range(len(k) - 1)]
        t = sims.index(max(sims))
        a, b = alpha[t], alpha[t + 1]
        wb = 0.5 if a + b < 1e-12 else b / (a + b)
        x[t:t + 2] = [(1 - wb) * x[t] + wb * x[t + 1]]
        k[t:t + 2] = [(1 - wb) * k[t] + wb * k[t + 1]]
        alpha[t:t + 2] = [0.5 * (a + b)]
        groups[t:t + 2] = [groups[t] + groups[t + 1]]
    return np.array(x), groups
