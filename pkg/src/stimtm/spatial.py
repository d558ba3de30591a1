"""Spatial merging: static-prioritized, segment-consistent bipartite matching.

Frames are split into temporal segments at dips of the frame-to-frame
similarity curve. Inside each segment, positions whose keys stay stable
across frames (high static score) form the candidate pool, bipartite soft
matching runs on the pool, and the resulting merge pattern is applied to
every frame of the segment so the grid stays rectangular.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsm import alternate_split, match, merge_plan, weighted_merge
from .core import DEGENERATE_EPS, Provenance, TokenGrid, pairwise_cosine, rowwise_cosine


def frame_similarity_curve(keys: np.ndarray) -> np.ndarray:
    """Mean over positions of the cosine between frames t and t+1, shape [n_t - 1]."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape[0] < 2:
        return np.zeros(0)
    return rowwise_cosine(keys[:-1], keys[1:]).mean(axis=1)


def depth_scores(sims) -> np.ndarray:
    """Depth of each dip in the similarity curve.

    Entry ``j`` is ``max(S[:j]) + max(S[j+1:]) - 2*S[j]``; the two endpoints,
    where one side is empty, are NaN.
    """
    s = np.asarray(sims, dtype=np.float64)
    d = np.full(s.shape, np.nan)
    if s.size < 3:
        return d
    left = np.maximum.accumulate(s)[:-2]
    right = np.maximum.accumulate(s[::-1])[::-1][2:]
    d[1:-1] = left + right - 2.0 * s[1:-1]
    return d


def choose_boundaries(depth, k: int) -> list[int]:
    """Pick ``k - 1`` segment starts (0-based frame index of each new segment).

    A start at ``j + 1`` splits after frame ``j``, where ``depth[j]`` is a
    local maximum. Local maxima must be positive and at least as deep as
    their defined neighbours; deeper ones win, earlier ones win ties. When
    there are not enough, the deepest remaining positive entries are used,
    then starts nearest an equal-length split.
    """
    depth = np.asarray(depth, dtype=np.float64)
    n_t = depth.size + 1
    k = max(1, min(int(k), n_t))
    need = k - 1
    if need == 0:
        return []

    valid = ~np.isnan(depth)
    positive = valid & (depth > DEGENERATE_EPS)
    peaks = []
    for j in np.nonzero(positive)[0]:
        left_ok = j == 0 or not valid[j - 1] or depth[j] >= depth[j - 1]
        right_ok = j == depth.size - 1 or not valid[j + 1] or depth[j] >= depth[j + 1]
        if left_ok and right_ok:
            peaks.append(j)

    def by_depth(idx):
        return sorted(idx, key=lambda j: (-depth[j], j))

    chosen = by_depth(peaks)[:need]
    if len(chosen) < need:
        rest = [j for j in np.nonzero(positive)[0] if j not in chosen]
        chosen += by_depth(rest)[: need - len(chosen)]
    starts = {int(j) + 1 for j in chosen}
    for q in range(1, k):
        if len(starts) >= need:
            break
        target = int(round(q * n_t / k))
        free = [c for c in range(1, n_t) if c not in starts]
        starts.add(min(free, key=lambda c: (abs(c - target), c)))
    return sorted(starts)


def segments_from_starts(starts, n_t: int) -> list[tuple[int, int]]:
    edges = [0, *starts, n_t]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def static_scores(segment_keys: np.ndarray) -> np.ndarray:
    """Mean pairwise cosine of each position's keys over a segment, shape [n_s].

    A single-frame segment scores 1 everywhere.
    """
    keys = np.asarray(segment_keys, dtype=np.float64)
    t_s, n_s = keys.shape[:2]
    if t_s < 2:
        return np.ones(n_s)
    gram = pairwise_cosine(np.swapaxes(keys, 0, 1), np.swapaxes(keys, 0, 1))  # [n_s, T_S, T_S]
    iu = np.triu_indices(t_s, k=1)
    return gram[:, iu[0], iu[1]].mean(axis=1)


def top_candidates(scores, count: int) -> np.ndarray:
    """Indices of the ``count`` highest scores; lower index wins ties."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return np.sort(order[:count])


def bsm_on_candidates(tokens, keys, candidates, r_s: int, sizes):
    """Bipartite soft matching restricted to ``candidates``.

    ``tokens`` is [n_s, C] or [F, n_s, C] (the same pattern is applied to
    every leading slice), ``keys`` is [n_s, C_k], ``sizes`` broadcasts like
    ``tokens`` without channels. Returns ``(tokens, sizes, mapping)`` where
    ``mapping[old] = new`` position.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    n_s = tokens.shape[-2]
    sizes = np.broadcast_to(np.asarray(sizes, dtype=np.float64), tokens.shape[:-1])
    a_idx, b_idx = alternate_split(candidates)
    m = match(np.asarray(keys, dtype=np.float64), a_idx, b_idx, r_s)
    mapping = merge_plan(n_s, m)
    merged, new_sizes = weighted_merge(tokens, sizes, mapping, n_s - r_s)
    return merged, new_sizes, mapping


@dataclass
class SpatialMergeRecord:
    segments: int = 1
    starts: list = field(default_factory=list)
    static: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    mappings: np.ndarray | None = None


def sim_tm(
    grid: TokenGrid,
    keys: np.ndarray,
    r_s: int,
    m: int,
    n_segments: int,
    provenance: Provenance,
    per_frame_matching: bool = False,
):
    """Remove ``r_s`` positions from every frame.

    ``keys`` is [n_t, n_s, C_k]. ``n_segments`` is the requested K (the
    hierarchical rule is resolved by the caller). Returns
    ``(grid, provenance, record)``.
    """
    n_t, n_s = grid.n_t, grid.n_s
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape[:2] != (n_t, n_s):
        raise ValueError("spatial keys do not match the grid")
    record = SpatialMergeRecord(segments=n_segments)
    if r_s == 0:
        return grid, provenance, record
    pool = m * r_s
    if pool > n_s:
        raise ValueError(f"m*R_S={pool} exceeds n_s={n_s}")

    starts = choose_boundaries(depth_scores(frame_similarity_curve(keys)), n_segments)
    record.starts = starts
    sizes = provenance.sizes().astype(np.float64)
    data = np.empty((n_t, n_s - r_s, grid.channels))
    mappings = np.empty((n_t, n_s), dtype=np.int64)
    for lo, hi in segments_from_starts(starts, n_t):
        seg_keys = keys[lo:hi]
        mu = static_scores(seg_keys)
        cand = top_candidates(mu, pool)
        record.static.append(mu)
        record.candidates.append(cand)
        if per_frame_matching:
            for f in range(lo, hi):
                data[f], _, mappings[f] = bsm_on_candidates(grid.data[f], keys[f], cand, r_s, sizes[f])
        else:
            data[lo:hi], _, mapping = bsm_on_candidates(
                grid.data[lo:hi], seg_keys.mean(axis=0), cand, r_s, sizes[lo:hi]
            )
            mappings[lo:hi] = mapping
    record.mappings = mappings
    return grid.replace(data), provenance.merge_spatial(mappings, n_s - r_s), record
