"""Bipartite soft matching: partition, match, merge top-r pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import pairwise_cosine


class PoolTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class Matching:
    """Result of matching: ``src[j]`` is absorbed into ``dst[j]``."""

    src: np.ndarray
    dst: np.ndarray
    score: np.ndarray

    def __len__(self) -> int:
        return len(self.src)


def alternate_split(indices) -> tuple[np.ndarray, np.ndarray]:
    """Sort indices and deal them alternately into sets A and B."""
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    return idx[0::2], idx[1::2]


def match(keys: np.ndarray, a_idx: np.ndarray, b_idx: np.ndarray, r: int) -> Matching:
    """Match each A token to its most similar B token and keep the best ``r`` edges.

    Ties go to the smaller B index when matching and to the smaller A index
    when ranking edges.
    """
    a_idx = np.asarray(a_idx, dtype=np.int64)
    b_idx = np.asarray(b_idx, dtype=np.int64)
    if r == 0:
        empty = np.zeros(0, dtype=np.int64)
        return Matching(empty, empty, np.zeros(0))
    if r > len(a_idx) or len(b_idx) == 0:
        raise PoolTooSmall("candidate pool too small")
    scores = pairwise_cosine(keys[a_idx], keys[b_idx])
    best_b = np.argmax(scores, axis=1)
    best = scores[np.arange(len(a_idx)), best_b]
    order = np.argsort(-best, kind="stable")[:r]
    return Matching(a_idx[order], b_idx[best_b[order]], best[order])


def merge_plan(n: int, m: Matching) -> np.ndarray:
    """Old position -> new position after removing every matched source.

    Survivors keep their relative order; a source maps to its destination.
    """
    keep = np.ones(n, dtype=bool)
    keep[m.src] = False
    new_pos = np.cumsum(keep) - 1
    mapping = np.where(keep, new_pos, -1)
    mapping[m.src] = mapping[m.dst]
    return mapping


def weighted_merge(x: np.ndarray, sizes: np.ndarray, mapping: np.ndarray, n_out: int):
    """Size-weighted average of ``x`` [..., n, C] scattered onto ``n_out`` slots.

    Contributions are folded in one at a time as ``acc += w * (x - acc)``
    so that averaging identical tokens reproduces them bit-exactly.
    Returns ``(merged, merged_sizes)``; leading axes are independent.
    """
    x = np.asarray(x, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    lead = x.shape[:-2]
    n, c = x.shape[-2:]
    xf = x.reshape(-1, n, c)
    sf = sizes.reshape(-1, n)
    acc = np.zeros((xf.shape[0], n_out, c))
    tot = np.zeros((xf.shape[0], n_out))
    seen = np.zeros(n_out, dtype=bool)
    for j in range(n):
        k = mapping[j]
        if not seen[k]:
            acc[:, k] = xf[:, j]
            tot[:, k] = sf[:, j]
            seen[k] = True
            continue
        tot[:, k] += sf[:, j]
        w = sf[:, j] / tot[:, k]
        acc[:, k] += w[:, None] * (xf[:, j] - acc[:, k])
    return acc.reshape(*lead, n_out, c), tot.reshape(*lead, n_out)
