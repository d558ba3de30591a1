"""Joint ToMe-style merging over all tokens, and unmerging back to a dense grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .bsm import Matching, match, merge_plan, weighted_merge
from .core import Provenance, TokenGrid
from .temporal import _drop_rows, merge_pair


@dataclass(frozen=True)
class FlatTokenSet:
    """Unstructured token set with per-token size and origin.

    ``origin[t0, s0]`` is the index of the token that owns original cell
    ``(t0, s0)``.
    """

    tokens: np.ndarray
    sizes: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.float64))
        object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=np.float64))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.int64))

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @classmethod
    def from_grid(cls, grid: TokenGrid, provenance: Provenance | None = None) -> "FlatTokenSet":
        prov = provenance or Provenance.identity(grid.n_t, grid.n_s)
        return cls(grid.data.reshape(-1, grid.channels), prov.sizes().ravel(), prov.labels)

    def check(self) -> "FlatTokenSet":
        counts = np.bincount(self.origin.ravel(), minlength=len(self))
        if len(counts) != len(self) or np.any(counts == 0):
            raise ValueError("origins do not partition the original grid")
        if not np.array_equal(counts, self.sizes):
            raise ValueError("sizes disagree with origins")
        return self

    def groups(self, i: int) -> list[tuple[int, int]]:
        t0, s0 = np.nonzero(self.origin == i)
        return list(zip(t0.tolist(), s0.tolist()))


def tome_merge(tokens: FlatTokenSet, keys: np.ndarray, r: int):
    """Bipartite soft matching over every token, merging ``r`` pairs.

    Tokens at even indices form set A, odd indices set B. Returns
    ``(merged_set, matching)``.
    """
    n = len(tokens)
    if r < 0 or r > n // 2:
        raise ValueError(f"R_joint={r} exceeds floor(N/2)={n // 2}")
    idx = np.arange(n)
    m = match(np.asarray(keys, dtype=np.float64), idx[0::2], idx[1::2], r)
    if r == 0:
        return tokens, m
    mapping = merge_plan(n, m)
    merged, sizes = weighted_merge(tokens.tokens, tokens.sizes, mapping, n - r)
    return FlatTokenSet(merged, sizes, mapping[tokens.origin]), m


def unmerge(
    source: Union[TokenGrid, FlatTokenSet],
    provenance: Provenance | None = None,
    original_dims: tuple[int, int] | None = None,
) -> TokenGrid:
    """Copy every live token back onto each original cell it absorbed."""
    if isinstance(source, FlatTokenSet):
        source.check()
        dense = source.tokens[source.origin]
        cls = None
    else:
        if provenance is None:
            raise ValueError("unmerging a grid requires its provenance")
        provenance.check()
        if (provenance.n_t, provenance.n_s) != (source.n_t, source.n_s):
            raise ValueError("provenance does not describe this grid")
        dense = source.data[provenance.tau, provenance.sigma]
        cls = source.cls
    if original_dims is not None and tuple(dense.shape[:2]) != tuple(original_dims):
        raise ValueError(f"provenance covers {dense.shape[:2]}, expected {original_dims}")
    return TokenGrid(dense, cls)


class RandomMergeHooks:
    """Merge hooks that pick pairs at random, with the same token budget.

    Temporal: one random adjacent pair per position per iteration, plain
    mean. Spatial: ``r_s`` random disjoint position pairs, one pattern for
    all frames, size-weighted. Used as a reference point for scoring.
    """

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def temporal(self, grid, artifacts, plan, provenance):
        data = grid.data
        cols = np.arange(grid.n_s)
        for _ in range(plan.r_t):
            n_t = data.shape[0]
            t_hat = self.rng.integers(0, n_t - 1, size=grid.n_s)
            fused = merge_pair(data[t_hat, cols], data[t_hat + 1, cols], 1.0, 1.0)
            data = _drop_rows(data, t_hat)
            data[t_hat, cols] = fused
            provenance = provenance.merge_temporal(t_hat)
        return grid.replace(data), provenance, None

    def spatial(self, grid, artifacts, plan, layer, n_layers, provenance):
        n_s = grid.n_s
        perm = self.rng.permutation(n_s)[: 2 * plan.r_s]
        m = Matching(perm[0::2], perm[1::2], np.zeros(plan.r_s))
        mapping = merge_plan(n_s, m)
        data, _ = weighted_merge(grid.data, provenance.sizes(), mapping, n_s - plan.r_s)
        pos_map = np.broadcast_to(mapping, (grid.n_t, n_s))
        return grid.replace(data), provenance.merge_spatial(pos_map, n_s - plan.r_s), None
