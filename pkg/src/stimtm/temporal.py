"""Temporal merging: adjacent-frame, per-position, saliency-weighted fusion.

At every spatial position independently, the pair of neighbouring frames
whose attention keys are most similar is fused, repeated ``r_t`` times.
Fusion weights come from how concentrated each token's temporal attention
row is (negative entropy, min-max scaled over the track).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEGENERATE_EPS,
    Provenance,
    TokenGrid,
    minmax_scale,
    negative_entropy_rows,
    rowwise_cosine,
)


def adjacent_similarities(keys: np.ndarray) -> np.ndarray:
    """Cosine similarity of consecutive keys of one track, shape [n_t - 1]."""
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape[0] < 2:
        raise ValueError("nothing to merge")
    return rowwise_cosine(keys[:-1], keys[1:])


def select_pair(sims) -> int:
    """Index ``t`` of the most similar pair ``(t, t+1)``; first one wins ties."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.size == 0:
        raise ValueError("no candidate pairs")
    return int(np.argmax(sims))


def _check_stochastic(attention: np.ndarray) -> None:
    if np.any(attention < 0) or np.any(np.abs(attention.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("temporal attention rows are not stochastic")


def saliency_weights(attention: np.ndarray) -> np.ndarray:
    """Min-max scaled negative entropy of each attention row.

    ``attention`` is [n_t, n_t] for one position, or [..., n_t, n_t]; the
    scaling runs over the row axis of each matrix.
    """
    attention = np.asarray(attention, dtype=np.float64)
    _check_stochastic(attention)
    return minmax_scale(negative_entropy_rows(attention), axis=-1)


def merge_pair(x_a, x_b, alpha_a, alpha_b, renormalize: bool = True):
    """Fuse two tokens with saliency weights.

    With ``renormalize`` (default) the weights are divided by their sum, so
    the result is a convex combination; both weights ~0 gives the plain
    mean. Without it the literal weighted sum ``alpha_a*x_a + alpha_b*x_b``
    is returned.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    alpha_a = np.asarray(alpha_a, dtype=np.float64)
    alpha_b = np.asarray(alpha_b, dtype=np.float64)
    if not renormalize:
        if alpha_a.ndim:
            alpha_a, alpha_b = alpha_a[..., None], alpha_b[..., None]
        return alpha_a * x_a + alpha_b * x_b
    total = alpha_a + alpha_b
    degenerate = total < DEGENERATE_EPS
    w_b = np.where(degenerate, 0.5, alpha_b / np.where(degenerate, 1.0, total))
    if w_b.ndim:
        w_b = w_b[..., None]
    # x_a + w*(x_b - x_a) keeps equal inputs bit-exact
    return x_a + w_b * (x_b - x_a)


@dataclass
class TemporalMergeRecord:
    """Per-iteration choices: ``selected[j][sigma]`` is the fused pair start."""

    selected: list = field(default_factory=list)
    saliency: np.ndarray | None = None


def _drop_rows(arr: np.ndarray, t_hat: np.ndarray) -> np.ndarray:
    """Remove row ``t_hat[sigma] + 1`` from ``arr`` [n_t, n_s, ...] per column."""
    n_t = arr.shape[0]
    tau = np.arange(n_t - 1)[:, None]
    src = tau + (tau > t_hat[None, :])
    idx = src.reshape(src.shape + (1,) * (arr.ndim - 2))
    return np.take_along_axis(arr, np.broadcast_to(idx, (n_t - 1,) + arr.shape[1:]), axis=0)


def _fuse_attention(attention: np.ndarray, t_hat: np.ndarray, w_b: np.ndarray) -> np.ndarray:
    """Collapse rows/columns ``t_hat, t_hat+1`` of per-position attention [n_s, n, n]."""
    n_s, n, _ = attention.shape
    out = np.empty((n_s, n - 1, n - 1))
    for i in range(n_s):
        a = attention[i]
        t = t_hat[i]
        cols = np.concatenate([a[:, :t], (a[:, t] + a[:, t + 1])[:, None], a[:, t + 2:]], axis=1)
        merged_row = cols[t] + w_b[i] * (cols[t + 1] - cols[t])
        out[i] = np.concatenate([cols[:t], merged_row[None], cols[t + 2:]], axis=0)
    return out


def tim_tm(
    grid: TokenGrid,
    keys: np.ndarray,
    attention: np.ndarray,
    r_t: int,
    provenance: Provenance,
    renormalize: bool = True,
    recompute_saliency: bool = False,
):
    """Remove ``r_t`` temporal rows by successive adjacent-pair fusion.

    ``keys`` is [n_t, n_s, C_k]; ``attention`` is [n_s, n_t, n_t] (one
    row-stochastic matrix per position). Similarities are recomputed after
    every fusion on the fused keys; saliency is taken once from the layer's
    attention unless ``recompute_saliency`` is set, in which case the
    attention matrices are collapsed alongside the tokens and rescored.

    Returns ``(grid, provenance, record)``.
    """
    n_t, n_s = grid.n_t, grid.n_s
    if r_t < 0 or r_t >= n_t:
        raise ValueError(f"R_T={r_t} must be in [0, n_t) with n_t={n_t}")
    keys = np.asarray(keys, dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    if keys.shape[:2] != (n_t, n_s) or attention.shape != (n_s, n_t, n_t):
        raise ValueError("attention artifacts do not match the grid")
    record = TemporalMergeRecord()
    if r_t == 0:
        return grid, provenance, record

    alpha = saliency_weights(attention).T  # [n_t, n_s]
    record.saliency = alpha.copy()
    data = grid.data
    cols = np.arange(n_s)
    for _ in range(r_t):
        sims = rowwise_cosine(keys[:-1], keys[1:])  # [n_t-1, n_s]
        t_hat = np.argmax(sims, axis=0)
        a_a, a_b = alpha[t_hat, cols], alpha[t_hat + 1, cols]
        fused_x = merge_pair(data[t_hat, cols], data[t_hat + 1, cols], a_a, a_b, renormalize)
        fused_k = merge_pair(keys[t_hat, cols], keys[t_hat + 1, cols], a_a, a_b, True)
        total = a_a + a_b
        w_b = np.where(total < DEGENERATE_EPS, 0.5, a_b / np.where(total < DEGENERATE_EPS, 1.0, total))

        data = _drop_rows(data, t_hat)
        keys = _drop_rows(keys, t_hat)
        data[t_hat, cols] = fused_x
        keys[t_hat, cols] = fused_k
        if recompute_saliency:
            attention = _fuse_attention(attention, t_hat, w_b)
            alpha = saliency_weights(attention).T
        else:
            fused_alpha = 0.5 * (a_a + a_b)
            alpha = _drop_rows(alpha, t_hat)
            alpha[t_hat, cols] = fused_alpha
        provenance = provenance.merge_temporal(t_hat)
        record.selected.append(t_hat.copy())
    return grid.replace(data), provenance, record
