"""Redundancy diagnostics and the information-bottleneck score.

``temporal_similarity_study`` and ``static_dynamic_similarity`` measure how
similar keys are across time and across space. ``ib_score`` estimates
``I(Z, X) - I(Z, Y)`` with class centroids and softmax over negative squared
distances; it is an approximate estimator meant for comparing pipelines on
the same data, not for absolute values.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.cluster.vq import kmeans2

from .core import pairwise_cosine, rowwise_cosine, softmax


@dataclass(frozen=True)
class SimilarityStudyConfig:
    d_max: int = 4
    window: int = 3
    layer: int = 9  # 1-based probe layer
    samples: int = 1

    def validate(self, n_t: int) -> "SimilarityStudyConfig":
        if not 1 <= self.d_max < n_t:
            raise ValueError(f"d_max={self.d_max} must be in [1, n_t) with n_t={n_t}")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window size k must be odd and >= 1")
        return self


@dataclass
class SimilarityCurves:
    distances: list
    same_position: list
    window: list
    same_counts: list
    window_counts: list

    def rows(self):
        for i, d in enumerate(self.distances):
            w = self.window[i] if self.window else None
            yield d, self.same_position[i], w


def _window_offsets(k: int) -> list[tuple[int, int]]:
    r = k // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dy, dx) != (0, 0)]


def temporal_similarity_study(keys: np.ndarray, grid_hw: tuple[int, int],
                              config: SimilarityStudyConfig) -> SimilarityCurves:
    """Mean key cosine against inter-frame distance.

    ``keys`` is [n_t, n_s, C] on an unmerged spatial layout of shape
    ``grid_hw``. The same-position curve pairs (i, t) with (i, t+d); the
    window curve pairs (i, t) with (j, t+d) for j in the k x k neighbourhood
    of i, i excluded. A 1 x 1 window yields an empty window curve.
    """
    keys = np.asarray(keys, dtype=np.float64)
    n_t, n_s, c = keys.shape
    gh, gw = grid_hw
    if gh * gw != n_s:
        raise ValueError("grid_hw does not match the number of positions")
    config.validate(n_t)
    grid = keys.reshape(n_t, gh, gw, c)
    offsets = _window_offsets(config.window)
    out = SimilarityCurves([], [], [], [], [])
    for d in range(1, config.d_max + 1):
        same = rowwise_cosine(keys[:-d], keys[d:])
        out.distances.append(d)
        out.same_position.append(float(same.mean()))
        out.same_counts.append(int(same.size))
        if not offsets:
            continue
        total, count = 0.0, 0
        for dy, dx in offsets:
            ys = slice(max(0, -dy), gh - max(0, dy))
            xs = slice(max(0, -dx), gw - max(0, dx))
            yt = slice(max(0, dy), gh - max(0, -dy))
            xt = slice(max(0, dx), gw - max(0, -dx))
            sims = rowwise_cosine(grid[:-d, ys, xs], grid[d:, yt, xt])
            total += float(sims.sum())
            count += sims.size
        out.window.append(total / count if count else float("nan"))
        out.window_counts.append(count)
    return out


def intra_frame_similarity(keys: np.ndarray) -> np.ndarray:
    """Mean cosine of each token to every other token of its frame, [n_t, n_s].

    Undefined (NaN) when a frame has a single token.
    """
    keys = np.asarray(keys, dtype=np.float64)
    n_t, n_s, _ = keys.shape
    if n_s < 2:
        return np.full((n_t, n_s), np.nan)
    gram = pairwise_cosine(keys, keys)
    diag = np.einsum("tii->ti", gram)
    return (gram.sum(axis=-1) - diag) / (n_s - 1)


def static_dynamic_similarity(keys_per_layer, dynamic_mask, layers=None) -> list[dict]:
    """Class means of intra-frame similarity for static and dynamic tokens.

    ``dynamic_mask`` is [n_t, n_s] or [n_s] (broadcast over frames). A class
    with no member, or frames with a single token, gives ``None``.
    """
    rows = []
    if layers is None:
        layers = list(range(1, len(keys_per_layer) + 1))
    for layer, keys in zip(layers, keys_per_layer):
        keys = np.asarray(keys, dtype=np.float64)
        mask = np.broadcast_to(np.asarray(dynamic_mask, dtype=bool), keys.shape[:2])
        sim = intra_frame_similarity(keys)

        def mean_of(sel):
            vals = sim[sel]
            if vals.size == 0 or np.any(np.isnan(vals)):
                return None
            return float(vals.mean())

        rows.append({"layer": layer, "static_mean": mean_of(~mask), "dynamic_mean": mean_of(mask)})
    return rows


# ---------------------------------------------------------------------------
# information bottleneck
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IBInputs:
    merged: np.ndarray  # Z_m, [n, C]
    raw: np.ndarray  # X, [n, C_x]
    labels: np.ndarray  # Y, [n]
    n_classes: int | None = None  # declared label count; defaults to the distinct labels seen

    def validate(self) -> "IBInputs":
        n = len(self.labels)
        if np.shape(self.merged)[0] != n or np.shape(self.raw)[0] != n:
            raise ValueError("Z, X and Y must have the same number of samples")
        n_classes = self.n_classes or len(np.unique(self.labels))
        if n < n_classes:
            raise ValueError("fewer samples than classes")
        if n_classes < 2:
            raise ValueError("need at least two classes")
        return self


@dataclass(frozen=True)
class IBResult:
    i_zx: float
    i_zy: float

    @property
    def ib(self) -> float:
        return self.i_zx - self.i_zy

    def to_dict(self) -> dict:
        return {"i_zx": self.i_zx, "i_zy": self.i_zy, "ib": self.ib}


def _entropy(p: np.ndarray, axis=-1) -> np.ndarray:
    return -np.sum(p * np.log(np.where(p > 0, p, 1.0)), axis=axis)


ESTIMATORS = ("cross-entropy", "entropy")


def centroid_information(z: np.ndarray, labels: np.ndarray, temperature: float = 1.0,
                         estimator: str = "cross-entropy") -> float:
    """Mutual information between ``z`` and discrete ``labels``, clamped at 0.

    ``p(l|z)`` is a softmax over negative squared distances to the per-label
    centroids of ``z``. ``"cross-entropy"`` returns ``H(L) + mean log p(l_i|z_i)``
    (the variational lower bound); ``"entropy"`` returns
    ``H(L) - mean H(p(l|z))``, which ignores whether the prediction is right.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    classes, inv = np.unique(labels, return_inverse=True)
    counts = np.bincount(inv).astype(np.float64)
    centroids = np.stack([z[inv == k].mean(axis=0) for k in range(len(classes))])
    d2 = ((z[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    h_label = float(_entropy(counts / counts.sum()))
    if estimator == "entropy":
        cond = softmax(-d2 / temperature, axis=-1)
        return max(0.0, h_label - float(np.mean(_entropy(cond))))
    logits = -d2 / temperature
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return max(0.0, h_label + float(np.mean(log_p[np.arange(len(inv)), inv])))


def quantize(x: np.ndarray, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Nearest-centroid cluster index of each row of ``x`` (k-means, seeded)."""
    n_clusters = min(n_clusters, len(np.unique(x, axis=0)))
    if n_clusters <= 1:
        return np.zeros(len(x), dtype=np.int64)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(x, n_clusters, minit="++", seed=np.random.default_rng(seed))
    return labels.astype(np.int64)


def ib_score(inputs: IBInputs, n_x: int = 16, temperature: float = 1.0, seed: int = 0,
             estimator: str = "cross-entropy") -> IBResult:
    """Estimate ``I(Z, X)`` and ``I(Z, Y)``.

    X is quantized into ``n_x`` clusters; each mutual information is then
    estimated from the centroids of Z grouped by cluster (for X) or by class
    (for Y). Samples are put in a canonical order first, so the result does
    not depend on the order they were given in.
    """
    inputs.validate()
    z = np.asarray(inputs.merged, dtype=np.float64)
    x = np.asarray(inputs.raw, dtype=np.float64)
    y = np.asarray(inputs.labels)
    order = np.lexsort(np.column_stack([z, x, y.astype(np.float64)]).T[::-1])
    z, x, y = z[order], x[order], y[order]
    i_zy = centroid_information(z, y, temperature, estimator)
    x_hat = quantize(x, n_x, seed)
    i_zx = centroid_information(z, x_hat, temperature, estimator) if len(np.unique(x_hat)) > 1 else 0.0
    return IBResult(i_zx, i_zy)
