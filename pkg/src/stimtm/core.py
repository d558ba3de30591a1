"""Domain types and numeric kernels shared by every merging module.

All indices are 0-based. A live token is addressed by ``(tau, sigma)``: its
row in the current temporal axis and its column in the current spatial axis.
Original cells are addressed by ``(t0, s0)`` on the tokenized grid before
any merging happened.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

DEGENERATE_EPS = 1e-12


class ConfigError(ValueError):
    """A configuration or schedule violates a named constraint."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        msg = constraint if not detail else f"{constraint}: {detail}"
        super().__init__(msg)


class MergeContractError(RuntimeError):
    """A merge hook returned a grid whose shape breaks the schedule."""


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0 if either has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    sa, sb = float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0))
    if sa == 0.0 or sb == 0.0:
        return 0.0
    a, b = a / sa, b / sb  # pre-scaling avoids under/overflow in the norms
    return float(np.clip((a @ b) / math.sqrt(float(a @ a) * float(b @ b)), -1.0, 1.0))


def _unit(x: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(x), axis=-1, keepdims=True)
    x = x / np.where(scale == 0.0, 1.0, scale)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    # zero rows stay zero, so every similarity against them is 0
    return x / np.where(norms == 0.0, 1.0, norms)


def pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of cosines between rows of ``a`` [..., n, c] and ``b`` [..., m, c]."""
    out = _unit(np.asarray(a, dtype=np.float64)) @ np.swapaxes(
        _unit(np.asarray(b, dtype=np.float64)), -1, -2
    )
    return np.clip(out, -1.0, 1.0)


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine between matching rows of ``a`` and ``b`` (same shape, last axis = channels)."""
    out = np.sum(_unit(np.asarray(a, dtype=np.float64)) * _unit(np.asarray(b, dtype=np.float64)), axis=-1)
    return np.clip(out, -1.0, 1.0)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_row(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty attention row")
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite attention logits")
    return softmax(logits)


def negative_entropy(p) -> float:
    """Sum of p*ln(p) with 0*ln(0) taken as 0. Ranges over [-ln(len), 0]."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError("invalid distribution")
    nz = p[p > 0]
    return float(np.sum(nz * np.log(nz)))


def negative_entropy_rows(p: np.ndarray) -> np.ndarray:
    """Vectorized :func:`negative_entropy` over the last axis."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("invalid distribution")
    logp = np.log(np.where(p > 0, p, 1.0))
    return np.sum(p * logp, axis=-1)


def minmax_scale(values, axis: int = -1) -> np.ndarray:
    """Affine map onto [0, 1]; constant input maps to 0.5 everywhere."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_scale of empty input")
    lo = np.min(v, axis=axis, keepdims=True)
    hi = np.max(v, axis=axis, keepdims=True)
    span = hi - lo
    flat = span <= DEGENERATE_EPS
    scaled = np.clip((v - lo) / np.where(flat, 1.0, span), 0.0, 1.0)
    # rounding must not create or break ties at the extremes
    below_one = np.nextafter(1.0, 0.0)
    scaled = np.where(v == hi, 1.0, np.where(v == lo, 0.0, np.clip(scaled, 5e-324, below_one)))
    return np.where(flat, 0.5, scaled)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 16
    frame_height: int = 224
    frame_width: int = 224
    patch_size: int = 16
    tubelet: int = 1
    channels: int = 768
    layers: int = 12
    heads: int = 12
    cls_enabled: bool = True

    def validate(self) -> "ModelConfig":
        for name in ("frames", "frame_height", "frame_width", "patch_size", "tubelet",
                     "channels", "layers", "heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", str(getattr(self, name)))
        if self.frame_height % self.patch_size:
            raise ConfigError("H mod P == 0", f"H={self.frame_height}, P={self.patch_size}")
        if self.frame_width % self.patch_size:
            raise ConfigError("W mod P == 0", f"W={self.frame_width}, P={self.patch_size}")
        if self.frames % self.tubelet:
            raise ConfigError("T mod t == 0", f"T={self.frames}, t={self.tubelet}")
        if self.channels % self.heads:
            raise ConfigError("C not divisible by heads", f"C={self.channels}, heads={self.heads}")
        return self

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.frame_height // self.patch_size, self.frame_width // self.patch_size

    @property
    def n_spatial(self) -> int:
        h, w = self.grid_hw
        return h * w

    @property
    def n_temporal(self) -> int:
        return self.frames // self.tubelet

    @property
    def n_tokens(self) -> int:
        return self.n_temporal * self.n_spatial

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


# ---------------------------------------------------------------------------
# grid and provenance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TokenGrid:
    """Rectangular [n_t, n_s, C] block of token embeddings plus optional CLS."""

    data: np.ndarray
    cls: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"token grid must be [n_t, n_s, C], got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("token grid contains non-finite entries")
        object.__setattr__(self, "data", data)
        if self.cls is not None:
            cls = np.asarray(self.cls, dtype=np.float64)
            if cls.shape != (data.shape[2],):
                raise ValueError("CLS token width does not match grid channels")
            object.__setattr__(self, "cls", cls)

    @property
    def n_t(self) -> int:
        return self.data.shape[0]

    @property
    def n_s(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def replace(self, data: np.ndarray, cls: Optional[np.ndarray] = None) -> "TokenGrid":
        return TokenGrid(data, self.cls if cls is None else cls)


@dataclass(frozen=True)
class Provenance:
    """Map from every original cell to the live cell that absorbed it.

    ``tau[t0, s0]`` and ``sigma[t0, s0]`` hold the live coordinates. Since
    every original cell has exactly one owner, the groups are disjoint and
    exhaustive by construction; :meth:`check` verifies that every live cell
    owns at least one original.
    """

    tau: np.ndarray
    sigma: np.ndarray
    n_t: int
    n_s: int

    @classmethod
    def identity(cls, n_t: int, n_s: int) -> "Provenance":
        tau, sigma = np.meshgrid(np.arange(n_t), np.arange(n_s), indexing="ij")
        return cls(tau.astype(np.int64), sigma.astype(np.int64), n_t, n_s)

    @property
    def original_shape(self) -> tuple[int, int]:
        return self.tau.shape

    @property
    def labels(self) -> np.ndarray:
        """Flat live index ``tau * n_s + sigma`` per original cell."""
        return self.tau * self.n_s + self.sigma

    def sizes(self) -> np.ndarray:
        """Count of originals absorbed by each live cell, shape [n_t, n_s]."""
        counts = np.bincount(self.labels.ravel(), minlength=self.n_t * self.n_s)
        return counts.reshape(self.n_t, self.n_s)

    def groups(self, tau: int, sigma: int) -> list[tuple[int, int]]:
        t0, s0 = np.nonzero((self.tau == tau) & (self.sigma == sigma))
        return list(zip(t0.tolist(), s0.tolist()))

    def temporal_groups(self, s0: int) -> list[list[int]]:
        """Original frames per live temporal index for one original position."""
        col = self.tau[:, s0]
        return [np.nonzero(col == t)[0].tolist() for t in range(self.n_t) if np.any(col == t)]

    def is_identity(self) -> bool:
        t0, s0 = self.original_shape
        return self.n_t == t0 and self.n_s == s0 and bool(
            np.all(self.labels == np.arange(t0 * s0).reshape(t0, s0))
        )

    def check(self) -> "Provenance":
        labels = self.labels
        if labels.min() < 0 or np.any(self.tau >= self.n_t) or np.any(self.sigma >= self.n_s) \
                or np.any(self.sigma < 0):
            raise ValueError("provenance refers to a live cell outside the grid")
        counts = np.bincount(labels.ravel(), minlength=self.n_t * self.n_s)
        if np.any(counts == 0):
            raise ValueError("provenance is not a partition: some live cell owns no original")
        return self

    def merge_temporal(self, merged_at: np.ndarray) -> "Provenance":
        """Fold live rows ``t`` and ``t+1`` together at each live position.

        ``merged_at[sigma]`` is the selected ``t`` for that position.
        """
        merged_at = np.asarray(merged_at, dtype=np.int64)
        shift = self.tau > merged_at[self.sigma]
        return Provenance(self.tau - shift, self.sigma, self.n_t - 1, self.n_s)

    def merge_spatial(self, position_map: np.ndarray, new_n_s: int) -> "Provenance":
        """Apply ``position_map[tau, sigma] -> sigma'`` (per live frame)."""
        position_map = np.asarray(position_map, dtype=np.int64)
        return Provenance(self.tau, position_map[self.tau, self.sigma], self.n_t, new_n_s)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

KINDS = ("none", "temporal", "spatial", "temporal-then-spatial")
HIERARCHICAL = "hierarchical"


@dataclass(frozen=True)
class LayerPlan:
    kind: str = "none"
    r_t: int = 0
    r_s: int = 0
    m: int = 2
    k: Union[int, str] = HIERARCHICAL

    @property
    def temporal(self) -> bool:
        return self.kind in ("temporal", "temporal-then-spatial") and self.r_t > 0

    @property
    def spatial(self) -> bool:
        return self.kind in ("spatial", "temporal-then-spatial") and self.r_s > 0

    def segments(self, layer: int, n_layers: int) -> int:
        """Segment count for 1-based ``layer``; hierarchical rule: 1 up to L/2, then 2."""
        if self.k == HIERARCHICAL:
            return 1 if 2 * layer <= n_layers else 2
        return int(self.k)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "r_t": self.r_t, "r_s": self.r_s, "m": self.m, "k": self.k}


@dataclass(frozen=True)
class MergeSchedule:
    layers: tuple[LayerPlan, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, i: int) -> LayerPlan:
        return self.layers[i]

    def __iter__(self):
        return iter(self.layers)

    @classmethod
    def none(cls, n_layers: int) -> "MergeSchedule":
        return cls(tuple(LayerPlan() for _ in range(n_layers)))

    @classmethod
    def from_blocks(
        cls,
        n_layers: int,
        temporal_blocks: Iterable[int] = (),
        spatial_blocks: Iterable[int] = (),
        r_t: int = 1,
        r_s: int = 12,
        m: int = 2,
        k: Union[int, str] = HIERARCHICAL,
    ) -> "MergeSchedule":
        """Build a schedule from 1-based block lists, e.g. T: 1-6, S: 7-12."""
        tb, sb = set(temporal_blocks), set(spatial_blocks)
        plans = []
        for layer in range(1, n_layers + 1):
            t, s = layer in tb, layer in sb
            kind = {(False, False): "none", (True, False): "temporal",
                    (False, True): "spatial", (True, True): "temporal-then-spatial"}[(t, s)]
            plans.append(LayerPlan(kind, r_t if t else 0, r_s if s else 0, m, k))
        return cls(tuple(plans))

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.layers]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "MergeSchedule":
        return cls(tuple(LayerPlan(**item) for item in items))

    def dims(self, n_t: int, n_s: int) -> list[tuple[int, int]]:
        """Token dims after each layer, by cumulative subtraction."""
        out = []
        for plan in self.layers:
            if plan.temporal:
                n_t -= plan.r_t
            if plan.spatial:
                n_s -= plan.r_s
            out.append((n_t, n_s))
        return out

    def validate(self, n_t: int, n_s: int, n_layers: Optional[int] = None) -> "MergeSchedule":
        if n_layers is not None and len(self.layers) != n_layers:
            raise ConfigError("schedule length == layers", f"{len(self.layers)} != {n_layers}")
        for i, plan in enumerate(self.layers, start=1):
            where = f"layer {i}"
            if plan.kind not in KINDS:
                raise ConfigError("unknown merge kind", f"{where}: {plan.kind!r}")
            if plan.r_t < 0 or plan.r_s < 0:
                raise ConfigError("merge counts must be non-negative", where)
            if plan.r_t and plan.kind not in ("temporal", "temporal-then-spatial"):
                raise ConfigError("R_T set on a layer without temporal merging", where)
            if plan.r_s and plan.kind not in ("spatial", "temporal-then-spatial"):
                raise ConfigError("R_S set on a layer without spatial merging", where)
            if plan.m < 1:
                raise ConfigError("m >= 1", where)
            if not (plan.k == HIERARCHICAL or (isinstance(plan.k, int) and plan.k >= 1)):
                raise ConfigError("K >= 1 or 'hierarchical'", where)
            if plan.temporal:
                if plan.r_t >= n_t:
                    raise ConfigError("cumulative temporal removals < T0", where)
                n_t -= plan.r_t
            if plan.spatial:
                if plan.r_s >= n_s:
                    raise ConfigError("cumulative spatial removals < N_s0", where)
                pool = plan.m * plan.r_s
                if pool > n_s:
                    raise ConfigError("m*R_S <= current n_s", f"{where}: {pool} > {n_s}")
                if plan.r_s > (pool + 1) // 2 or pool // 2 < 1:
                    raise ConfigError("candidate pool too small", where)
                n_s -= plan.r_s
        return self
