"""A small deterministic divided space-time transformer encoder.

Weights are random (seeded), not trained: the encoder exists so that the
merging modules see real attention keys and attention maps, and so that
token counts flow through a faithful block structure::

    x -> temporal attention (per position) -> [temporal merge]
      -> spatial attention (per frame, CLS shared) -> [spatial merge]
      -> MLP
"""
from __future__ import annotations

import copy
import hashlib
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .core import (
    LayerPlan,
    MergeContractError,
    MergeSchedule,
    ModelConfig,
    Provenance,
    TokenGrid,
    softmax,
)
from .spatial import sim_tm
from .temporal import tim_tm

ATTN_MATRICES = ("wq", "wk", "wv", "wo")
SPATIAL_CODE_SCALE = 0.1
TEMPORAL_CODE_SCALE = 0.05


def _rng(seed: int, *names) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for name in names:
        words.append(zlib.crc32(str(name).encode()) if isinstance(name, str) else int(name))
    return np.random.default_rng(np.random.SeedSequence(words))


def _uniform(seed: int, shape, bound: float, *names) -> np.ndarray:
    return _rng(seed, *names).uniform(-bound, bound, size=shape)


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def sinusoid(n: int, dim: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    out = np.zeros((n, dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq[: dim // 2])
    return out


@dataclass(frozen=True)
class LayerWeights:
    temporal: dict
    spatial: dict
    mlp_in: np.ndarray
    mlp_out: np.ndarray
    norms: dict

    def named(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for stage in ("temporal", "spatial"):
            for k, v in getattr(self, stage).items():
                out[f"{prefix}.{stage}.{k}"] = v
        out[f"{prefix}.mlp_in"] = self.mlp_in
        out[f"{prefix}.mlp_out"] = self.mlp_out
        for k, (scale, shift) in self.norms.items():
            out[f"{prefix}.{k}.scale"] = scale
            out[f"{prefix}.{k}.shift"] = shift
        return out


@dataclass
class AttentionArtifacts:
    """Keys and attention exposed by one layer.

    ``temporal_keys`` and ``spatial_keys`` are laid out like the grid,
    [n_t, n_s, C_head], and are the mean over heads of the per-head keys.
    ``temporal_attention`` is [n_s, n_t, n_t], head-averaged.
    """

    temporal_keys: np.ndarray
    temporal_attention: np.ndarray
    spatial_keys: Optional[np.ndarray] = None


class MergeHooks(Protocol):
    def temporal(self, grid, artifacts, plan, provenance): ...

    def spatial(self, grid, artifacts, plan, layer, n_layers, provenance): ...


@dataclass
class StimHooks:
    """Default hooks: temporal and spatial information-mining merges."""

    renormalize: bool = True
    recompute_saliency: bool = False
    per_frame_matching: bool = False

    def temporal(self, grid, artifacts, plan, provenance):
        return tim_tm(grid, artifacts.temporal_keys, artifacts.temporal_attention, plan.r_t,
                      provenance, renormalize=self.renormalize,
                      recompute_saliency=self.recompute_saliency)

    def spatial(self, grid, artifacts, plan, layer, n_layers, provenance):
        return sim_tm(grid, artifacts.spatial_keys, plan.r_s, plan.m,
                      plan.segments(layer, n_layers), provenance,
                      per_frame_matching=self.per_frame_matching)


@dataclass
class ForwardResult:
    grid: TokenGrid
    provenance: Provenance
    artifacts: list = field(default_factory=list)
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    dims: list = field(default_factory=list)


class Encoder:
    """Seeded divided space-time encoder; immutable after construction."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config.validate()
        self.seed = int(seed)
        c = config.channels
        bound = 1.0 / math.sqrt(c)
        patch_dim = config.tubelet * config.patch_size**2 * 3
        self.patch_embed = _uniform(seed, (patch_dim, c), 1.0 / math.sqrt(patch_dim), "patch_embed")
        self.cls_token = _uniform(seed, (c,), bound, "cls")
        self.layers = []
        for li in range(config.layers):
            stages = {
                stage: {name: _uniform(seed, (c, c), bound, li, stage, name) for name in ATTN_MATRICES}
                for stage in ("temporal", "spatial")
            }
            norms = {n: (np.ones(c), np.zeros(c)) for n in ("norm_t", "norm_s", "norm_mlp")}
            self.layers.append(LayerWeights(
                temporal=stages["temporal"],
                spatial=stages["spatial"],
                mlp_in=_uniform(seed, (c, 4 * c), bound, li, "mlp_in"),
                mlp_out=_uniform(seed, (4 * c, c), bound, li, "mlp_out"),
                norms=norms,
            ))

    # -- weights ----------------------------------------------------------

    def named_weights(self) -> dict[str, np.ndarray]:
        out = {"patch_embed": self.patch_embed, "cls": self.cls_token}
        for li, lw in enumerate(self.layers):
            out.update(lw.named(f"layer{li:02d}"))
        return out

    def with_weights(self, weights: dict[str, np.ndarray]) -> "Encoder":
        """Copy of this encoder with some weights replaced (shapes must match)."""
        clone = copy.deepcopy(self)
        current = clone.named_weights()
        for name, arr in weights.items():
            if name not in current:
                raise KeyError(f"unknown weight {name!r}")
            if current[name].shape != np.shape(arr):
                raise ValueError(f"shape mismatch for {name}: {np.shape(arr)} vs {current[name].shape}")
            current[name][...] = arr
        return clone

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self.named_weights().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        return h.hexdigest()

    # -- tokenization -----------------------------------------------------

    def position_code(self) -> np.ndarray:
        cfg = self.config
        c = cfg.channels
        return (TEMPORAL_CODE_SCALE * sinusoid(cfg.n_temporal, c)[:, None, :]
                + SPATIAL_CODE_SCALE * sinusoid(cfg.n_spatial, c)[None, :, :])

    def tokenize(self, video: np.ndarray) -> TokenGrid:
        """Project [T, H, W, 3] frames into a [T/t, (H/P)(W/P), C] grid."""
        cfg = self.config
        video = np.asarray(video, dtype=np.float64)
        expected = (cfg.frames, cfg.frame_height, cfg.frame_width, 3)
        if video.shape != expected:
            raise ValueError(f"video shape {video.shape} does not match config {expected}")
        gh, gw = cfg.grid_hw
        p, t = cfg.patch_size, cfg.tubelet
        patches = video.reshape(cfg.n_temporal, t, gh, p, gw, p, 3)
        patches = patches.transpose(0, 2, 4, 1, 3, 5, 6).reshape(cfg.n_temporal, gh * gw, -1)
        data = patches @ self.patch_embed + self.position_code()
        return TokenGrid(data, self.cls_token.copy() if cfg.cls_enabled else None)

    # -- attention --------------------------------------------------------

    def _attend(self, h: np.ndarray, w: dict, log_sizes: Optional[np.ndarray]):
        """Multi-head attention over axis -2 of ``h`` [B, n, C].

        Returns ``(out [B, n, C], keys [B, n, C_head], probs [B, n, n])``.
        """
        heads = self.config.heads
        b, n, c = h.shape
        dh = c // heads

        def split(x):
            return x.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split(h @ w["wq"]), split(h @ w["wk"]), split(h @ w["wv"])
        logits = q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh)
        if log_sizes is not None:
            logits = logits + log_sizes[:, None, None, :]
        probs = softmax(logits, axis=-1)
        out = (probs @ v).transpose(0, 2, 1, 3).reshape(b, n, c) @ w["wo"]
        return out, k.mean(axis=1), probs.mean(axis=1)

    def forward(
        self,
        grid: TokenGrid,
        schedule: Optional[MergeSchedule] = None,
        hooks: Optional[MergeHooks] = None,
        provenance: Optional[Provenance] = None,
        proportional_attention: bool = False,
        keep_artifacts: bool = True,
    ) -> ForwardResult:
        cfg = self.config
        n_layers = cfg.layers
        schedule = schedule if schedule is not None else MergeSchedule.none(n_layers)
        schedule.validate(grid.n_t, grid.n_s, n_layers)
        hooks = hooks if hooks is not None else StimHooks()
        provenance = provenance if provenance is not None else Provenance.identity(grid.n_t, grid.n_s)
        expected = schedule.dims(grid.n_t, grid.n_s)
        result = ForwardResult(grid, provenance)

        x = grid.data.copy()
        cls = None if grid.cls is None else grid.cls.copy()
        for li, (lw, plan) in enumerate(zip(self.layers, schedule)):
            layer = li + 1
            n_t, n_s, c = x.shape
            sizes = provenance.sizes().astype(np.float64)

            # temporal attention: one sequence per spatial position
            h = layer_norm(x, *lw.norms["norm_t"]).transpose(1, 0, 2)
            log_sz = np.log(sizes.T) if proportional_attention else None
            out, t_keys, t_probs = self._attend(h, lw.temporal, log_sz)
            x = x + out.transpose(1, 0, 2)
            art = AttentionArtifacts(t_keys.transpose(1, 0, 2), t_probs)

            record = {"layer": layer}
            if plan.temporal:
                g, provenance, rec = hooks.temporal(TokenGrid(x, cls), art, plan, provenance)
                self._check(g, provenance, expected[li][0], n_s, "temporal", layer)
                x = g.data.copy()
                record["temporal"] = rec
                n_t = x.shape[0]
                sizes = provenance.sizes().astype(np.float64)

            # spatial attention: one sequence per frame, CLS prepended
            h = layer_norm(x, *lw.norms["norm_s"])
            log_sz = np.log(sizes) if proportional_attention else None
            if cls is not None:
                hc = layer_norm(cls, *lw.norms["norm_s"])
                h = np.concatenate([np.broadcast_to(hc, (n_t, 1, c)), h], axis=1)
                if log_sz is not None:
                    log_sz = np.concatenate([np.zeros((n_t, 1)), log_sz], axis=1)
            out, s_keys, _ = self._attend(h, lw.spatial, log_sz)
            if cls is not None:
                cls = cls + out[:, 0].mean(axis=0)
                out, s_keys = out[:, 1:], s_keys[:, 1:]
            x = x + out
            art.spatial_keys = s_keys

            if plan.spatial:
                g, provenance, rec = hooks.spatial(TokenGrid(x, cls), art, plan, layer, n_layers, provenance)
                self._check(g, provenance, expected[li][0], expected[li][1], "spatial", layer)
                x = g.data.copy()
                record["spatial"] = rec

            h = layer_norm(x, *lw.norms["norm_mlp"])
            x = x + gelu(h @ lw.mlp_in) @ lw.mlp_out
            if cls is not None:
                hc = layer_norm(cls, *lw.norms["norm_mlp"])
                cls = cls + gelu(hc @ lw.mlp_in) @ lw.mlp_out

            if keep_artifacts:
                result.artifacts.append(art)
            result.records.append(record)
            result.snapshots.append(provenance)
            result.dims.append(x.shape[:2])

        result.grid = TokenGrid(x, cls)
        result.provenance = provenance
        return result

    @staticmethod
    def _check(grid: TokenGrid, prov: Provenance, n_t: int, n_s: int, stage: str, layer: int):
        if grid.n_t != n_t or grid.n_s != n_s or prov.n_t != n_t or prov.n_s != n_s:
            raise MergeContractError(
                f"merge contract violation: {stage} hook at layer {layer} returned "
                f"grid {grid.n_t}x{grid.n_s} / provenance {prov.n_t}x{prov.n_s}, expected {n_t}x{n_s}"
            )


def build_encoder(config: ModelConfig, seed: int = 0) -> Encoder:
    return Encoder(config, seed)
