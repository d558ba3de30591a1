"""Synthetic videos: a textured static background with one moving block.

The dynamic mask marks, per frame, the patches whose noise-free content
changes against the previous or the next frame by more than the noise
amplitude. Everything else is static ground truth.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import zoom


@dataclass(frozen=True)
class SyntheticVideoSpec:
    frames: int = 16
    height: int = 224
    width: int = 224
    patch_size: int = 16
    object_size: int = 48
    velocity: tuple = (4.0, 0.0)  # (vx, vy) pixels per frame
    trajectory: str = "linear"
    period: float = 16.0  # frames per cycle, sinusoidal only
    start: tuple | None = None  # (x, y) of the top-left corner; None centers the path
    noise: float = 0.0
    object_color: tuple = (0.9, 0.15, 0.2)
    texture_contrast: float = 0.15

    def to_dict(self) -> dict:
        d = asdict(self)
        d["velocity"] = list(self.velocity)
        d["object_color"] = list(self.object_color)
        d["start"] = None if self.start is None else list(self.start)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticVideoSpec":
        d = dict(d)
        for key in ("velocity", "object_color", "start"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # [T, H, W, 3]
    mask: np.ndarray  # [T, H/P, W/P] bool, True = dynamic
    positions: np.ndarray  # [T, 2] top-left (x, y) of the object

    @property
    def patch_mask(self) -> np.ndarray:
        """Mask flattened to [T, n_s] in the tokenizer's row-major patch order."""
        return self.mask.reshape(self.mask.shape[0], -1)


def _offsets(spec: SyntheticVideoSpec) -> np.ndarray:
    f = np.arange(spec.frames, dtype=np.float64)
    v = np.asarray(spec.velocity, dtype=np.float64)
    if spec.trajectory == "linear":
        disp = f[:, None] * v[None, :]
    elif spec.trajectory == "sinusoidal":
        # peak speed equals |velocity|
        scale = spec.period / (2 * math.pi)
        disp = scale * np.sin(2 * math.pi * f / spec.period)[:, None] * v[None, :]
    else:
        raise ValueError(f"unknown trajectory {spec.trajectory!r}")
    return disp


def trajectory(spec: SyntheticVideoSpec) -> np.ndarray:
    """Integer top-left (x, y) per frame; raises if the block leaves the frame."""
    disp = _offsets(spec)
    s = spec.object_size
    if spec.start is None:
        lo, hi = disp.min(axis=0), disp.max(axis=0)
        extent = np.array([spec.width, spec.height], dtype=np.float64)
        start = np.floor((extent - s - (hi - lo)) / 2.0) - lo
    else:
        start = np.asarray(spec.start, dtype=np.float64)
    pos = np.rint(start[None, :] + disp).astype(np.int64)
    if np.any(pos < 0) or np.any(pos[:, 0] + s > spec.width) or np.any(pos[:, 1] + s > spec.height):
        raise ValueError("object exits frame")
    return pos


def _texture(rng: np.random.Generator, h: int, w: int, cell: int, base, contrast: float) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(h // cell + 2, w // cell + 2, 3))
    fine = zoom(coarse, (cell, cell, 1), order=1)[:h, :w]
    return np.clip(np.asarray(base)[None, None, :] + contrast * fine, 0.0, 1.0)


def synth_generate(spec: SyntheticVideoSpec, seed: int = 0) -> SyntheticVideo:
    if spec.height % spec.patch_size or spec.width % spec.patch_size:
        raise ValueError("frame size must be a multiple of the patch size")
    if spec.object_size <= 0 or spec.frames <= 0:
        raise ValueError("object size and frame count must be positive")
    pos = trajectory(spec)
    rng = np.random.default_rng(seed)
    background = _texture(rng, spec.height, spec.width, 8, (0.45, 0.4, 0.35), spec.texture_contrast)
    s = spec.object_size
    yy, xx = np.mgrid[0:s, 0:s]
    stripes = 0.15 * np.sign(np.sin(2 * math.pi * (xx + yy) / max(4, s // 3)))[..., None]
    block = np.clip(np.asarray(spec.object_color)[None, None, :] + stripes
                    + 0.05 * rng.uniform(-1, 1, size=(s, s, 3)), 0.0, 1.0)

    clean = np.repeat(background[None], spec.frames, axis=0)
    for f, (x, y) in enumerate(pos):
        clean[f, y:y + s, x:x + s] = block

    p = spec.patch_size
    gh, gw = spec.height // p, spec.width // p
    diff = np.abs(np.diff(clean, axis=0)).reshape(spec.frames - 1, gh, p, gw, p, 3)
    changed = diff.max(axis=(2, 4, 5)) > spec.noise
    mask = np.zeros((spec.frames, gh, gw), dtype=bool)
    mask[:-1] |= changed
    mask[1:] |= changed

    frames = clean
    if spec.noise > 0:
        frames = clean + rng.uniform(-spec.noise, spec.noise, size=clean.shape)
    return SyntheticVideo(frames, mask, pos)
