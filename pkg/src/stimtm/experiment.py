"""Experiment configuration, runner, and report / CSV emission."""
from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .analysis import (
    IBInputs,
    SimilarityStudyConfig,
    ib_score,
    static_dynamic_similarity,
    temporal_similarity_study,
)
from .baseline import RandomMergeHooks
from .core import HIERARCHICAL, ConfigError, MergeSchedule, ModelConfig, Provenance
from .cost import schedule_cost
from .encoder import Encoder, StimHooks
from .synth import SyntheticVideoSpec, synth_generate
from .tensorfile import read_tensor, write_tensor

SCHEMA = 1
PRESETS = ("none", "sequential", "spatial-first", "parallel", "temporal-only", "spatial-only",
           "temporal-sweep", "spatial-sweep")


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def build_schedule(spec: dict, n_layers: int) -> MergeSchedule:
    """Schedule from a config block.

    Either ``{"layers": [...per-layer dicts...]}``, explicit 1-based
    ``temporal_blocks`` / ``spatial_blocks`` lists, or a named ``preset``:

    * ``sequential``: temporal in the first half, spatial in the second
    * ``spatial-first``: the reverse
    * ``parallel``: both in the first half, temporal before spatial
    * ``temporal-only`` / ``spatial-only``: one half of ``sequential``
    * ``temporal-sweep``: temporal in layers 1..L-1; ``spatial-sweep``: spatial in every layer
    """
    if "layers" in spec:
        return MergeSchedule.from_list(spec["layers"])
    r_t, r_s = int(spec.get("r_t", 1)), int(spec.get("r_s", 12))
    m, k = int(spec.get("m", 2)), spec.get("k", HIERARCHICAL)
    if k != HIERARCHICAL:
        k = int(k)
    half = n_layers // 2
    first, second, every = range(1, half + 1), range(half + 1, n_layers + 1), range(1, n_layers + 1)
    if "temporal_blocks" in spec or "spatial_blocks" in spec:
        tb, sb = spec.get("temporal_blocks", []), spec.get("spatial_blocks", [])
    else:
        preset = spec.get("preset", "sequential")
        table = {
            "none": ((), ()),
            "sequential": (first, second),
            "spatial-first": (second, first),
            "parallel": (first, first),
            "temporal-only": (first, ()),
            "spatial-only": ((), second),
            "temporal-sweep": (range(1, n_layers), ()),
            "spatial-sweep": ((), every),
        }
        if preset not in table:
            raise ConfigError("unknown schedule preset", repr(preset))
        tb, sb = table[preset]
    return MergeSchedule.from_blocks(n_layers, tb, sb, r_t=r_t, r_s=r_s, m=m, k=k)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class Flags:
    raw_fusion: bool = False
    per_frame_matching: bool = False
    proportional_attention: bool = False
    recompute_saliency: bool = False


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: dict = field(default_factory=lambda: {"preset": "sequential", "r_t": 1, "r_s": 12,
                                                    "m": 2, "k": HIERARCHICAL})
    seed: int = 0
    input: dict = field(default_factory=lambda: {"synthetic": {}})
    flags: Flags = field(default_factory=Flags)
    analyses: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"schema"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError("unknown config keys", ", ".join(sorted(unknown)))
        try:
            model = ModelConfig(**d.get("model", {}))
            flags = Flags(**d.get("flags", {}))
        except TypeError as exc:
            raise ConfigError("invalid config field", str(exc)) from None
        default = cls()
        return cls(
            model=model,
            schedule=d.get("schedule", default.schedule),
            seed=int(d.get("seed", 0)),
            input=d.get("input", default.input),
            flags=flags,
            analyses=d.get("analyses", {}),
            outputs=d.get("outputs", {}),
        )

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "model": asdict(self.model),
            "schedule": copy.deepcopy(self.schedule),
            "seed": self.seed,
            "input": copy.deepcopy(self.input),
            "flags": asdict(self.flags),
            "analyses": copy.deepcopy(self.analyses),
            "outputs": copy.deepcopy(self.outputs),
        }

    def merge_schedule(self) -> MergeSchedule:
        return build_schedule(self.schedule, self.model.layers)

    def validate(self) -> "ExperimentConfig":
        self.model.validate()
        self.merge_schedule().validate(self.model.n_temporal, self.model.n_spatial, self.model.layers)
        if not ("synthetic" in self.input or "file" in self.input):
            raise ConfigError("input must be 'synthetic' or 'file'")
        return self

    def synthetic_spec(self) -> SyntheticVideoSpec:
        m = self.model
        base = {"frames": m.frames, "height": m.frame_height, "width": m.frame_width,
                "patch_size": m.patch_size}
        base.update(self.input.get("synthetic") or {})
        return SyntheticVideoSpec.from_dict(base)


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError("override must look like key=value", item)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("override path is not an object", key)
        node[parts[-1]] = value
    return d


# ---------------------------------------------------------------------------
# formatting
# ---------------------------------------------------------------------------


def _round(obj: Any):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.9g}")
    if isinstance(obj, (np.floating,)):
        return _round(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_round(report), indent=1, sort_keys=True) + "\n"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["nan" if v is None else (f"{v:.9g}" if isinstance(v, float) else v) for v in row])
    return path


def merge_map_rows(provenance: Provenance):
    labels = provenance.labels
    for t0 in range(labels.shape[0]):
        yield [t0, *labels[t0].tolist()]


def export_merge_maps(snapshots, directory, layers=None) -> list[Path]:
    """One CSV per layer; cell (frame t0, column s0) holds its live group id.

    Group id is ``tau * n_s + sigma`` of the owning live token, so an
    identity provenance gives each cell its own flat index.
    """
    directory = Path(directory)
    paths = []
    for i, prov in enumerate(snapshots, start=1):
        if layers is not None and i not in layers:
            continue
        n_s0 = prov.original_shape[1]
        header = ["frame", *[f"s{j}" for j in range(n_s0)]]
        paths.append(write_csv(directory / f"merge_map_layer{i:02d}.csv", header, merge_map_rows(prov)))
    return paths


def merge_map_summary(prov: Provenance) -> dict:
    """Group counts of a merge map.

    ``temporal_groups_per_position``: distinct live frames reached from each
    original position. ``spatial_groups_per_frame``: distinct live tokens
    owning cells in each live frame. Both are listed as sorted distinct values.
    """
    labels = prov.labels
    tau = labels // prov.n_s
    per_position = [len(np.unique(tau[:, s])) for s in range(labels.shape[1])]
    per_frame = [len(np.unique(labels[tau == t])) for t in range(prov.n_t)]
    return {
        "n_t": prov.n_t,
        "n_s": prov.n_s,
        "temporal_groups_per_position": sorted(set(per_position)),
        "spatial_groups_per_frame": sorted(set(per_frame)),
        "labels": labels,
    }


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


def load_input(config: ExperimentConfig):
    """Return ``(video, dynamic_mask or None)``."""
    if "file" in config.input:
        video = read_tensor(config.input["file"]).astype(np.float64)
        mask = None
        if config.input.get("mask"):
            m = read_tensor(config.input["mask"])
            mask = m.reshape(m.shape[0], -1) > 0.5
        return video, mask
    vid = synth_generate(config.synthetic_spec(), config.seed)
    return vid.frames, vid.patch_mask


def make_hooks(flags: Flags) -> StimHooks:
    return StimHooks(renormalize=not flags.raw_fusion, recompute_saliency=flags.recompute_saliency,
                     per_frame_matching=flags.per_frame_matching)


def pooled(grid) -> np.ndarray:
    """Unweighted mean of live tokens: one readout vector per clip."""
    return grid.data.mean(axis=(0, 1))


def ib_corpus_comparison(config: ExperimentConfig, spec: dict) -> dict:
    """IB score of the configured pipeline vs. random-pair merging on a labeled corpus.

    Class ``y`` is the colour of the moving block; backgrounds, sizes and
    velocities vary per clip.
    """
    n = int(spec.get("samples", 80))
    colors = spec.get("class_colors", [[0.9, 0.15, 0.2], [0.2, 0.7, 0.3]])
    n_x = int(spec.get("n_x", 16))
    temperature = float(spec.get("temperature", 1.0))
    estimator = spec.get("estimator", "cross-entropy")
    model = config.model
    encoder = Encoder(model, config.seed)
    schedule = config.merge_schedule()
    z_stim, z_rand, xs, ys = [], [], [], []
    for i in range(n):
        rng = np.random.default_rng([config.seed, 7919, i])
        label = i % len(colors)
        side = min(model.frame_height, model.frame_width)
        vid = synth_generate(SyntheticVideoSpec(
            frames=model.frames, height=model.frame_height, width=model.frame_width,
            patch_size=model.patch_size, object_size=int(rng.integers(side * 5 // 28, side * 2 // 7)),
            velocity=tuple(rng.uniform(-2.0, 2.0, size=2)), object_color=tuple(colors[label]),
            noise=float(spec.get("noise", 0.01)),
        ), seed=int(rng.integers(2**31)))
        grid = encoder.tokenize(vid.frames)
        xs.append(pooled(grid))
        ys.append(label)
        z_stim.append(pooled(encoder.forward(grid, schedule, make_hooks(config.flags),
                                             keep_artifacts=False).grid))
        z_rand.append(pooled(encoder.forward(grid, schedule, RandomMergeHooks(int(rng.integers(2**31))),
                                             keep_artifacts=False).grid))
    x, y = np.array(xs), np.array(ys)
    kw = {"n_x": n_x, "temperature": temperature, "seed": config.seed, "estimator": estimator}
    stim = ib_score(IBInputs(np.array(z_stim), x, y), **kw)
    rand = ib_score(IBInputs(np.array(z_rand), x, y), **kw)
    return {"samples": n, "estimator": estimator, "stim_tm": stim.to_dict(), "random": rand.to_dict()}


def run_experiment(config: ExperimentConfig) -> dict:
    """Tokenize, run the merging forward pass, cost it, run requested analyses."""
    config.validate()
    model = config.model
    schedule = config.merge_schedule()
    encoder = Encoder(model, config.seed)
    video, mask = load_input(config)
    grid = encoder.tokenize(video)
    result = encoder.forward(grid, schedule, make_hooks(config.flags),
                             proportional_attention=config.flags.proportional_attention,
                             keep_artifacts=False)
    cost = schedule_cost(model, schedule)

    maps = []
    for i, (plan, prov) in enumerate(zip(schedule, result.snapshots), start=1):
        if plan.temporal or plan.spatial:
            maps.append({"layer": i, "kind": plan.kind, **merge_map_summary(prov)})

    report = {
        "schema": SCHEMA,
        "status": "ok",
        "config": config.to_dict(),
        "encoder_checksum": encoder.checksum(),
        "dims": [{"layer": i, "n_t": nt, "n_s": ns} for i, (nt, ns) in enumerate(result.dims, start=1)],
        "cost": cost.to_dict(),
        "ratio": cost.ratio,
        "merge_maps": maps,
        "analyses": {},
    }

    outputs = config.outputs
    analyses = {k: v for k, v in config.analyses.items() if v is not None and v is not False}
    if "similarity" in analyses or "static_dynamic" in analyses:
        probe = encoder.forward(grid, None)  # redundancy is measured on unmerged features
        if "similarity" in analyses:
            sc = SimilarityStudyConfig(**analyses["similarity"]) if isinstance(
                analyses["similarity"], dict) else SimilarityStudyConfig()
            if not 1 <= sc.layer <= model.layers:
                raise ConfigError("similarity probe layer out of range", f"{sc.layer} not in 1..{model.layers}")
            curves = temporal_similarity_study(probe.artifacts[sc.layer - 1].spatial_keys,
                                               model.grid_hw, sc)
            report["analyses"]["similarity"] = {
                "layer": sc.layer, "distance": curves.distances,
                "same_position_mean": curves.same_position, "window_mean": curves.window,
            }
            if outputs.get("csv_dir"):
                write_csv(Path(outputs["csv_dir"]) / "similarity.csv",
                          ["distance", "same_position_mean", "window_mean"], curves.rows())
        if "static_dynamic" in analyses:
            if mask is None:
                raise ConfigError("static_dynamic analysis needs a dynamic mask")
            rows = static_dynamic_similarity([a.spatial_keys for a in probe.artifacts], mask)
            report["analyses"]["static_dynamic"] = rows
            if outputs.get("csv_dir"):
                write_csv(Path(outputs["csv_dir"]) / "static_dynamic.csv",
                          ["layer", "static_mean", "dynamic_mean"],
                          ([r["layer"], r["static_mean"], r["dynamic_mean"]] for r in rows))
    if "ib" in analyses:
        report["analyses"]["ib"] = ib_corpus_comparison(
            config, analyses["ib"] if isinstance(analyses["ib"], dict) else {})

    if outputs.get("maps_dir"):
        export_merge_maps(result.snapshots, outputs["maps_dir"])
    if outputs.get("tokens"):
        write_tensor(outputs["tokens"], result.grid.data)
    return report


def error_report(exc: BaseException, config: Optional[dict] = None) -> dict:
    return {
        "schema": SCHEMA,
        "status": "error",
        "config": config,
        "error": {"type": type(exc).__name__, "message": str(exc)},
    }
