"""Analytic FLOPs for divided space-time layers under a merge schedule.

Conventions: 2 FLOPs per multiply-add, MLP expansion 4x, CLS joins every
frame's spatial attention and the MLP but not temporal attention. Patch
embedding and the classifier head are left out since they are the same for
every schedule. Within a layer each stage is charged at the token count it
actually sees: temporal attention at the input dims, spatial attention after
the temporal merge, the MLP after the spatial merge.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import MergeSchedule, ModelConfig

COMPONENTS = ("temporal_proj", "temporal_attn", "spatial_proj", "spatial_attn", "mlp")


def layer_flops(n_t: int, n_s: int, channels: int, with_cls: bool = False) -> dict[str, int]:
    """FLOPs of one layer whose token grid stays [n_t, n_s] throughout."""
    if n_t <= 0 or n_s <= 0 or channels <= 0:
        raise ValueError("dimensions must be positive")
    c = channels
    cls = 1 if with_cls else 0
    n = n_t * n_s
    ns_sp = n_s + cls
    return {
        # q, k, v, out projections: 4 matmuls of C x C per token
        "temporal_proj": 2 * 4 * n * c * c,
        "temporal_attn": 2 * (2 * n_s * n_t * n_t * c),
        "spatial_proj": 2 * 4 * n_t * ns_sp * c * c,
        "spatial_attn": 2 * (2 * n_t * ns_sp * ns_sp * c),
        "mlp": 2 * 8 * (n + cls) * c * c,
    }


@dataclass
class LayerCost:
    layer: int
    n_t: int
    n_s: int
    flops: dict

    @property
    def total(self) -> int:
        return sum(self.flops.values())


@dataclass
class CostReport:
    layers: list = field(default_factory=list)
    reference_total: int | None = None

    @property
    def total(self) -> int:
        return sum(lc.total for lc in self.layers)

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    @property
    def ratio(self) -> float | None:
        if self.reference_total is None:
            return None
        return self.total / self.reference_total

    def component_totals(self) -> dict[str, int]:
        return {k: sum(lc.flops[k] for lc in self.layers) for k in COMPONENTS}

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"layer": lc.layer, "n_t": lc.n_t, "n_s": lc.n_s, "flops": lc.total, **lc.flops}
                for lc in self.layers
            ],
            "total_flops": self.total,
            "gflops": self.gflops,
            "baseline_flops": self.reference_total,
            "ratio": self.ratio,
        }


def _raw_cost(config: ModelConfig, schedule: MergeSchedule) -> list[LayerCost]:
    c, cls = config.channels, config.cls_enabled
    n_t, n_s = config.n_temporal, config.n_spatial
    out = []
    for i, plan in enumerate(schedule, start=1):
        mid_t = n_t - plan.r_t if plan.temporal else n_t
        out_s = n_s - plan.r_s if plan.spatial else n_s
        before = layer_flops(n_t, n_s, c, cls)
        middle = layer_flops(mid_t, n_s, c, cls)
        after = layer_flops(mid_t, out_s, c, cls)
        flops = {
            "temporal_proj": before["temporal_proj"],
            "temporal_attn": before["temporal_attn"],
            "spatial_proj": middle["spatial_proj"],
            "spatial_attn": middle["spatial_attn"],
            "mlp": after["mlp"],
        }
        n_t, n_s = mid_t, out_s
        out.append(LayerCost(i, n_t, n_s, flops))
    return out


def schedule_cost(config: ModelConfig, schedule: MergeSchedule) -> CostReport:
    """Per-layer FLOPs of ``schedule`` plus its ratio to the no-merge baseline."""
    config.validate()
    schedule.validate(config.n_temporal, config.n_spatial, config.layers)
    baseline = sum(lc.total for lc in _raw_cost(config, MergeSchedule.none(config.layers)))
    return CostReport(_raw_cost(config, schedule), baseline)
