import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stimtm.core import ConfigError, LayerPlan, MergeSchedule, ModelConfig
from stimtm.cost import COMPONENTS, layer_flops, schedule_cost

DEFAULT = ModelConfig()
SEQUENTIAL = MergeSchedule.from_blocks(12, range(1, 7), range(7, 13), r_t=1, r_s=12, m=2)
PARALLEL = MergeSchedule.from_blocks(12, range(1, 7), range(1, 7), r_t=1, r_s=12, m=2)


class TestLayerFlops:
    def test_quadratic_linear_structure(self):
        a = layer_flops(8, 50, 64)
        b = layer_flops(8, 100, 64)
        assert b["spatial_attn"] == 4 * a["spatial_attn"]
        assert b["temporal_attn"] == 2 * a["temporal_attn"]

    def test_single_frame_temporal_term(self):
        assert layer_flops(1, 196, 768)["temporal_attn"] == 2 * (2 * 196 * 768)

    def test_closed_form(self):
        n_t, n_s, c = 16, 196, 768
        n = n_t * n_s
        f = layer_flops(n_t, n_s, c, with_cls=True)
        assert f["temporal_proj"] == 8 * n * c * c
        assert f["spatial_proj"] == 8 * (n + n_t) * c * c
        assert f["temporal_attn"] == 4 * n_s * n_t**2 * c
        assert f["spatial_attn"] == 4 * n_t * (n_s + 1) ** 2 * c
        assert f["mlp"] == 16 * (n + 1) * c * c
        assert all(isinstance(v, int) and v >= 0 for v in f.values())
        assert set(f) == set(COMPONENTS)


class TestScheduleCost:
    def test_no_merge_ratio_exactly_one(self):
        assert schedule_cost(DEFAULT, MergeSchedule.none(12)).ratio == 1.0

    def test_sequential_ratio(self):
        assert schedule_cost(DEFAULT, SEQUENTIAL).ratio == pytest.approx(0.654, abs=0.02)

    def test_t24_ratio(self):
        cfg = ModelConfig(frames=24)
        assert schedule_cost(cfg, SEQUENTIAL).ratio == pytest.approx(0.739, abs=0.02)

    def test_parallel_cheaper(self):
        assert schedule_cost(DEFAULT, PARALLEL).ratio < schedule_cost(DEFAULT, SEQUENTIAL).ratio

    def test_baseline_absolute_gflops_near_table(self):
        # Known conflict: the prescribed counter gives ~736 GFLOPs here.
        gflops = schedule_cost(DEFAULT, MergeSchedule.none(12)).gflops
        assert gflops == pytest.approx(459.39, rel=0.15)

    def test_baseline_total_matches_closed_form(self):
        n_t, n_s, c = 16, 196, 768
        n = n_t * n_s
        per_layer = (8 * n * c * c + 4 * n_s * n_t**2 * c + 8 * (n + n_t) * c * c
                     + 4 * n_t * (n_s + 1) ** 2 * c + 16 * (n + 1) * c * c)
        assert schedule_cost(DEFAULT, MergeSchedule.none(12)).total == 12 * per_layer == 736_039_600_128

    def test_per_layer_dims_follow_schedule(self):
        rep = schedule_cost(DEFAULT, SEQUENTIAL)
        assert [(lc.n_t, lc.n_s) for lc in rep.layers] == SEQUENTIAL.dims(16, 196)

    def test_invalid_schedule(self):
        with pytest.raises(ConfigError):
            schedule_cost(DEFAULT, MergeSchedule.from_blocks(12, range(1, 13), [], r_t=2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 10)), min_size=6, max_size=6),
           st.integers(0, 5), st.booleans())
    def test_monotone_in_rates(self, rates, layer, bump_t):
        cfg = ModelConfig(frames=16, layers=6)
        def sched(rs):
            return MergeSchedule(tuple(
                LayerPlan({(0, 0): "none", (1, 0): "temporal", (0, 1): "spatial",
                           (1, 1): "temporal-then-spatial"}[(rt > 0, r > 0)], rt, r, 2)
                for rt, r in rs))
        base = sched(rates)
        bumped = list(rates)
        rt, r = bumped[layer]
        bumped[layer] = (rt + 1, r) if bump_t else (rt, r + 1)
        more = sched(bumped)
        try:
            more.validate(16, 196, 6)
        except ConfigError:
            return
        assert schedule_cost(cfg, more).total <= schedule_cost(cfg, base).total

    def test_report_dict(self):
        d = schedule_cost(DEFAULT, SEQUENTIAL).to_dict()
        assert d["ratio"] == pytest.approx(0.6522, abs=1e-4)
        assert len(d["layers"]) == 12
        assert d["total_flops"] == sum(layer["flops"] for layer in d["layers"])
