"""Token merging for divided space-time video transformers."""
from .analysis import IBInputs, IBResult, SimilarityStudyConfig, ib_score, static_dynamic_similarity, temporal_similarity_study
from .baseline import FlatTokenSet, RandomMergeHooks, tome_merge, unmerge
from .bsm import Matching, match
from .core import (
    ConfigError,
    LayerPlan,
    MergeContractError,
    MergeSchedule,
    ModelConfig,
    Provenance,
    TokenGrid,
    cosine_similarity,
    negative_entropy,
    softmax_row,
)
from .cost import CostReport, layer_flops, schedule_cost
from .encoder import Encoder, StimHooks, build_encoder
from .experiment import ExperimentConfig, build_schedule, export_merge_maps, run_experiment
from .spatial import choose_boundaries, depth_scores, frame_similarity_curve, sim_tm
from .synth import SyntheticVideoSpec, synth_generate
from .temporal import merge_pair, saliency_weights, tim_tm
from .tensorfile import read_tensor, write_tensor

__version__ = "0.1.0"
