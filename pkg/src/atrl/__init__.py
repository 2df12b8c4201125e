"""Anchor-token credit assignment for RL with verifiable rewards.

Pipeline: aggregate multimodal attention over the top decoder layers,
divide out the positional bias curve, score each generated token by its
visual connectivity, partition the token similarity graph, refine
importance within clusters, and modulate the sequence advantage into
token-level credit.
"""

from .calib import BiasParams, aggregate, bias_curve, connectivity, debias
from .credit import (
    AdvantageSignal,
    SurrogateParams,
    ablation_weights,
    atrl_objective,
    cluster_weights,
    clipped_term,
    group_advantage,
    hard_top_p_mask,
    modulate,
    reinforce_objective,
)
from .graph import TokenGraph, build_graph, footprint_similarity, weighted_degree
from .partition import Clustering, cluster_count, edge_cut, partition
from .pipeline import PipelineConfig, SequenceCredit, anchor_stats, run_pipeline
from .refine import RefineParams, centroid, denoise, expand
from .tensor_io import (
    AttentionTensor,
    TokenMeta,
    load_attention,
    load_token_meta,
    save_attention,
    save_token_meta,
)

__version__ = "0.1.0"

__all__ = [
    "AdvantageSignal",
    "AttentionTensor",
    "BiasParams",
    "Clustering",
    "PipelineConfig",
    "RefineParams",
    "SequenceCredit",
    "SurrogateParams",
    "TokenGraph",
    "TokenMeta",
    "ablation_weights",
    "aggregate",
    "anchor_stats",
    "atrl_objective",
    "bias_curve",
    "build_graph",
    "centroid",
    "cluster_count",
    "cluster_weights",
    "clipped_term",
    "connectivity",
    "debias",
    "denoise",
    "edge_cut",
    "expand",
    "footprint_similarity",
    "group_advantage",
    "hard_top_p_mask",
    "load_attention",
    "load_token_meta",
    "modulate",
    "partition",
    "reinforce_objective",
    "run_pipeline",
    "save_attention",
    "save_token_meta",
    "weighted_degree",
]
