from .layers import (
    GraphContext,
    NumericError,
    aggregate_neighborhood,
    apply_aggregator,
    attention_scores,
    final_representation,
    forward,
    fuse_literals,
    normalize_attention,
    normalized_adjacency,
    residual_beta,
    residual_identity,
)
from .params import CheckpointError, ModelParams, init_params
