"""Desk-scale decoder-only transformer engine with attention-weight sharing.

Layers can be grouped into spans that reuse one anchor layer's softmax
attention weights, grouped under shared KV heads, or pointed at another
layer's KV cache; an analytical cost model predicts the FLOP and KV-byte
consequences and is reconciled against instrumented runs.
"""

from .accounting import (
    MODE_DECODE,
    MODE_FULL,
    SAVINGS_COLUMNS,
    CostReport,
    predict_costs,
    reconcile,
    savings_table,
)
from .analysis import (
    AttentionRecord,
    GroupSegment,
    capture_records,
    pad_to,
    segment_groups,
    similarity_surface,
    variance_surface,
    weighted_cumulative_variance,
)
from .config import ModelConfig, default_cla_pairs, toy_config
from .counters import OpCounter, diff_snapshots
from .errors import AttnShareError
from .model import DecodeSession, decode_step, forward_full, generate, new_session, perplexity
from .plan import LayerRole, SharingPlan, format_plan, parse_plan
from .version import VERSION
from .weights import Weights, load_model, random_weights, save_model

__version__ = VERSION

__all__ = [
    "AttentionRecord",
    "AttnShareError",
    "CostReport",
    "DecodeSession",
    "GroupSegment",
    "LayerRole",
    "MODE_DECODE",
    "MODE_FULL",
    "ModelConfig",
    "OpCounter",
    "SAVINGS_COLUMNS",
    "SharingPlan",
    "VERSION",
    "Weights",
    "capture_records",
    "decode_step",
    "default_cla_pairs",
    "diff_snapshots",
    "format_plan",
    "forward_full",
    "generate",
    "load_model",
    "new_session",
    "pad_to",
    "parse_plan",
    "perplexity",
    "predict_costs",
    "random_weights",
    "reconcile",
    "save_model",
    "savings_table",
    "segment_groups",
    "similarity_surface",
    "toy_config",
    "variance_surface",
    "weighted_cumulative_variance",
]
