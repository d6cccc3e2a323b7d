"""Measurement tooling over captured attention weights.

Captured matrices from samples of different lengths are zero-padded to the
longest sample before cross-sample averaging, then compared with cosine
similarity between layers. Two aggregation choices are exposed:

* ``head_agg``: "mean" averages the heads of a layer into one matrix
  before comparison (the default); "per_head" keeps a single head.
* ``sample_agg``: "mean_matrices" (default) averages each layer's padded
  matrices over the corpus and compares the means; "mean_similarities"
  compares per sample and averages the similarity values. For a single
  sample the two are identical by construction.

Variance is pooled over unmasked (j <= i) attention entries only; the
structural zeros above the diagonal would deflate it by sequence length.
All reductions run in ascending sample-id order so results do not depend
on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import InputError, NormalizationError, ShapeError
from .linalg import cosine_similarity
from .model import forward_full
from .weights import Weights

HEAD_AGG_MODES = ("mean", "per_head")
SAMPLE_AGG_MODES = ("mean_matrices", "mean_similarities")
DEFAULT_TAU = 0.8


@dataclass
class AttentionRecord:
    """Per-layer, per-head causal attention weights captured from one sample."""

    sample_id: str
    layers: list[np.ndarray]  # each [n_heads, T, T]

    @property
    def seq_len(self) -> int:
        return self.layers[0].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_heads(self) -> int:
        return self.layers[0].shape[0]


@dataclass(frozen=True)
class GroupSegment:
    start: int
    end: int  # inclusive
    mean_similarity: float


def capture_records(config: ModelConfig, weights: Weights, samples) -> list[AttentionRecord]:
    """Run every (sample_id, token_ids) pair with capture on."""
    records = []
    for sample_id, ids in samples:
        result = forward_full(config, weights, ids, capture=True)
        records.append(AttentionRecord(sample_id=str(sample_id), layers=result.attn_weights))
    return records


def pad_to(m: np.ndarray, maxlen: int) -> np.ndarray:
    """Embed a square matrix in the top-left of a maxlen x maxlen zero matrix."""
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"pad_to expects a square matrix, got {m.shape}")
    size = m.shape[0]
    if size > maxlen:
        raise ShapeError(f"matrix of size {size} does not fit in maxlen {maxlen}")
    if size == maxlen:
        return m
    out = np.zeros((maxlen, maxlen), dtype=np.float32)
    out[:size, :size] = m
    return out


def _sorted_records(records) -> list[AttentionRecord]:
    records = list(records)
    if not records:
        raise InputError("empty attention corpus")
    return sorted(records, key=lambda r: r.sample_id)


def _layer_matrix(record: AttentionRecord, layer: int, head_agg, maxlen: int) -> np.ndarray:
    """Head-aggregated, padded layer matrix in float64."""
    block = record.layers[layer]
    if head_agg == "mean":
        agg = block.mean(axis=0, dtype=np.float64)
    else:
        mode, head = head_agg
        if mode != "per_head":
            raise InputError(f"unknown head aggregation {head_agg!r}")
        if not 0 <= head < block.shape[0]:
            raise InputError(f"head {head} out of range 0..{block.shape[0] - 1}")
        agg = block[head].astype(np.float64)
    return pad_to(agg.astype(np.float32), maxlen).astype(np.float64)


def similarity_surface(records, head_agg="mean", sample_agg: str = "mean_matrices") -> np.ndarray:
    """Layer x layer cosine similarity of aggregated attention matrices."""
    if sample_agg not in SAMPLE_AGG_MODES:
        raise InputError(f"unknown sample aggregation {sample_agg!r}")
    records = _sorted_records(records)
    n_layers = records[0].n_layers
    maxlen = max(r.seq_len for r in records)

    surface = np.ones((n_layers, n_layers), dtype=np.float32)
    if sample_agg == "mean_matrices":
        means = []
        for layer in range(n_layers):
            acc = np.zeros((maxlen, maxlen), dtype=np.float64)
            for rec in records:
                acc += _layer_matrix(rec, layer, head_agg, maxlen)
            means.append((acc / len(records)).ravel())
        for i in range(n_layers):
            for j in range(i, n_layers):
                surface[i, j] = surface[j, i] = cosine_similarity(means[i], means[j])
    else:
        acc = np.zeros((n_layers, n_layers), dtype=np.float64)
        for rec in records:
            mats = [_layer_matrix(rec, layer, head_agg, maxlen).ravel()
                    for layer in range(n_layers)]
            for i in range(n_layers):
                for j in range(i, n_layers):
                    s = cosine_similarity(mats[i], mats[j])
                    acc[i, j] += s
                    acc[j, i] += s if i != j else 0.0
        surface = (acc / len(records)).astype(np.float32)
    return surface


def variance_surface(records) -> np.ndarray:
    """Population variance of unmasked attention entries, per layer and head."""
    records = _sorted_records(records)
    n_layers = records[0].n_layers
    n_heads = records[0].n_heads

    masks = {}

    def mask(t: int) -> np.ndarray:
        if t not in masks:
            masks[t] = np.tril(np.ones((t, t), dtype=bool))
        return masks[t]

    out = np.zeros((n_layers, n_heads), dtype=np.float32)
    for layer in range(n_layers):
        for head in range(n_heads):
            total = 0.0
            count = 0
            for rec in records:
                vals = rec.layers[layer][head][mask(rec.seq_len)]
                total += vals.sum(dtype=np.float64)
                count += vals.size
            mean = total / count
            sq = 0.0
            for rec in records:
                vals = rec.layers[layer][head][mask(rec.seq_len)].astype(np.float64)
                sq += ((vals - mean) ** 2).sum()
            out[layer, head] = np.float32(sq / count)
    return out


def weighted_cumulative_variance(vs: np.ndarray) -> np.ndarray:
    """Suffix-sum each head's variances, normalized by the head's mean suffix sum.

    S(l, h) = sum_{l' >= l} v(l', h); output = S / mean_l S(l, h).
    """
    v = np.asarray(vs, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"expected a [layers, heads] surface, got shape {v.shape}")
    suffix = np.cumsum(v[::-1], axis=0)[::-1]
    norms = suffix.mean(axis=0)
    dead = np.flatnonzero(norms == 0.0)
    if dead.size:
        raise NormalizationError(
            f"weighted cumulative variance undefined for all-zero heads: {dead.tolist()}"
        )
    return (suffix / norms).astype(np.float32)


def segment_groups(surface: np.ndarray, tau: float = DEFAULT_TAU) -> list[GroupSegment]:
    """Greedy contiguous grouping of layers by similarity.

    A layer joins the current group while its mean similarity to the group's
    layers stays at or above ``tau``; otherwise it starts a new group.
    """
    s = np.asarray(surface, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"expected a square surface, got shape {s.shape}")
    if not 0.0 < tau < 1.0:
        raise InputError(f"tau must be in (0, 1), got {tau}")

    groups: list[GroupSegment] = []
    members = [0]
    for layer in range(1, s.shape[0]):
        if s[layer, members].mean() >= tau:
            members.append(layer)
        else:
            groups.append(_close_group(s, members))
            members = [layer]
    groups.append(_close_group(s, members))
    return groups


def _close_group(s: np.ndarray, members: list[int]) -> GroupSegment:
    if len(members) == 1:
        mean = 1.0
    else:
        pairs = [s[i, j] for idx, i in enumerate(members) for j in members[idx + 1:]]
        mean = float(np.mean(pairs))
    return GroupSegment(start=members[0], end=members[-1], mean_similarity=mean)
