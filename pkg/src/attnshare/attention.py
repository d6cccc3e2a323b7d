"""Per-layer attention under the four strategies.

* ``attend_standard``: causal multi-head attention; with grouped KV heads
  already expanded to query heads this covers MHA, GQA, and MQA.
* ``attend_shared``: mixes this layer's values with attention weights taken
  from a span anchor. No queries, no keys, no scores, no softmax.
* ``attend_cla``: this layer's queries against a parent layer's cached
  keys and values.

Full-sequence functions work on head-major [H, T, d] blocks and return the
concatenated [T, H*d] hidden output (the caller applies the output
projection). ``*_step`` variants handle one new token against the cache.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cache import KvCache
from .errors import SequencingError, ShapeError
from .linalg import causal_softmax, softmax_row


@dataclass
class AttentionOutput:
    hidden: np.ndarray  # [T, n_heads * d_head]
    weights: np.ndarray | None = None  # [n_heads, T, T] when materialized


def expand_kv(kv: np.ndarray, n_heads: int) -> np.ndarray:
    """Map token-major [T, n_kv_heads, d] to head-major [n_heads, T, d].

    Query head h reads KV head h // (n_heads // n_kv_heads).
    """
    t, n_kv, d = kv.shape
    if n_heads % n_kv != 0:
        raise ShapeError(f"{n_heads} query heads not divisible by {n_kv} kv heads")
    per_head = np.transpose(kv, (1, 0, 2))
    if n_heads == n_kv:
        return per_head
    return np.repeat(per_head, n_heads // n_kv, axis=0)


def _check_heads(name: str, a: np.ndarray, ndim: int) -> None:
    if a.ndim != ndim:
        raise ShapeError(f"{name} expected {ndim}-D head-major block, got shape {a.shape}")


def attend_standard(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float,
                    keep_weights: bool = False) -> AttentionOutput:
    """Causal softmax(q k^T * scale) v per head; heads concatenated."""
    _check_heads("attend_standard q", q, 3)
    if q.shape[1] != k.shape[1] or k.shape != v.shape or q.shape[0] != k.shape[0]:
        raise ShapeError(f"attend_standard shapes differ: q{q.shape} k{k.shape} v{v.shape}")
    n_heads, t, _ = q.shape
    outs = []
    weights = np.empty((n_heads, t, t), dtype=np.float32) if keep_weights else None
    for h in range(n_heads):
        a = causal_softmax(q[h] @ k[h].T, scale)
        if weights is not None:
            weights[h] = a
        outs.append(a @ v[h])
    hidden = np.concatenate(outs, axis=1)
    return AttentionOutput(hidden=hidden, weights=weights)


def attend_shared(a: np.ndarray | None, v: np.ndarray) -> AttentionOutput:
    """Mix values with reused attention weights: out = a @ v per head."""
    if a is None:
        raise SequencingError("shared attention weights are not available yet")
    _check_heads("attend_shared weights", a, 3)
    _check_heads("attend_shared v", v, 3)
    if a.shape[0] != v.shape[0] or a.shape[1] != v.shape[1] or a.shape[1] != a.shape[2]:
        raise ShapeError(f"attend_shared shapes differ: a{a.shape} v{v.shape}")
    outs = [a[h] @ v[h] for h in range(a.shape[0])]
    return AttentionOutput(hidden=np.concatenate(outs, axis=1), weights=a)


def attend_cla(layer: int, parent: int, q: np.ndarray, cache: KvCache, scale: float,
               keep_weights: bool = False) -> AttentionOutput:
    """This layer's queries against the parent layer's cached keys and values."""
    if parent > layer:
        raise SequencingError(f"cla parent {parent} runs after layer {layer}")
    n_heads = q.shape[0]
    if cache.token_count(parent) < q.shape[1]:
        raise SequencingError(
            f"parent layer {parent} holds {cache.token_count(parent)} tokens, need {q.shape[1]}"
        )
    k = expand_kv(cache.keys(parent), n_heads)
    v = expand_kv(cache.values(parent), n_heads)
    return attend_standard(q, k, v, scale, keep_weights=keep_weights)


# --- incremental (one new token) variants ------------------------------------


def attend_standard_step(q: np.ndarray, keys: np.ndarray, values: np.ndarray,
                         scale: float) -> tuple[np.ndarray, np.ndarray]:
    """One query token against all cached tokens.

    q: [n_heads, d]; keys/values: [t, n_kv_heads, d].
    Returns (hidden [n_heads * d], rows [n_heads, t]).
    """
    n_heads = q.shape[0]
    k = expand_kv(keys, n_heads)
    v = expand_kv(values, n_heads)
    t = k.shape[1]
    rows = np.empty((n_heads, t), dtype=np.float32)
    outs = []
    for h in range(n_heads):
        rows[h] = softmax_row(k[h] @ q[h], scale)
        outs.append(rows[h] @ v[h])
    return np.concatenate(outs), rows


def attend_shared_step(rows: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Mix this layer's cached values with the anchor's current-step rows."""
    n_heads = rows.shape[0]
    v = expand_kv(values, n_heads)
    if rows.shape[1] != v.shape[1]:
        raise ShapeError(f"anchor rows cover {rows.shape[1]} tokens, values {v.shape[1]}")
    return np.concatenate([rows[h] @ v[h] for h in range(n_heads)])
