"""Dense f32 numerics underneath the engine: matmul, causal softmax,
RMS normalization, rotary embedding, cosine similarity, variance.

All public operations take and return ``float32`` arrays and guarantee
finite outputs. Statistics (cosine, variance) accumulate in float64
internally for accuracy but still return float32.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import DomainError, ShapeError, UndefinedSimilarityError


def as_f32(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float32)


def _check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{what} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    """Product of two 2-D f32 matrices."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    return _check_finite(a @ b, "matmul result")


def causal_softmax(scores, scale: float) -> np.ndarray:
    """Row-wise softmax of ``scores * scale`` over positions j <= i.

    Entries above the diagonal are exactly zero; each row sums to 1.
    Row maxima are subtracted before exponentiation for stability.
    """
    s = as_f32(scores)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ShapeError(f"causal_softmax expects a square matrix, got {s.shape}")
    _check_finite(s, "causal_softmax input")
    t = s.shape[0]
    scaled = s * np.float32(scale)
    keep = np.tril(np.ones((t, t), dtype=bool))
    # Masked positions are excluded from the row max and map to exp(-inf) = 0.
    masked = np.where(keep, scaled, np.float32(-np.inf))
    rowmax = masked.max(axis=1, keepdims=True)
    e = np.exp(masked - rowmax)
    return e / e.sum(axis=1, keepdims=True)


def softmax_row(scores, scale: float) -> np.ndarray:
    """Stable softmax over a single score row (incremental decode path)."""
    s = as_f32(scores)
    if s.ndim != 1 or s.size == 0:
        raise ShapeError(f"softmax_row expects a non-empty vector, got shape {s.shape}")
    _check_finite(s, "softmax_row input")
    scaled = s * np.float32(scale)
    e = np.exp(scaled - scaled.max())
    return e / e.sum()


def rms_norm(x, gain, eps: float) -> np.ndarray:
    """y_i = gain_i * x_i / sqrt(mean(x^2) + eps)."""
    x = as_f32(x)
    gain = as_f32(gain)
    if x.shape != gain.shape or x.ndim != 1:
        raise ShapeError(f"rms_norm expects matching vectors, got {x.shape} and {gain.shape}")
    if eps <= 0:
        raise DomainError("rms_norm eps must be positive")
    denom = np.sqrt(np.mean(x * x) + np.float32(eps))
    return gain * (x / denom)


def rms_norm_rows(x, gain, eps: float) -> np.ndarray:
    """Row-wise rms_norm over a [T, d] matrix with a shared gain vector."""
    x = as_f32(x)
    gain = as_f32(gain)
    if x.ndim != 2 or gain.ndim != 1 or x.shape[1] != gain.shape[0]:
        raise ShapeError(f"rms_norm_rows got {x.shape} and gain {gain.shape}")
    denom = np.sqrt((x * x).mean(axis=1, keepdims=True) + np.float32(eps))
    return (x / denom) * gain


@lru_cache(maxsize=64)
def _rope_freqs(d_head: int, theta_base: float) -> np.ndarray:
    # theta_base ** (-2k / d_head) for pair index k, computed in f64.
    k = np.arange(d_head // 2, dtype=np.float64)
    return theta_base ** (-2.0 * k / d_head)


def rope_tables(d_head: int, theta_base: float, positions) -> tuple[np.ndarray, np.ndarray]:
    """Per-position cos/sin tables, shape [len(positions), d_head // 2], f32.

    Angles are computed in float64 so the full-sequence and incremental
    paths see bit-identical rotation factors for the same position.
    """
    if d_head % 2 != 0:
        raise ShapeError(f"rotary embedding needs an even head dim, got {d_head}")
    angles = np.asarray(positions, dtype=np.float64)[:, None] * _rope_freqs(d_head, theta_base)[None, :]
    return np.cos(angles).astype(np.float32), np.sin(angles).astype(np.float32)


def rope_rotate(x, position: int, theta_base: float) -> np.ndarray:
    """Rotate consecutive pairs (x_2k, x_2k+1) by position * theta_base^(-2k/d)."""
    x = as_f32(x)
    if x.ndim != 1:
        raise ShapeError(f"rope_rotate expects a vector, got shape {x.shape}")
    cos, sin = rope_tables(x.shape[0], theta_base, [position])
    even = x[0::2]
    odd = x[1::2]
    out = np.empty_like(x)
    out[0::2] = even * cos[0] - odd * sin[0]
    out[1::2] = even * sin[0] + odd * cos[0]
    return out


def rope_rotate_heads(x: np.ndarray, positions, theta_base: float) -> np.ndarray:
    """Rotate a [T, n_heads, d_head] block, row t by angle positions[t]."""
    x = as_f32(x)
    if x.ndim != 3:
        raise ShapeError(f"rope_rotate_heads expects [T, H, d], got shape {x.shape}")
    cos, sin = rope_tables(x.shape[2], theta_base, positions)
    cos = cos[:, None, :]
    sin = sin[:, None, :]
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def cosine_similarity(u, v) -> np.float32:
    """u.v / (|u||v|), clipped into [-1, 1]. Accumulates in float64."""
    u = as_f32(u).ravel().astype(np.float64)
    v = as_f32(v).ravel().astype(np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return np.float32(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def variance(values) -> np.float32:
    """Population variance (mean squared deviation)."""
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        raise DomainError("variance of an empty array is undefined")
    m = a.mean()
    return np.float32(np.mean((a - m) ** 2))


def silu(x: np.ndarray) -> np.ndarray:
    x = as_f32(x)
    return x / (np.float32(1.0) + np.exp(-x))
