"""Decoder-only pre-norm transformer with pluggable attention sharing.

Block layout is Llama-family: RMSNorm -> attention -> residual, then
RMSNorm -> gated MLP (w2 @ (silu(w1 x) * w3 x)) -> residual, with rotary
position embedding on queries and keys and a final norm before the LM head.

Per-layer behavior follows the layer's role:

* standard / anchor layers run full causal attention; anchors additionally
  publish their attention weights for the rest of their span;
* member layers project values only and mix them with the anchor's weights:
  no query/key projections, no scores, no softmax, no rotary work;
* cross-layer children project queries only and attend against their
  parent's cached keys and values.

An anchor's and a standard layer's attention go through the same code path,
so a plan of singleton spans is bit-identical to no plan at all.

When an ``OpCounter`` is supplied, every executed operation adds its cost
(under the conventions documented in ``accounting``) so predictions can be
reconciled against real runs with integer equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    attend_cla,
    attend_shared,
    attend_shared_step,
    attend_standard,
    attend_standard_step,
    expand_kv,
)
from .cache import KvCache
from .config import ModelConfig
from .counters import OpCounter
from .errors import CapacityError, DomainError, InputError
from .linalg import rms_norm, rms_norm_rows, rope_rotate_heads, silu
from .weights import Weights


@dataclass
class ForwardResult:
    logits: np.ndarray  # [T, vocab]
    attn_weights: list[np.ndarray] | None = None  # per layer [n_heads, T, T]


@dataclass
class DecodeSession:
    """Single-owner incremental decoding state over shared, immutable weights."""

    config: ModelConfig
    weights: Weights
    cache: KvCache
    tokens_seen: int = 0
    rng_seed: int = 0
    counter: OpCounter = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.counter is None:
            self.counter = OpCounter(self.config.n_layers)


def new_session(config: ModelConfig, weights: Weights, rng_seed: int = 0) -> DecodeSession:
    return DecodeSession(config=config, weights=weights, cache=KvCache(config), rng_seed=rng_seed)


def _attn_scale(config: ModelConfig) -> np.float32:
    return np.float32(1.0 / math.sqrt(config.d_head))


def _check_ids(config: ModelConfig, token_ids: np.ndarray) -> None:
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= config.vocab_size):
        raise InputError(
            f"token id out of range 0..{config.vocab_size - 1}: "
            f"min {token_ids.min()}, max {token_ids.max()}"
        )


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def forward_full(config: ModelConfig, weights: Weights, token_ids,
                 capture: bool = False, counter: OpCounter | None = None) -> ForwardResult:
    """Run the whole sequence through the stack at once.

    With ``capture`` on, the per-head attention weights of every layer are
    returned; a member layer's entry is the anchor's array itself.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError(f"expected a non-empty 1-D token sequence, got shape {ids.shape}")
    if ids.size > config.max_seq:
        raise CapacityError(f"sequence of {ids.size} tokens exceeds max_seq {config.max_seq}")
    _check_ids(config, ids)

    t = ids.size
    h_q = config.n_heads
    h_kv = config.n_kv_heads
    dh = config.d_head
    dm = config.d_model
    qd = h_q * dh
    kd = h_kv * dh
    causal = t * (t + 1) // 2
    scale = _attn_scale(config)
    roles = config.layer_roles()
    positions = np.arange(t)

    cache = KvCache(config)
    anchor_weights: dict[int, np.ndarray] = {}
    captured: list[np.ndarray] | None = [None] * config.n_layers if capture else None  # type: ignore[list-item]

    x = weights.embed[ids]
    for layer, lw in enumerate(weights.layers):
        role = roles[layer]
        parent = config.cla_parent(layer)
        keep = capture or role.is_anchor
        h = rms_norm_rows(x, lw.norm1, config.norm_eps)

        if role.is_member:
            v = (h @ lw.wv).reshape(t, h_kv, dh)
            for tok in range(t):
                cache.append(layer, None, v[tok])
            out = attend_shared(anchor_weights.get(role.span_id), expand_kv(v, h_q))
            if counter:
                counter.add(layer, "v_proj", 2 * t * dm * kd)
                counter.add(layer, "mix", 2 * h_q * dh * causal)
                counter.add_bytes(layer, "values", 4 * t * kd)
        elif parent is not None:
            q = rope_rotate_heads((h @ lw.wq).reshape(t, h_q, dh), positions, config.rope_theta)
            out = attend_cla(layer, parent, np.transpose(q, (1, 0, 2)), cache, scale,
                             keep_weights=keep)
            if counter:
                counter.add(layer, "q_proj", 2 * t * dm * qd + 2 * t * h_q * dh)
                counter.add(layer, "scores", 2 * h_q * dh * causal)
                counter.add(layer, "softmax", 3 * h_q * causal)
                counter.add(layer, "mix", 2 * h_q * dh * causal)
        else:
            q = rope_rotate_heads((h @ lw.wq).reshape(t, h_q, dh), positions, config.rope_theta)
            k = rope_rotate_heads((h @ lw.wk).reshape(t, h_kv, dh), positions, config.rope_theta)
            v = (h @ lw.wv).reshape(t, h_kv, dh)
            for tok in range(t):
                cache.append(layer, k[tok], v[tok])
            out = attend_standard(np.transpose(q, (1, 0, 2)), expand_kv(k, h_q),
                                  expand_kv(v, h_q), scale, keep_weights=keep)
            if role.is_anchor:
                anchor_weights[role.span_id] = _freeze(out.weights)
            if counter:
                counter.add(layer, "q_proj", 2 * t * dm * qd + 2 * t * h_q * dh)
                counter.add(layer, "k_proj", 2 * t * dm * kd + 2 * t * h_kv * dh)
                counter.add(layer, "v_proj", 2 * t * dm * kd)
                counter.add(layer, "scores", 2 * h_q * dh * causal)
                counter.add(layer, "softmax", 3 * h_q * causal)
                counter.add(layer, "mix", 2 * h_q * dh * causal)
                counter.add_bytes(layer, "keys", 4 * t * kd)
                counter.add_bytes(layer, "values", 4 * t * kd)

        x = x + out.hidden @ lw.wo
        h2 = rms_norm_rows(x, lw.norm2, config.norm_eps)
        x = x + (silu(h2 @ lw.w1) * (h2 @ lw.w3)) @ lw.w2
        if counter:
            counter.add(layer, "o_proj", 2 * t * qd * dm)
            counter.add(layer, "mlp", 6 * t * dm * config.d_ff)
        if captured is not None:
            captured[layer] = _freeze(out.weights)

    logits = rms_norm_rows(x, weights.final_norm, config.norm_eps) @ weights.lm_head
    if not np.all(np.isfinite(logits)):
        raise DomainError("logits contain non-finite values")
    return ForwardResult(logits=logits, attn_weights=captured)


def decode_step(session: DecodeSession, next_token_id: int) -> np.ndarray:
    """Append one token and return the next-token logits.

    Matches the last row of ``forward_full`` over the whole prefix to within
    1e-4 max-abs. Exactly one token is appended per layer; only layers whose
    role requires keys receive them.
    """
    config = session.config
    if session.tokens_seen >= config.max_seq:
        raise CapacityError(f"session is full at {session.tokens_seen} tokens")
    tok = int(next_token_id)
    _check_ids(config, np.asarray([tok]))

    h_q = config.n_heads
    h_kv = config.n_kv_heads
    dh = config.d_head
    dm = config.d_model
    qd = h_q * dh
    kd = h_kv * dh
    scale = _attn_scale(config)
    pos = session.tokens_seen
    cache = session.cache
    counter = session.counter
    cache.begin_step()

    def rotate(vec: np.ndarray, n_heads: int) -> np.ndarray:
        block = vec.reshape(1, n_heads, dh)
        return rope_rotate_heads(block, [pos], config.rope_theta)[0]

    x = session.weights.embed[tok]
    for layer, lw in enumerate(session.weights.layers):
        role = cache.roles[layer]
        parent = config.cla_parent(layer)
        h = rms_norm(x, lw.norm1, config.norm_eps)

        if role.is_member:
            v = (h @ lw.wv).reshape(h_kv, dh)
            cache.append(layer, None, v)
            rows = cache.anchor_rows(role.span_id, layer)
            hidden = attend_shared_step(rows, cache.values(layer))
            t = cache.token_count(layer)
            counter.add(layer, "v_proj", 2 * dm * kd)
            counter.add(layer, "mix", 2 * h_q * dh * t)
            counter.add_bytes(layer, "values", 4 * kd)
        elif parent is not None:
            q = rotate((h @ lw.wq).reshape(h_q, dh), h_q)
            cache.append(layer, None, None)
            hidden, _ = attend_standard_step(q, cache.keys(layer), cache.values(layer), scale)
            t = cache.token_count(layer)
            counter.add(layer, "q_proj", 2 * dm * qd + 2 * h_q * dh)
            counter.add(layer, "scores", 2 * h_q * dh * t)
            counter.add(layer, "softmax", 3 * h_q * t)
            counter.add(layer, "mix", 2 * h_q * dh * t)
        else:
            q = rotate((h @ lw.wq).reshape(h_q, dh), h_q)
            k = rotate((h @ lw.wk).reshape(h_kv, dh), h_kv)
            v = (h @ lw.wv).reshape(h_kv, dh)
            cache.append(layer, k, v)
            hidden, rows = attend_standard_step(q, cache.keys(layer), cache.values(layer), scale)
            if role.is_anchor:
                cache.publish_rows(role.span_id, rows)
            t = cache.token_count(layer)
            counter.add(layer, "q_proj", 2 * dm * qd + 2 * h_q * dh)
            counter.add(layer, "k_proj", 2 * dm * kd + 2 * h_kv * dh)
            counter.add(layer, "v_proj", 2 * dm * kd)
            counter.add(layer, "scores", 2 * h_q * dh * t)
            counter.add(layer, "softmax", 3 * h_q * t)
            counter.add(layer, "mix", 2 * h_q * dh * t)
            counter.add_bytes(layer, "keys", 4 * kd)
            counter.add_bytes(layer, "values", 4 * kd)

        x = x + hidden @ lw.wo
        h2 = rms_norm(x, lw.norm2, config.norm_eps)
        x = x + (silu(h2 @ lw.w1) * (h2 @ lw.w3)) @ lw.w2
        counter.add(layer, "o_proj", 2 * qd * dm)
        counter.add(layer, "mlp", 6 * dm * config.d_ff)

    logits = rms_norm(x, session.weights.final_norm, config.norm_eps) @ session.weights.lm_head
    if not np.all(np.isfinite(logits)):
        raise DomainError("logits contain non-finite values")
    session.tokens_seen += 1
    return logits


def _select_token(logits: np.ndarray, mode: str, temperature: float,
                  rng: np.random.Generator) -> int:
    if mode == "greedy":
        # argmax returns the first maximum, i.e. the lowest token id on ties.
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(p.size, p=p))


def generate(session: DecodeSession, prompt_ids, n_steps: int, mode: str = "greedy",
             temperature: float = 1.0, seed: int | None = None) -> list[int]:
    """Feed a prompt, then decode ``n_steps`` continuation tokens."""
    prompt = [int(i) for i in np.asarray(prompt_ids).ravel()]
    if not prompt:
        raise InputError("prompt must be non-empty")
    if mode not in ("greedy", "temperature"):
        raise InputError(f"unknown decoding mode {mode!r}")
    if mode == "temperature" and temperature <= 0:
        raise InputError("temperature must be positive")
    if session.tokens_seen + len(prompt) + n_steps > session.config.max_seq:
        raise CapacityError(
            f"prompt ({len(prompt)}) + steps ({n_steps}) exceeds max_seq {session.config.max_seq}"
        )
    rng = np.random.default_rng(session.rng_seed if seed is None else seed)
    logits = None
    for tok in prompt:
        logits = decode_step(session, tok)
    out: list[int] = []
    for _ in range(n_steps):
        nxt = _select_token(logits, mode, temperature, rng)
        out.append(nxt)
        logits = decode_step(session, nxt)
    return out


def perplexity(config: ModelConfig, weights: Weights, token_ids) -> float:
    """exp(mean NLL of each observed next token), log-sum-exp stabilized."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size < 2:
        raise InputError(f"perplexity needs at least 2 tokens, got {ids.size}")
    logits = forward_full(config, weights, ids).logits.astype(np.float64)
    rows = logits[:-1]
    rowmax = rows.max(axis=1, keepdims=True)
    lse = rowmax[:, 0] + np.log(np.exp(rows - rowmax).sum(axis=1))
    picked = rows[np.arange(ids.size - 1), ids[1:]]
    return float(np.exp(-(picked - lse).mean()))
