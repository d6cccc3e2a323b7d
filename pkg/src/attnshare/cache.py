"""Role-aware KV cache for incremental decoding.

Storage per layer follows the layer's role:

* standard / anchor layers hold keys and values;
* span members hold values only (their attention weights come from the
  anchor, so keys would never be read);
* cross-layer children hold neither and alias the parent layer's entries.

Anchor layers additionally park their current decode step's attention rows
in ``step_rows`` so same-step members can consume them; the rows are thrown
away when the next step begins.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import CacheContractError, CapacityError, SequencingError


class KvCache:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.roles = config.layer_roles()
        shape = (config.max_seq, config.n_kv_heads, config.d_head)
        self._keys: list[np.ndarray | None] = []
        self._values: list[np.ndarray | None] = []
        self._counts = [0] * config.n_layers
        self._is_child = [config.cla_parent(layer) is not None for layer in range(config.n_layers)]
        for layer, role in enumerate(self.roles):
            if self._is_child[layer]:
                self._keys.append(None)
                self._values.append(None)
            elif role.is_member:
                self._keys.append(None)
                self._values.append(np.zeros(shape, dtype=np.float32))
            else:
                self._keys.append(np.zeros(shape, dtype=np.float32))
                self._values.append(np.zeros(shape, dtype=np.float32))
        # Anchor attention rows for the step in flight, keyed by span id.
        self.step_rows: dict[int, np.ndarray] = {}

    def begin_step(self) -> None:
        self.step_rows.clear()

    def publish_rows(self, span_id: int, rows: np.ndarray) -> None:
        self.step_rows[span_id] = rows

    def anchor_rows(self, span_id: int, member_layer: int) -> np.ndarray:
        rows = self.step_rows.get(span_id)
        if rows is None:
            raise SequencingError(
                f"member layer {member_layer} ran before its span anchor published weights"
            )
        return rows

    def append(self, layer: int, k_new: np.ndarray | None, v_new: np.ndarray | None) -> None:
        """Add one token's projections to a layer, enforcing the role contract."""
        role = self.roles[layer]
        if self._is_child[layer]:
            if k_new is not None or v_new is not None:
                raise CacheContractError(
                    f"layer {layer} aliases its cla parent and stores nothing"
                )
            return
        if role.is_member:
            if k_new is not None:
                raise CacheContractError(f"member layer {layer} must not store keys")
        elif k_new is None:
            raise CacheContractError(f"layer {layer} requires keys")
        if v_new is None:
            raise CacheContractError(f"layer {layer} requires values")
        t = self._counts[layer]
        if t >= self.config.max_seq:
            raise CapacityError(f"layer {layer} cache is full at {t} tokens")
        if k_new is not None:
            self._keys[layer][t] = k_new
        self._values[layer][t] = v_new
        self._counts[layer] = t + 1

    def _storage_layer(self, layer: int) -> int:
        parent = self.config.cla_parent(layer)
        return parent if parent is not None else layer

    def token_count(self, layer: int) -> int:
        return self._counts[self._storage_layer(layer)]

    def keys(self, layer: int) -> np.ndarray:
        """Cached keys for a layer, [t, n_kv_heads, d_head]; cla children alias."""
        src = self._storage_layer(layer)
        stored = self._keys[src]
        if stored is None:
            raise SequencingError(f"layer {layer} has no key storage (member layer)")
        return stored[: self._counts[src]]

    def values(self, layer: int) -> np.ndarray:
        src = self._storage_layer(layer)
        stored = self._values[src]
        if stored is None:
            raise SequencingError(f"layer {layer} has no value storage")
        return stored[: self._counts[src]]

    # --- cache accounting ----------------------------------------------------

    def key_entries(self) -> int:
        """Scalars held in key slots across all layers."""
        per_token = self.config.n_kv_heads * self.config.d_head
        return sum(
            self._counts[layer] * per_token
            for layer in range(self.config.n_layers)
            if self._keys[layer] is not None
        )

    def value_entries(self) -> int:
        per_token = self.config.n_kv_heads * self.config.d_head
        return sum(
            self._counts[layer] * per_token
            for layer in range(self.config.n_layers)
            if self._values[layer] is not None
        )

    def key_bytes(self) -> int:
        return 4 * self.key_entries()

    def value_bytes(self) -> int:
        return 4 * self.value_entries()
