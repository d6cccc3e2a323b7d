"""Runtime cost counters the engine increments as it executes.

Counts follow the artifact's declared conventions (see ``accounting``), so a
prediction and an instrumented run can be compared with integer equality.
A counter belongs to one run or one decode session; snapshots taken before
and after a step can be subtracted to get per-step deltas.
"""

from __future__ import annotations

FLOP_CATEGORIES = ("q_proj", "k_proj", "v_proj", "scores", "softmax", "mix", "o_proj", "mlp")
BYTE_CATEGORIES = ("keys", "values")


class OpCounter:
    def __init__(self, n_layers: int):
        self.n_layers = n_layers
        self.flops = [{cat: 0 for cat in FLOP_CATEGORIES} for _ in range(n_layers)]
        self.kv_bytes = [{cat: 0 for cat in BYTE_CATEGORIES} for _ in range(n_layers)]

    def add(self, layer: int, category: str, n: int) -> None:
        self.flops[layer][category] += n

    def add_bytes(self, layer: int, category: str, n: int) -> None:
        self.kv_bytes[layer][category] += n

    def total_flops(self) -> int:
        return sum(sum(per.values()) for per in self.flops)

    def total_bytes(self) -> int:
        return sum(sum(per.values()) for per in self.kv_bytes)

    def snapshot(self) -> dict:
        """Plain-data copy: {'flops': [...], 'kv_bytes': [...]}."""
        return {
            "flops": [dict(per) for per in self.flops],
            "kv_bytes": [dict(per) for per in self.kv_bytes],
        }


def diff_snapshots(after: dict, before: dict) -> dict:
    """Per-category difference of two snapshots (for per-step reconciliation)."""
    out = {"flops": [], "kv_bytes": []}
    for kind in ("flops", "kv_bytes"):
        for layer_after, layer_before in zip(after[kind], before[kind]):
            out[kind].append({cat: layer_after[cat] - layer_before[cat] for cat in layer_after})
    return out
