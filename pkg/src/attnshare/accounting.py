"""Closed-form FLOP and KV-byte cost model, reconcilable against runtime counters.

Counting conventions are declared constants of this artifact:

* a matmul of (m x k) by (k x n) costs 2mkn flops;
* causal score and mix terms count T(T+1)/2 attended positions;
* softmax costs 3 flops per unmasked element (exp, sum-add, divide);
* rotary rotation costs 4 flops per rotated pair and is counted under the
  q_proj / k_proj categories (member layers rotate nothing by construction);
* the MLP counts its three matmuls, 6 * T * d_model * d_ff;
* norms, residual adds, embedding lookup, and the LM head are not counted;
* KV bytes are 4 per f32 cache entry.

``predict_costs`` and the engine's ``OpCounter`` implement the same formulas
at different ends (closed form vs call sites), so ``reconcile`` demands exact
integer equality per layer and category.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig
from .counters import BYTE_CATEGORIES, FLOP_CATEGORIES
from .errors import CapacityError, InputError
from .plan import SharingPlan, format_plan

MODE_FULL = "full_forward"
MODE_DECODE = "decode_step"

SAVINGS_COLUMNS = (
    "seq_len",
    "plan",
    "flops_total",
    "flops_delta_pct",
    "kv_bytes_total",
    "kv_bytes_delta_pct",
    "softmax_flops",
    "key_bytes_total",
    "key_bytes_delta_pct",
)


@dataclass(frozen=True)
class LayerCost:
    flops: dict[str, int]
    kv_bytes: dict[str, int]

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.kv_bytes.values())


@dataclass(frozen=True)
class BaselineDelta:
    """Totals of the same prediction under an empty sharing plan."""

    flops: int
    kv_bytes: int
    key_bytes: int
    flops_delta_pct: float
    kv_bytes_delta_pct: float
    key_bytes_delta_pct: float


@dataclass(frozen=True)
class CostReport:
    mode: str
    seq_len: int
    layers: tuple[LayerCost, ...]
    baseline: BaselineDelta | None = None

    @property
    def total_flops(self) -> int:
        return sum(layer.total_flops for layer in self.layers)

    @property
    def total_bytes(self) -> int:
        return sum(layer.total_bytes for layer in self.layers)

    def flops_by_category(self) -> dict[str, int]:
        return {cat: sum(layer.flops[cat] for layer in self.layers) for cat in FLOP_CATEGORIES}

    def bytes_by_category(self) -> dict[str, int]:
        return {cat: sum(layer.kv_bytes[cat] for layer in self.layers) for cat in BYTE_CATEGORIES}

    @property
    def key_bytes(self) -> int:
        return self.bytes_by_category()["keys"]

    def snapshot(self) -> dict:
        """Same plain-data layout as ``OpCounter.snapshot``."""
        return {
            "flops": [dict(layer.flops) for layer in self.layers],
            "kv_bytes": [dict(layer.kv_bytes) for layer in self.layers],
        }


@dataclass(frozen=True)
class Mismatch:
    layer: int
    kind: str  # "flops" or "kv_bytes"
    category: str
    predicted: int
    observed: int


@dataclass(frozen=True)
class ReconcileResult:
    mismatches: tuple[Mismatch, ...]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def _zeros() -> tuple[dict[str, int], dict[str, int]]:
    return {cat: 0 for cat in FLOP_CATEGORIES}, {cat: 0 for cat in BYTE_CATEGORIES}


def _layer_costs(config: ModelConfig, seq_len: int, mode: str) -> tuple[LayerCost, ...]:
    h_q = config.n_heads
    h_kv = config.n_kv_heads
    dh = config.d_head
    dm = config.d_model
    qd = h_q * dh
    kd = h_kv * dh
    roles = config.layer_roles()

    if mode == MODE_FULL:
        t = seq_len
        attended = seq_len * (seq_len + 1) // 2
        appended = seq_len  # tokens appended to the cache
    else:
        t = 1  # one new token is projected
        attended = seq_len  # its attention row covers the whole cache
        appended = 1

    out = []
    for layer in range(config.n_layers):
        role = roles[layer]
        flops, kv_bytes = _zeros()
        if role.is_member:
            flops["v_proj"] = 2 * t * dm * kd
            flops["mix"] = 2 * h_q * dh * attended
            kv_bytes["values"] = 4 * appended * kd
        elif config.cla_parent(layer) is not None:
            flops["q_proj"] = 2 * t * dm * qd + 2 * t * h_q * dh
            flops["scores"] = 2 * h_q * dh * attended
            flops["softmax"] = 3 * h_q * attended
            flops["mix"] = 2 * h_q * dh * attended
        else:
            flops["q_proj"] = 2 * t * dm * qd + 2 * t * h_q * dh
            flops["k_proj"] = 2 * t * dm * kd + 2 * t * h_kv * dh
            flops["v_proj"] = 2 * t * dm * kd
            flops["scores"] = 2 * h_q * dh * attended
            flops["softmax"] = 3 * h_q * attended
            flops["mix"] = 2 * h_q * dh * attended
            kv_bytes["keys"] = 4 * appended * kd
            kv_bytes["values"] = 4 * appended * kd
        flops["o_proj"] = 2 * t * qd * dm
        flops["mlp"] = 6 * t * dm * config.d_ff
        out.append(LayerCost(flops=flops, kv_bytes=kv_bytes))
    return tuple(out)


def _pct(value: int, base: int) -> float:
    return 100.0 * (value - base) / base


def predict_costs(config: ModelConfig, seq_len: int, mode: str = MODE_FULL) -> CostReport:
    """Predict per-layer costs for a full forward pass or one decode step.

    For ``decode_step`` mode, ``seq_len`` is the cache occupancy after the
    step's token is appended (1 for the very first token). The baseline block
    reports the same prediction under an empty sharing plan; any cross-layer
    KV map stays in place, so the deltas isolate weight sharing.
    """
    if mode not in (MODE_FULL, MODE_DECODE):
        raise InputError(f"unknown cost mode {mode!r}")
    if seq_len < 1:
        raise InputError(f"seq_len must be >= 1, got {seq_len}")
    if seq_len > config.max_seq:
        raise CapacityError(f"seq_len {seq_len} exceeds max_seq {config.max_seq}")

    layers = _layer_costs(config, seq_len, mode)
    report = CostReport(mode=mode, seq_len=seq_len, layers=layers)

    base_layers = _layer_costs(config.with_plan(SharingPlan(())), seq_len, mode)
    base = CostReport(mode=mode, seq_len=seq_len, layers=base_layers)
    delta = BaselineDelta(
        flops=base.total_flops,
        kv_bytes=base.total_bytes,
        key_bytes=base.key_bytes,
        flops_delta_pct=_pct(report.total_flops, base.total_flops),
        kv_bytes_delta_pct=_pct(report.total_bytes, base.total_bytes),
        key_bytes_delta_pct=_pct(report.key_bytes, base.key_bytes),
    )
    return CostReport(mode=mode, seq_len=seq_len, layers=layers, baseline=delta)


def reconcile(report: CostReport, counters) -> ReconcileResult:
    """Integer-exact comparison of a prediction with observed counters.

    ``counters`` may be an ``OpCounter`` or a snapshot dict (e.g. a per-step
    delta from ``diff_snapshots``). A mismatch is data, not an error.
    """
    observed = counters.snapshot() if hasattr(counters, "snapshot") else counters
    predicted = report.snapshot()
    if len(observed["flops"]) != len(predicted["flops"]):
        raise InputError(
            f"layer count mismatch: predicted {len(predicted['flops'])}, "
            f"observed {len(observed['flops'])}"
        )
    mismatches = []
    for kind, categories in (("flops", FLOP_CATEGORIES), ("kv_bytes", BYTE_CATEGORIES)):
        for layer, (pred, obs) in enumerate(zip(predicted[kind], observed[kind])):
            for cat in categories:
                if pred[cat] != obs[cat]:
                    mismatches.append(Mismatch(layer=layer, kind=kind, category=cat,
                                               predicted=pred[cat], observed=obs[cat]))
    return ReconcileResult(mismatches=tuple(mismatches))


def savings_table(config: ModelConfig, seq_lens, plans) -> list[dict]:
    """One row per (seq_len, plan): totals and percent deltas vs the empty plan."""
    rows = []
    for seq_len in seq_lens:
        for plan in plans:
            report = predict_costs(config.with_plan(plan), seq_len, MODE_FULL)
            rows.append({
                "seq_len": int(seq_len),
                "plan": format_plan(plan),
                "flops_total": report.total_flops,
                "flops_delta_pct": report.baseline.flops_delta_pct,
                "kv_bytes_total": report.total_bytes,
                "kv_bytes_delta_pct": report.baseline.kv_bytes_delta_pct,
                "softmax_flops": report.flops_by_category()["softmax"],
                "key_bytes_total": report.key_bytes,
                "key_bytes_delta_pct": report.baseline.key_bytes_delta_pct,
            })
    return rows
