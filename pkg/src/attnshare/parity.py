"""Self-checks tying the engine's equivalence and accounting claims together.

Four checks run against a loaded model:

1. degenerate_bitwise: a plan of singleton spans on every eligible layer
   must produce logits bitwise identical to an empty plan;
2. decode_matches_full: token-by-token decoding must match the one-shot
   forward pass within a small float tolerance;
3. accounting_full: instrumented counters of a full forward pass must equal
   the closed-form prediction exactly;
4. accounting_decode: every decode step's counter delta must equal the
   per-step prediction exactly, and the steps must sum to the full-pass
   prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accounting import MODE_DECODE, MODE_FULL, predict_costs, reconcile
from .config import ModelConfig
from .counters import OpCounter, diff_snapshots
from .errors import InputError
from .model import decode_step, forward_full, new_session
from .plan import SharingPlan
from .weights import Weights


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def singleton_plan(config: ModelConfig) -> SharingPlan:
    """A one-layer span on every layer not bound to a cross-layer KV pair."""
    bound = {layer for pair in config.cla_map for layer in pair}
    return SharingPlan(tuple((l, l) for l in range(config.n_layers) if l not in bound))


def _random_inputs(config: ModelConfig, n_inputs: int, seq_len: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, config.vocab_size, size=(n_inputs, seq_len), dtype=np.int64)


def _check_degenerate(config, weights, inputs) -> CheckResult:
    with_plan = config.with_plan(singleton_plan(config))
    without = config.with_plan(SharingPlan(()))
    for ids in inputs:
        a = forward_full(with_plan, weights, ids).logits
        b = forward_full(without, weights, ids).logits
        if not np.array_equal(a, b):
            worst = float(np.abs(a - b).max())
            return CheckResult("degenerate_bitwise", False,
                               f"logits differ, max_abs_diff={worst!r}")
    return CheckResult("degenerate_bitwise", True,
                       f"bitwise equal over {len(inputs)} inputs")


def _check_decode(config, weights, ids, tolerance) -> CheckResult:
    full = forward_full(config, weights, ids).logits
    session = new_session(config, weights)
    last = None
    for tok in ids:
        last = decode_step(session, int(tok))
    worst = float(np.abs(last - full[-1]).max())
    ok = worst <= tolerance
    return CheckResult("decode_matches_full", ok,
                       f"max_abs_diff={worst!r} tolerance={tolerance!r}")


def _mismatch_detail(result) -> str:
    first = result.mismatches[0]
    return (f"{len(result.mismatches)} categories differ; first: layer {first.layer} "
            f"{first.kind}.{first.category} predicted={first.predicted} observed={first.observed}")


def _check_accounting_full(config, weights, ids) -> CheckResult:
    counter = OpCounter(config.n_layers)
    forward_full(config, weights, ids, counter=counter)
    result = reconcile(predict_costs(config, len(ids), MODE_FULL), counter)
    if result.ok:
        return CheckResult("accounting_full", True, f"exact at T={len(ids)}")
    return CheckResult("accounting_full", False, _mismatch_detail(result))


def _check_accounting_decode(config, weights, ids) -> CheckResult:
    session = new_session(config, weights)
    before = session.counter.snapshot()
    for t, tok in enumerate(ids, start=1):
        decode_step(session, int(tok))
        after = session.counter.snapshot()
        result = reconcile(predict_costs(config, t, MODE_DECODE), diff_snapshots(after, before))
        if not result.ok:
            return CheckResult("accounting_decode", False,
                               f"step {t}: {_mismatch_detail(result)}")
        before = after
    total = reconcile(predict_costs(config, len(ids), MODE_FULL), session.counter)
    if not total.ok:
        return CheckResult("accounting_decode", False,
                           f"step sum vs full prediction: {_mismatch_detail(total)}")
    return CheckResult("accounting_decode", True,
                       f"exact at every step and in total over {len(ids)} steps")


def run_parity_checks(config: ModelConfig, weights: Weights, seq_len: int = 32,
                      n_inputs: int = 4, seed: int = 0,
                      tolerance: float = 1e-4) -> list[CheckResult]:
    if seq_len < 1 or seq_len > config.max_seq:
        raise InputError(f"seq_len must be in 1..{config.max_seq}, got {seq_len}")
    if n_inputs < 1:
        raise InputError(f"n_inputs must be >= 1, got {n_inputs}")
    inputs = _random_inputs(config, n_inputs, seq_len, seed)
    return [
        _check_degenerate(config, weights, inputs),
        _check_decode(config, weights, inputs[0], tolerance),
        _check_accounting_full(config, weights, inputs[0]),
        _check_accounting_decode(config, weights, inputs[0]),
    ]
