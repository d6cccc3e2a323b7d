"""Layer spans for attention-weight sharing and the per-layer roles they imply.

A plan is an ordered set of disjoint inclusive layer spans. The first layer
of each span is the anchor: the only layer in the span that computes scores
and softmax. Every other span layer is a member and reuses the anchor's
attention weights. A singleton span has an anchor and no members, which by
construction behaves exactly like no sharing at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PlanError

STANDARD = "standard"
ANCHOR = "anchor"
MEMBER = "member"


@dataclass(frozen=True)
class SharingPlan:
    """Disjoint, ascending, inclusive (start, end) layer spans."""

    spans: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        prev_end = -1
        for start, end in self.spans:
            if start < 0 or end < start:
                raise PlanError(f"bad span ({start}, {end}): need 0 <= start <= end")
            if start <= prev_end:
                raise PlanError(f"span ({start}, {end}) overlaps or is out of order")
            prev_end = end

    @classmethod
    def from_spans(cls, spans) -> "SharingPlan":
        """Build a plan from any iterable of (start, end) pairs, sorting first."""
        normalized = sorted((int(a), int(b)) for a, b in spans)
        return cls(tuple(normalized))

    @property
    def is_empty(self) -> bool:
        return not self.spans

    def validate_for(self, n_layers: int) -> None:
        if self.spans and self.spans[-1][1] >= n_layers:
            raise PlanError(
                f"span {self.spans[-1]} exceeds layer range 0..{n_layers - 1}"
            )

    def span_layers(self) -> set[int]:
        out: set[int] = set()
        for start, end in self.spans:
            out.update(range(start, end + 1))
        return out

    def member_count(self) -> int:
        """Total layers that reuse another layer's weights (span length - 1 each)."""
        return sum(end - start for start, end in self.spans)


@dataclass(frozen=True)
class LayerRole:
    """What a layer does inside a plan: standard, span anchor, or span member."""

    kind: str
    span_id: int | None = None
    anchor: int | None = None

    @property
    def is_anchor(self) -> bool:
        return self.kind == ANCHOR

    @property
    def is_member(self) -> bool:
        return self.kind == MEMBER

    @property
    def stores_keys(self) -> bool:
        # Members recompute nothing that needs keys; everyone else caches them.
        return self.kind != MEMBER


_STANDARD_ROLE = LayerRole(STANDARD)


def plan_roles(plan: SharingPlan, n_layers: int) -> list[LayerRole]:
    """Expand a plan into one role per layer."""
    plan.validate_for(n_layers)
    roles = [_STANDARD_ROLE] * n_layers
    for span_id, (start, end) in enumerate(plan.spans):
        roles[start] = LayerRole(ANCHOR, span_id=span_id, anchor=start)
        for layer in range(start + 1, end + 1):
            roles[layer] = LayerRole(MEMBER, span_id=span_id, anchor=start)
    return roles


def parse_span(text: str) -> tuple[int, int]:
    """Parse the inclusive 'a:b' span syntax used by the CLI and service."""
    parts = text.split(":")
    if len(parts) != 2:
        raise PlanError(f"span {text!r} is not of the form 'a:b'")
    try:
        start, end = int(parts[0]), int(parts[1])
    except ValueError:
        raise PlanError(f"span {text!r} has non-integer bounds") from None
    if start < 0 or end < start:
        raise PlanError(f"span {text!r}: need 0 <= a <= b")
    return start, end


def parse_plan(span_texts) -> SharingPlan:
    return SharingPlan.from_spans(parse_span(t) for t in span_texts)


def format_plan(plan: SharingPlan) -> str:
    """Render a plan as 'a:b+c:d', or 'none' when empty."""
    if plan.is_empty:
        return "none"
    return "+".join(f"{a}:{b}" for a, b in plan.spans)


def parse_plan_text(text: str) -> SharingPlan:
    """Inverse of ``format_plan``."""
    if text == "none":
        return SharingPlan(())
    return parse_plan(text.split("+"))
