"""Model configuration: architecture hyperparameters plus the sharing strategy.

Two cross-layer mechanisms can be configured:

* ``sharing_plan``: spans of layers reusing one anchor's attention weights;
* ``cla_map``: (child, parent) pairs where the child attends with its own
  queries against the parent's cached keys and values.

The two must not touch the same layers; that is rejected here rather than
deep in the engine so cache semantics stay unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .plan import SharingPlan, plan_roles

TOY_SEED = 42
TOY_INIT_SCALE = 0.02


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int
    n_heads: int
    n_kv_heads: int
    d_model: int
    d_head: int
    d_ff: int
    vocab_size: int
    max_seq: int
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5
    sharing_plan: SharingPlan = field(default_factory=SharingPlan)
    cla_map: tuple[tuple[int, int], ...] = ()  # (child, parent), sorted by child

    def __post_init__(self):
        if min(self.n_layers, self.n_heads, self.n_kv_heads, self.d_model,
               self.d_head, self.d_ff, self.vocab_size, self.max_seq) <= 0:
            raise ConfigError("all architecture dimensions must be positive")
        if self.d_model != self.n_heads * self.d_head:
            raise ConfigError(
                f"d_model ({self.d_model}) != n_heads*d_head ({self.n_heads}*{self.d_head})"
            )
        if self.n_heads % self.n_kv_heads != 0:
            raise ConfigError(
                f"n_heads ({self.n_heads}) not divisible by n_kv_heads ({self.n_kv_heads})"
            )
        if self.d_head % 2 != 0:
            raise ConfigError(f"d_head must be even for rotary embedding, got {self.d_head}")
        if self.norm_eps <= 0 or self.rope_theta <= 0:
            raise ConfigError("norm_eps and rope_theta must be positive")
        self.sharing_plan.validate_for(self.n_layers)
        self._validate_cla()

    def _validate_cla(self):
        span_layers = self.sharing_plan.span_layers()
        children = set()
        for child, parent in self.cla_map:
            if not (0 <= parent < child < self.n_layers):
                raise ConfigError(f"cla pair ({child}, {parent}): need 0 <= parent < child < n_layers")
            if child in children:
                raise ConfigError(f"layer {child} appears twice as a cla child")
            children.add(child)
        for child, parent in self.cla_map:
            if parent in children:
                raise ConfigError(f"cla parent {parent} is itself a child; chains are not allowed")
            if child in span_layers or parent in span_layers:
                raise ConfigError(
                    f"cla pair ({child}, {parent}) overlaps a sharing span; the two strategies "
                    "may not touch the same layer"
                )
        if tuple(sorted(self.cla_map)) != self.cla_map:
            raise ConfigError("cla_map must be sorted by child layer")

    # --- derived views -----------------------------------------------------

    @property
    def group_size(self) -> int:
        """Query heads per KV head (1 for MHA, n_heads for MQA)."""
        return self.n_heads // self.n_kv_heads

    def layer_roles(self):
        return plan_roles(self.sharing_plan, self.n_layers)

    def cla_parent(self, layer: int) -> int | None:
        for child, parent in self.cla_map:
            if child == layer:
                return parent
        return None

    def with_plan(self, plan: SharingPlan) -> "ModelConfig":
        return replace(self, sharing_plan=plan)

    # --- manifest (de)serialization ----------------------------------------

    def to_manifest_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "n_kv_heads": self.n_kv_heads,
            "d_model": self.d_model,
            "d_head": self.d_head,
            "d_ff": self.d_ff,
            "vocab_size": self.vocab_size,
            "max_seq": self.max_seq,
            "rope_theta": self.rope_theta,
            "norm_eps": self.norm_eps,
            "sharing_plan": [list(span) for span in self.sharing_plan.spans],
            "cla_map": {str(child): parent for child, parent in self.cla_map},
        }

    @classmethod
    def from_manifest_dict(cls, d: dict) -> "ModelConfig":
        try:
            plan = SharingPlan.from_spans(d.get("sharing_plan", []))
            cla = tuple(sorted((int(c), int(p)) for c, p in dict(d.get("cla_map", {})).items()))
            return cls(
                n_layers=int(d["n_layers"]),
                n_heads=int(d["n_heads"]),
                n_kv_heads=int(d["n_kv_heads"]),
                d_model=int(d["d_model"]),
                d_head=int(d["d_head"]),
                d_ff=int(d["d_ff"]),
                vocab_size=int(d["vocab_size"]),
                max_seq=int(d["max_seq"]),
                rope_theta=float(d.get("rope_theta", 10000.0)),
                norm_eps=float(d.get("norm_eps", 1e-5)),
                sharing_plan=plan,
                cla_map=cla,
            )
        except KeyError as exc:
            raise ConfigError(f"manifest config missing field {exc}") from None


def default_cla_pairs(n_layers: int) -> tuple[tuple[int, int], ...]:
    """Pairwise map: each odd layer reads its even predecessor's K/V."""
    return tuple((layer, layer - 1) for layer in range(1, n_layers, 2))


def parse_cla(texts) -> tuple[tuple[int, int], ...]:
    """Parse 'child:parent' pair syntax into a sorted cla map."""
    pairs = []
    for text in texts:
        parts = str(text).split(":")
        if len(parts) != 2:
            raise ConfigError(f"cla pair {text!r} is not of the form 'child:parent'")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise ConfigError(f"cla pair {text!r} has non-integer layers") from None
    return tuple(sorted(pairs))


def toy_config(
    n_layers: int = 8,
    n_heads: int = 4,
    n_kv_heads: int = 4,
    d_model: int = 64,
    d_ff: int = 128,
    vocab_size: int = 256,
    max_seq: int = 64,
    rope_theta: float = 10000.0,
    norm_eps: float = 1e-5,
    sharing_plan: SharingPlan | None = None,
    cla_map: tuple[tuple[int, int], ...] = (),
) -> ModelConfig:
    """The documented test-scale configuration (8 layers, d_model 64)."""
    return ModelConfig(
        n_layers=n_layers,
        n_heads=n_heads,
        n_kv_heads=n_kv_heads,
        d_model=d_model,
        d_head=d_model // n_heads,
        d_ff=d_ff,
        vocab_size=vocab_size,
        max_seq=max_seq,
        rope_theta=rope_theta,
        norm_eps=norm_eps,
        sharing_plan=sharing_plan or SharingPlan(),
        cla_map=cla_map,
    )
