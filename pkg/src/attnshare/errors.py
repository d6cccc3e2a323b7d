"""Exception types shared across the engine, analysis, and service layers.

Every error carries a stable ``kind`` string that the HTTP layer serializes
and the CLI maps to an exit code, so failure modes stay machine-readable
end to end.
"""


class AttnShareError(Exception):
    """Base class for all library errors."""

    kind = "internal_error"


class ShapeError(AttnShareError):
    """Operands have incompatible or malformed shapes."""

    kind = "shape_error"


class DomainError(AttnShareError):
    """Input is outside the mathematical domain of the operation."""

    kind = "domain_error"


class UndefinedSimilarityError(DomainError):
    """Cosine similarity requested against a zero vector."""

    kind = "undefined_similarity"


class ConfigError(AttnShareError):
    """Model configuration violates a structural invariant."""

    kind = "config_error"


class PlanError(ConfigError):
    """Sharing plan has overlapping, unordered, or out-of-range spans."""

    kind = "plan_error"


class InputError(AttnShareError):
    """Token stream or request payload is invalid."""

    kind = "input_error"


class CapacityError(AttnShareError):
    """Sequence length exceeds the configured maximum."""

    kind = "capacity_error"


class SequencingError(AttnShareError):
    """A layer was evaluated before the data it depends on exists."""

    kind = "sequencing_error"


class CacheContractError(AttnShareError):
    """A cache append violated the layer's role contract."""

    kind = "cache_contract_error"


class NormalizationError(AttnShareError):
    """A normalizer is zero; the normalized quantity is undefined."""

    kind = "normalization_error"
