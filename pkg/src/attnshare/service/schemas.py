"""Request/response models for the HTTP service.

Models are referenced by filesystem path (the server owns the weight files);
token data travels inline so clients need no shared filesystem for inputs.
Each inference request can override the stored sharing plan and cross-layer
KV map without touching the weight files.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ..version import VERSION


class StrategyOverrides(BaseModel):
    # None keeps the manifest's setting; [] clears it.
    spans: list[str] | None = None  # "a:b" inclusive
    cla: list[str] | None = None  # "child:parent"
    cla_pairs: bool = False  # shorthand: every odd layer reads its predecessor


class Sample(BaseModel):
    id: str
    ids: list[int] = Field(min_length=1)


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    version: str = VERSION


class ToyRequest(StrategyOverrides):
    seed: int = 42
    scale: float = 0.02
    n_layers: int = 8
    n_heads: int = 4
    n_kv_heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    vocab_size: int = 256
    max_seq: int = 64
    rope_theta: float = 10000.0
    norm_eps: float = 1e-5


class ToyResponse(BaseModel):
    manifest_json: str  # exact manifest file text
    blob_b64: str  # exact blob bytes, base64
    blob_sha256: str
    config_sha256: str


class GenerateRequest(StrategyOverrides):
    model: str
    prompt: list[int] = Field(min_length=1)
    steps: int = Field(default=16, ge=0)
    mode: Literal["greedy", "temperature"] = "greedy"
    temperature: float = 1.0
    seed: int = 0


class GenerateResponse(BaseModel):
    tokens: list[int]
    config_sha256: str


class PerplexityRequest(StrategyOverrides):
    model: str
    samples: list[Sample] = Field(min_length=1)


class PerplexityRow(BaseModel):
    sample: str
    n_tokens: int
    perplexity: float


class PerplexityResponse(BaseModel):
    rows: list[PerplexityRow]
    mean_perplexity: float
    config_sha256: str


class SimilarityRequest(StrategyOverrides):
    model: str
    samples: list[Sample] = Field(min_length=1)
    head: int | None = None  # None = mean over heads
    sample_agg: Literal["mean_matrices", "mean_similarities"] = "mean_matrices"
    tau: float = 0.8


class Group(BaseModel):
    start: int
    end: int
    mean_similarity: float


class SimilarityResponse(BaseModel):
    surface: list[list[float]]
    groups: list[Group]
    config_sha256: str


class VarianceRequest(StrategyOverrides):
    model: str
    samples: list[Sample] = Field(min_length=1)


class VarianceResponse(BaseModel):
    variance: list[list[float]]  # [layer][head]
    wcv: list[list[float]]
    config_sha256: str


class BudgetRequest(BaseModel):
    model: str
    seq_lens: list[int] = Field(min_length=1)
    # "a:b+c:d" or "none"; None = baseline plus the manifest's plan if any
    plans: list[str] | None = None
    cla: list[str] | None = None
    cla_pairs: bool = False


class BudgetRow(BaseModel):
    seq_len: int
    plan: str
    flops_total: int
    flops_delta_pct: float
    kv_bytes_total: int
    kv_bytes_delta_pct: float
    softmax_flops: int
    key_bytes_total: int
    key_bytes_delta_pct: float


class BudgetResponse(BaseModel):
    rows: list[BudgetRow]
    config_sha256: str


class ParityRequest(StrategyOverrides):
    model: str
    seq_len: int = 32
    n_inputs: int = 4
    seed: int = 0
    tolerance: float = 1e-4


class ParityCheck(BaseModel):
    name: str
    ok: bool
    detail: str


class ParityResponse(BaseModel):
    ok: bool
    checks: list[ParityCheck]
    config_sha256: str


class ErrorBody(BaseModel):
    type: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorBody
