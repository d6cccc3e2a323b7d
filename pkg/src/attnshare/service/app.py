"""HTTP surface over the engine: pure compute, no stored state beyond a
small weight-file cache keyed by path and mtime.

All domain failures map to one JSON envelope, ``{"error": {"type", "message"}}``,
where ``type`` is the error kind string (``io_error`` for filesystem problems,
``usage_error`` for malformed requests); clients dispatch on it.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..analysis import capture_records, segment_groups, similarity_surface, variance_surface, \
    weighted_cumulative_variance
from ..config import ModelConfig, default_cla_pairs, parse_cla
from ..errors import AttnShareError
from ..model import generate, new_session, perplexity
from ..parity import run_parity_checks
from ..plan import SharingPlan, parse_plan, parse_plan_text
from ..accounting import savings_table
from ..reports import config_digest, plain
from ..version import VERSION
from ..weights import MANIFEST_NAME, build_manifest, load_model, manifest_text, random_weights
from . import schemas as s

MODEL_CACHE_SIZE = 4


def _cached_model(state, path: str):
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    stat = p.stat()  # FileNotFoundError -> io_error envelope
    key = (str(p.resolve()), stat.st_mtime_ns, stat.st_size)
    if key not in state.models:
        if len(state.models) >= MODEL_CACHE_SIZE:
            state.models.pop(next(iter(state.models)))
        state.models[key] = load_model(p)
    return state.models[key]


def _apply_overrides(config: ModelConfig, ov: s.StrategyOverrides) -> ModelConfig:
    if ov.spans is not None:
        config = config.with_plan(parse_plan(ov.spans))
    if ov.cla_pairs:
        config = replace(config, cla_map=default_cla_pairs(config.n_layers))
    elif ov.cla is not None:
        config = replace(config, cla_map=parse_cla(ov.cla))
    return config


def _sorted_samples(samples: list[s.Sample]) -> list[tuple[str, list[int]]]:
    return [(smp.id, smp.ids) for smp in sorted(samples, key=lambda x: x.id)]


def create_app() -> FastAPI:
    app = FastAPI(title="attnshare", version=VERSION)
    app.state.models = {}

    @app.exception_handler(AttnShareError)
    async def _domain_error(request: Request, exc: AttnShareError):
        return JSONResponse(status_code=400,
                            content={"error": {"type": exc.kind, "message": str(exc)}})

    @app.exception_handler(FileNotFoundError)
    async def _not_found(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404,
                            content={"error": {"type": "io_error", "message": str(exc)}})

    @app.exception_handler(OSError)
    async def _io_error(request: Request, exc: OSError):
        return JSONResponse(status_code=400,
                            content={"error": {"type": "io_error", "message": str(exc)}})

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        message = "; ".join(
            f"{'.'.join(str(part) for part in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        return JSONResponse(status_code=422,
                            content={"error": {"type": "usage_error", "message": message}})

    @app.get("/health", response_model=s.HealthResponse)
    async def health():
        return s.HealthResponse()

    @app.post("/toy", response_model=s.ToyResponse)
    async def make_toy(req: s.ToyRequest):
        plan = parse_plan(req.spans or [])
        if req.cla_pairs:
            cla = default_cla_pairs(req.n_layers)
        else:
            cla = parse_cla(req.cla or [])
        config = ModelConfig(
            n_layers=req.n_layers,
            n_heads=req.n_heads,
            n_kv_heads=req.n_kv_heads,
            d_model=req.d_model,
            d_head=req.d_model // req.n_heads,
            d_ff=req.d_ff,
            vocab_size=req.vocab_size,
            max_seq=req.max_seq,
            rope_theta=req.rope_theta,
            norm_eps=req.norm_eps,
            sharing_plan=plan,
            cla_map=cla,
        )
        weights = random_weights(config, seed=req.seed, scale=req.scale)
        manifest, blob = build_manifest(config, weights)
        return s.ToyResponse(
            manifest_json=manifest_text(manifest),
            blob_b64=base64.b64encode(blob).decode("ascii"),
            blob_sha256=hashlib.sha256(blob).hexdigest(),
            config_sha256=config_digest(config),
        )

    @app.post("/generate", response_model=s.GenerateResponse)
    async def generate_tokens(req: s.GenerateRequest):
        config, weights = _cached_model(app.state, req.model)
        config = _apply_overrides(config, req)
        session = new_session(config, weights, rng_seed=req.seed)
        tokens = generate(session, req.prompt, req.steps,
                          mode=req.mode, temperature=req.temperature)
        return s.GenerateResponse(tokens=tokens, config_sha256=config_digest(config))

    @app.post("/perplexity", response_model=s.PerplexityResponse)
    async def compute_perplexity(req: s.PerplexityRequest):
        config, weights = _cached_model(app.state, req.model)
        config = _apply_overrides(config, req)
        rows = []
        for sample_id, ids in _sorted_samples(req.samples):
            rows.append(s.PerplexityRow(
                sample=sample_id,
                n_tokens=len(ids),
                perplexity=perplexity(config, weights, ids),
            ))
        mean = sum(row.perplexity for row in rows) / len(rows)
        return s.PerplexityResponse(rows=rows, mean_perplexity=mean,
                                    config_sha256=config_digest(config))

    @app.post("/similarity", response_model=s.SimilarityResponse)
    async def compute_similarity(req: s.SimilarityRequest):
        config, weights = _cached_model(app.state, req.model)
        config = _apply_overrides(config, req)
        records = capture_records(config, weights, _sorted_samples(req.samples))
        head_agg = "mean" if req.head is None else ("per_head", req.head)
        surface = similarity_surface(records, head_agg=head_agg, sample_agg=req.sample_agg)
        groups = segment_groups(surface, tau=req.tau)
        return s.SimilarityResponse(
            surface=plain(surface),
            groups=[s.Group(start=g.start, end=g.end, mean_similarity=g.mean_similarity)
                    for g in groups],
            config_sha256=config_digest(config),
        )

    @app.post("/variance", response_model=s.VarianceResponse)
    async def compute_variance(req: s.VarianceRequest):
        config, weights = _cached_model(app.state, req.model)
        config = _apply_overrides(config, req)
        records = capture_records(config, weights, _sorted_samples(req.samples))
        vs = variance_surface(records)
        wcv = weighted_cumulative_variance(vs)
        return s.VarianceResponse(variance=plain(vs), wcv=plain(wcv),
                                  config_sha256=config_digest(config))

    @app.post("/budget", response_model=s.BudgetResponse)
    async def compute_budget(req: s.BudgetRequest):
        config, _ = _cached_model(app.state, req.model)
        config = _apply_overrides(config, s.StrategyOverrides(cla=req.cla, cla_pairs=req.cla_pairs))
        if req.plans is None:
            plans = [SharingPlan(())]
            if not config.sharing_plan.is_empty:
                plans.append(config.sharing_plan)
        else:
            plans = [parse_plan_text(text) for text in req.plans]
        rows = savings_table(config, req.seq_lens, plans)
        return s.BudgetResponse(rows=[s.BudgetRow(**row) for row in rows],
                                config_sha256=config_digest(config))

    @app.post("/parity", response_model=s.ParityResponse)
    async def check_parity(req: s.ParityRequest):
        config, weights = _cached_model(app.state, req.model)
        config = _apply_overrides(config, req)
        checks = run_parity_checks(config, weights, seq_len=req.seq_len,
                                   n_inputs=req.n_inputs, seed=req.seed,
                                   tolerance=req.tolerance)
        return s.ParityResponse(
            ok=all(c.ok for c in checks),
            checks=[s.ParityCheck(name=c.name, ok=c.ok, detail=c.detail) for c in checks],
            config_sha256=config_digest(config),
        )

    return app
