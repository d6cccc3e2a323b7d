"""Command-line client for the engine service.

By default every command spins up the service in-process (no network, no
daemon); ``--server URL`` points the same commands at a running instance
instead. Commands print a one-line JSON summary on stdout, write their
CSV/JSON artifacts via ``--out`` (format inferred from the extension), and
on failure print a ``{"error": {"type", "message"}}`` object on stderr.

Exit codes: 0 success, 1 usage error, 2 validation failure (parity
mismatch), 3 I/O error.
"""

from __future__ import annotations

import asyncio
import base64
import json
import os
import sys
from pathlib import Path

import click
import httpx

from .config import parse_cla
from .errors import AttnShareError
from .plan import parse_span
from .reports import (
    SIMILARITY_COLUMNS,
    VARIANCE_COLUMNS,
    csv_text,
    json_text,
    meta_from_digest,
    plain,
)
from .accounting import SAVINGS_COLUMNS
from .tokens import load_corpus, read_token_ids, write_token_ids

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

PARITY_COLUMNS = ("name", "ok", "detail")


class CliFailure(Exception):
    """A failure already mapped to an exit code and error envelope."""

    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}},
                                sort_keys=True) + "\n")


def _stdout_json(payload: dict) -> str:
    return json.dumps(plain(payload), sort_keys=True)


async def _post_asgi(path: str, payload: dict):
    from .service.app import create_app

    transport = httpx.ASGITransport(app=create_app())
    async with httpx.AsyncClient(transport=transport, base_url="http://attnshare") as client:
        return await client.post(path, json=payload)


def _call(server: str | None, path: str, payload: dict) -> dict:
    try:
        if server:
            with httpx.Client(base_url=server, timeout=600.0) as client:
                resp = client.post(path, json=payload)
        else:
            resp = asyncio.run(_post_asgi(path, payload))
    except httpx.HTTPError as exc:
        raise CliFailure(EXIT_IO, "io_error", f"service unreachable: {exc}") from None
    try:
        body = resp.json()
    except ValueError:
        raise CliFailure(EXIT_IO, "io_error",
                         f"non-JSON response (HTTP {resp.status_code})") from None
    if resp.status_code >= 400:
        err = body.get("error", {})
        kind = err.get("type", "internal_error")
        code = EXIT_IO if kind == "io_error" else EXIT_USAGE
        raise CliFailure(code, kind, err.get("message", f"HTTP {resp.status_code}"))
    return body


def _strategy_options(fn):
    fn = click.option("--span", "spans", multiple=True, metavar="A:B",
                      help="Share layer A's attention weights through layer B "
                           "(inclusive, repeatable); overrides the manifest plan.")(fn)
    fn = click.option("--no-sharing", is_flag=True, help="Force an empty sharing plan.")(fn)
    fn = click.option("--cla", "cla", multiple=True, metavar="CHILD:PARENT",
                      help="Make CHILD attend against PARENT's KV cache (repeatable); "
                           "overrides the manifest map.")(fn)
    fn = click.option("--cla-pairs", is_flag=True,
                      help="Cross-layer KV map pairing each odd layer with its predecessor.")(fn)
    fn = click.option("--no-cla", is_flag=True, help="Force an empty cross-layer KV map.")(fn)
    return fn


def _overrides(spans, no_sharing, cla, cla_pairs, no_cla) -> dict:
    if no_sharing and spans:
        raise click.UsageError("--no-sharing conflicts with --span")
    if no_cla and (cla or cla_pairs):
        raise click.UsageError("--no-cla conflicts with --cla/--cla-pairs")
    if cla and cla_pairs:
        raise click.UsageError("--cla conflicts with --cla-pairs")
    out: dict = {"cla_pairs": bool(cla_pairs)}
    if no_sharing:
        out["spans"] = []
    elif spans:
        for text in spans:
            parse_span(text)  # surface syntax errors as usage, not a service trip
        out["spans"] = list(spans)
    if no_cla:
        out["cla"] = []
    elif cla:
        parse_cla(cla)
        out["cla"] = list(cla)
    return out


def _strategy_flags(payload: dict) -> dict:
    spans = payload.get("spans")
    cla = payload.get("cla")
    return {
        "span": "manifest" if spans is None else ("+".join(spans) or "none"),
        "cla": "pairs" if payload.get("cla_pairs")
               else ("manifest" if cla is None else (",".join(cla) or "none")),
    }


def _load_samples(ids_path: str | None, corpus_path: str | None):
    if bool(ids_path) == bool(corpus_path):
        raise click.UsageError("provide exactly one of --ids or --corpus")
    if ids_path:
        samples = [{"id": os.path.basename(ids_path), "ids": read_token_ids(ids_path)}]
        return samples, {"ids": ids_path}
    samples = [{"id": name, "ids": ids} for name, ids in load_corpus(corpus_path)]
    return samples, {"corpus": corpus_path}


def _write_rows(outs, columns, rows, meta: dict, extras: dict | None = None) -> None:
    for out in outs:
        if out.endswith(".csv"):
            text = csv_text(columns, rows, meta)
        elif out.endswith(".json"):
            payload = {"meta": meta, "rows": rows}
            if extras:
                payload.update(extras)
            text = json_text(payload)
        else:
            raise click.UsageError(f"cannot infer format of {out!r}; use .csv or .json")
        path = Path(out)
        if path.parent != Path(""):
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service base URL; default runs the service in-process.")
@click.pass_context
def cli(ctx, server):
    """Transformer inference with shareable attention, plus its analysis tools."""
    ctx.obj = {"server": server}


@cli.command("make-toy")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--seed", default=42, show_default=True)
@click.option("--scale", default=0.02, show_default=True, help="Init std of projections.")
@click.option("--n-layers", default=8, show_default=True)
@click.option("--n-heads", default=4, show_default=True)
@click.option("--n-kv-heads", default=4, show_default=True)
@click.option("--d-model", default=64, show_default=True)
@click.option("--d-ff", default=128, show_default=True)
@click.option("--vocab-size", default=256, show_default=True)
@click.option("--max-seq", default=64, show_default=True)
@click.option("--rope-theta", default=10000.0, show_default=True)
@click.option("--norm-eps", default=1e-5, show_default=True)
@click.option("--span", "spans", multiple=True, metavar="A:B",
              help="Bake a sharing span into the manifest (repeatable).")
@click.option("--cla", "cla", multiple=True, metavar="CHILD:PARENT",
              help="Bake a cross-layer KV pair into the manifest (repeatable).")
@click.option("--cla-pairs", is_flag=True,
              help="Bake in the odd-reads-predecessor cross-layer KV map.")
@click.pass_context
def make_toy(ctx, out, seed, scale, n_layers, n_heads, n_kv_heads, d_model, d_ff,
             vocab_size, max_seq, rope_theta, norm_eps, spans, cla, cla_pairs):
    """Fabricate a deterministic random-init model (manifest + weight blob)."""
    payload = {
        "seed": seed, "scale": scale, "n_layers": n_layers, "n_heads": n_heads,
        "n_kv_heads": n_kv_heads, "d_model": d_model, "d_ff": d_ff,
        "vocab_size": vocab_size, "max_seq": max_seq, "rope_theta": rope_theta,
        "norm_eps": norm_eps, "spans": list(spans), "cla": list(cla),
        "cla_pairs": bool(cla_pairs),
    }
    body = _call(ctx.obj["server"], "/toy", payload)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    blob_path = out_dir / "weights.bin"
    manifest_path.write_text(body["manifest_json"], encoding="utf-8")
    blob_path.write_bytes(base64.b64decode(body["blob_b64"]))
    click.echo(_stdout_json({
        "manifest": str(manifest_path),
        "blob": str(blob_path),
        "blob_sha256": body["blob_sha256"],
        "config_sha256": body["config_sha256"],
    }))


@cli.command("run")
@click.option("--model", required=True, type=click.Path(), help="Model directory or manifest.")
@click.option("--ids", "ids_path", required=True, type=click.Path(),
              help="Prompt token-stream file.")
@click.option("--steps", default=16, show_default=True, help="Tokens to generate.")
@click.option("--mode", type=click.Choice(["greedy", "temperature"]), default="greedy",
              show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True, help="Sampling seed.")
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path(),
              help="Write prompt + continuation as a token stream (repeatable).")
@click.pass_context
def run(ctx, model, ids_path, steps, mode, temperature, seed,
        spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Generate a continuation for a prompt."""
    prompt = read_token_ids(ids_path)
    payload = {
        "model": model, "prompt": prompt, "steps": steps, "mode": mode,
        "temperature": temperature, "seed": seed,
        **_overrides(spans, no_sharing, cla, cla_pairs, no_cla),
    }
    body = _call(ctx.obj["server"], "/generate", payload)
    for out in outs:
        write_token_ids(out, prompt + body["tokens"])
    click.echo(_stdout_json({
        "tokens": body["tokens"],
        "n_prompt": len(prompt),
        "config_sha256": body["config_sha256"],
    }))


@cli.command("ppl")
@click.option("--model", required=True, type=click.Path())
@click.option("--ids", "ids_path", default=None, type=click.Path(),
              help="Single token-stream file.")
@click.option("--corpus", "corpus_path", default=None, type=click.Path(),
              help="Directory of token-stream files.")
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path())
@click.pass_context
def ppl(ctx, model, ids_path, corpus_path, spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Per-sample perplexity."""
    samples, source = _load_samples(ids_path, corpus_path)
    over = _overrides(spans, no_sharing, cla, cla_pairs, no_cla)
    body = _call(ctx.obj["server"], "/perplexity", {"model": model, "samples": samples, **over})
    meta = meta_from_digest(body["config_sha256"],
                            {"command": "ppl", "model": model, **source, **_strategy_flags(over)})
    _write_rows(outs, ("sample", "n_tokens", "perplexity"), body["rows"], meta,
                extras={"mean_perplexity": body["mean_perplexity"]})
    click.echo(_stdout_json({
        "mean_perplexity": body["mean_perplexity"],
        "n_samples": len(body["rows"]),
        "config_sha256": body["config_sha256"],
    }))


@cli.command("sim")
@click.option("--model", required=True, type=click.Path())
@click.option("--ids", "ids_path", default=None, type=click.Path())
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@click.option("--head", type=int, default=None,
              help="Compare this head only instead of the head mean.")
@click.option("--sample-agg", type=click.Choice(["mean_matrices", "mean_similarities"]),
              default="mean_matrices", show_default=True)
@click.option("--tau", default=0.8, show_default=True, help="Grouping threshold.")
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path())
@click.pass_context
def sim(ctx, model, ids_path, corpus_path, head, sample_agg, tau,
        spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Layer-by-layer attention similarity surface and its layer groups."""
    samples, source = _load_samples(ids_path, corpus_path)
    over = _overrides(spans, no_sharing, cla, cla_pairs, no_cla)
    body = _call(ctx.obj["server"], "/similarity", {
        "model": model, "samples": samples, "head": head,
        "sample_agg": sample_agg, "tau": tau, **over,
    })
    surface = body["surface"]
    rows = [{"layer_i": i, "layer_j": j, "similarity": value}
            for i, row in enumerate(surface) for j, value in enumerate(row)]
    meta = meta_from_digest(body["config_sha256"], {
        "command": "sim", "model": model, **source,
        "head": "mean" if head is None else head,
        "sample_agg": sample_agg, "tau": tau, **_strategy_flags(over),
    })
    _write_rows(outs, SIMILARITY_COLUMNS, rows, meta, extras={"groups": body["groups"]})
    click.echo(_stdout_json({
        "n_layers": len(surface),
        "groups": body["groups"],
        "config_sha256": body["config_sha256"],
    }))


@cli.command("var")
@click.option("--model", required=True, type=click.Path())
@click.option("--ids", "ids_path", default=None, type=click.Path())
@click.option("--corpus", "corpus_path", default=None, type=click.Path())
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path())
@click.pass_context
def var(ctx, model, ids_path, corpus_path, spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Attention-weight variance and weighted cumulative variance per layer/head."""
    samples, source = _load_samples(ids_path, corpus_path)
    over = _overrides(spans, no_sharing, cla, cla_pairs, no_cla)
    body = _call(ctx.obj["server"], "/variance", {"model": model, "samples": samples, **over})
    variance = body["variance"]
    wcv = body["wcv"]
    rows = [{"layer": l, "head": h, "variance": variance[l][h], "wcv": wcv[l][h]}
            for l in range(len(variance)) for h in range(len(variance[0]))]
    meta = meta_from_digest(body["config_sha256"],
                            {"command": "var", "model": model, **source, **_strategy_flags(over)})
    _write_rows(outs, VARIANCE_COLUMNS, rows, meta)
    click.echo(_stdout_json({
        "n_layers": len(variance),
        "n_heads": len(variance[0]),
        "config_sha256": body["config_sha256"],
    }))


@cli.command("budget")
@click.option("--model", required=True, type=click.Path())
@click.option("--seq-len", "seq_lens", multiple=True, type=int,
              help="Sequence length(s) to cost; default 32.")
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path())
@click.pass_context
def budget(ctx, model, seq_lens, spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Predicted FLOP and KV-byte totals, with deltas against an empty plan."""
    over = _overrides(spans, no_sharing, cla, cla_pairs, no_cla)
    if "spans" in over:
        plans = ["none"]
        if over["spans"]:
            plans.append("+".join(over["spans"]))
    else:
        plans = None  # baseline plus the manifest's own plan
    payload = {
        "model": model, "seq_lens": list(seq_lens) or [32], "plans": plans,
        "cla": over.get("cla"), "cla_pairs": over["cla_pairs"],
    }
    body = _call(ctx.obj["server"], "/budget", payload)
    meta = meta_from_digest(body["config_sha256"], {
        "command": "budget", "model": model,
        "seq_lens": ",".join(str(s) for s in (list(seq_lens) or [32])),
        **_strategy_flags(over),
    })
    _write_rows(outs, SAVINGS_COLUMNS, body["rows"], meta)
    click.echo(_stdout_json({"rows": body["rows"], "config_sha256": body["config_sha256"]}))


@cli.command("parity")
@click.option("--model", required=True, type=click.Path())
@click.option("--seq-len", default=32, show_default=True)
@click.option("--n-inputs", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
@_strategy_options
@click.option("--out", "outs", multiple=True, type=click.Path())
@click.pass_context
def parity(ctx, model, seq_len, n_inputs, seed, tolerance,
           spans, no_sharing, cla, cla_pairs, no_cla, outs):
    """Equivalence and accounting self-checks; exits 2 if any check fails."""
    over = _overrides(spans, no_sharing, cla, cla_pairs, no_cla)
    body = _call(ctx.obj["server"], "/parity", {
        "model": model, "seq_len": seq_len, "n_inputs": n_inputs,
        "seed": seed, "tolerance": tolerance, **over,
    })
    meta = meta_from_digest(body["config_sha256"], {
        "command": "parity", "model": model, "seq_len": seq_len, "n_inputs": n_inputs,
        "seed": seed, "tolerance": tolerance, **_strategy_flags(over),
    })
    _write_rows(outs, PARITY_COLUMNS, body["checks"], meta, extras={"ok": body["ok"]})
    click.echo(_stdout_json({
        "ok": body["ok"],
        "checks": body["checks"],
        "config_sha256": body["config_sha256"],
    }))
    if not body["ok"]:
        failed = ", ".join(c["name"] for c in body["checks"] if not c["ok"])
        raise CliFailure(EXIT_VALIDATION, "parity_mismatch", f"failed checks: {failed}")


def main(argv=None) -> int:
    try:
        cli(args=argv, standalone_mode=False, prog_name="attnshare")
        return EXIT_OK
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except click.ClickException as exc:
        _emit_error("usage_error", exc.format_message())
        return EXIT_USAGE
    except CliFailure as exc:
        _emit_error(exc.kind, str(exc))
        return exc.code
    except AttnShareError as exc:
        _emit_error(exc.kind, str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _emit_error("io_error", str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
