"""Deterministic CSV and JSON emitters for analysis and budget results.

Every artifact carries a meta block (tool version, config digest, and the
flags that produced it) sufficient to reproduce the run. Nothing
time-dependent is ever written, so identical runs yield identical bytes.

CSV files start with ``# key=value`` comment lines holding the meta block,
then a header row, then data rows. JSON files are
``{"meta": {...}, "rows": [...]}`` (plus result-specific extras), serialized
with sorted keys. Floats are rendered with ``repr``, the shortest
round-tripping form.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .config import ModelConfig
from .version import VERSION

TOOL_NAME = "attnshare"


def config_digest(config: ModelConfig) -> str:
    canonical = json.dumps(config.to_manifest_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


def meta_from_digest(digest: str, flags: dict) -> dict:
    return {
        "tool": TOOL_NAME,
        "version": VERSION,
        "config_sha256": digest,
        "flags": {str(k): plain(v) for k, v in sorted(flags.items())},
    }


def build_meta(config: ModelConfig, flags: dict) -> dict:
    return meta_from_digest(config_digest(config), flags)


def plain(obj):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [plain(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {k: plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(x) for x in obj]
    return obj


def format_cell(value) -> str:
    value = plain(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _meta_lines(meta: dict) -> list[str]:
    lines = [f"# tool={meta['tool']}", f"# version={meta['version']}",
             f"# config_sha256={meta['config_sha256']}"]
    for key, value in sorted(meta["flags"].items()):
        lines.append(f"# flag.{key}={format_cell(value)}")
    return lines


def csv_text(columns, rows, meta: dict) -> str:
    lines = _meta_lines(meta)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_cell(row[col]) for col in columns))
    return "\n".join(lines) + "\n"


def json_text(payload: dict) -> str:
    return json.dumps(plain(payload), sort_keys=True, indent=2) + "\n"


def similarity_rows(surface: np.ndarray) -> list[dict]:
    n = surface.shape[0]
    return [{"layer_i": i, "layer_j": j, "similarity": float(surface[i, j])}
            for i in range(n) for j in range(n)]

SIMILARITY_COLUMNS = ("layer_i", "layer_j", "similarity")


def variance_rows(vs: np.ndarray, wcv: np.ndarray) -> list[dict]:
    n_layers, n_heads = vs.shape
    return [{"layer": l, "head": h, "variance": float(vs[l, h]), "wcv": float(wcv[l, h])}
            for l in range(n_layers) for h in range(n_heads)]

VARIANCE_COLUMNS = ("layer", "head", "variance", "wcv")
