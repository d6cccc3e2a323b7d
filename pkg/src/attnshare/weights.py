"""Weight containers and the bit-exact on-disk model format.

A model on disk is a JSON manifest plus a binary blob:

* ``manifest.json``: ``{"version": 1, "config": {...}, "blob": "weights.bin",
  "tensors": [{"name", "shape", "dtype": "f32", "offset", "nbytes"}, ...]}``
* ``weights.bin``: little-endian float32, row-major, each tensor packed at
  its declared offset, offsets aligned to 64 bytes.

Tensor names: ``embed``, ``layers.{i}.wq|wk|wv|wo|w1|w2|w3|norm1|norm2``,
``final_norm``, ``lm_head``. Member layers never read their wq/wk at
runtime, but the format always carries them so a plan can be changed
without rewriting the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig, TOY_INIT_SCALE, TOY_SEED
from .errors import ConfigError, InputError

BLOB_ALIGN = 64
MANIFEST_NAME = "manifest.json"
DEFAULT_BLOB_NAME = "weights.bin"

_LAYER_TENSORS = ("wq", "wk", "wv", "wo", "w1", "w2", "w3", "norm1", "norm2")


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    norm1: np.ndarray
    norm2: np.ndarray


@dataclass
class Weights:
    embed: np.ndarray
    layers: list[LayerWeights]
    final_norm: np.ndarray
    lm_head: np.ndarray


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every named tensor, in canonical file order."""
    qd = config.n_heads * config.d_head
    kd = config.n_kv_heads * config.d_head
    shapes: dict[str, tuple[int, ...]] = {"embed": (config.vocab_size, config.d_model)}
    for i in range(config.n_layers):
        shapes[f"layers.{i}.wq"] = (config.d_model, qd)
        shapes[f"layers.{i}.wk"] = (config.d_model, kd)
        shapes[f"layers.{i}.wv"] = (config.d_model, kd)
        shapes[f"layers.{i}.wo"] = (qd, config.d_model)
        shapes[f"layers.{i}.w1"] = (config.d_model, config.d_ff)
        shapes[f"layers.{i}.w2"] = (config.d_ff, config.d_model)
        shapes[f"layers.{i}.w3"] = (config.d_model, config.d_ff)
        shapes[f"layers.{i}.norm1"] = (config.d_model,)
        shapes[f"layers.{i}.norm2"] = (config.d_model,)
    shapes["final_norm"] = (config.d_model,)
    shapes["lm_head"] = (config.d_model, config.vocab_size)
    return shapes


def random_weights(config: ModelConfig, seed: int = TOY_SEED,
                   scale: float = TOY_INIT_SCALE) -> Weights:
    """Deterministic random init: N(0, scale^2) projections, unit norm gains.

    Draw order is fixed (embed, then per layer wq..w3, then lm_head) so a
    given seed always produces the same blob bytes.
    """
    rng = np.random.default_rng(seed)
    s = np.float32(scale)

    def draw(*shape):
        return rng.standard_normal(shape, dtype=np.float32) * s

    embed = draw(config.vocab_size, config.d_model)
    layers = []
    qd = config.n_heads * config.d_head
    kd = config.n_kv_heads * config.d_head
    for _ in range(config.n_layers):
        layers.append(LayerWeights(
            wq=draw(config.d_model, qd),
            wk=draw(config.d_model, kd),
            wv=draw(config.d_model, kd),
            wo=draw(qd, config.d_model),
            w1=draw(config.d_model, config.d_ff),
            w2=draw(config.d_ff, config.d_model),
            w3=draw(config.d_model, config.d_ff),
            norm1=np.ones(config.d_model, dtype=np.float32),
            norm2=np.ones(config.d_model, dtype=np.float32),
        ))
    final_norm = np.ones(config.d_model, dtype=np.float32)
    lm_head = draw(config.d_model, config.vocab_size)
    return Weights(embed=embed, layers=layers, final_norm=final_norm, lm_head=lm_head)


def _named_tensors(weights: Weights) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = [("embed", weights.embed)]
    for i, lw in enumerate(weights.layers):
        for field in _LAYER_TENSORS:
            out.append((f"layers.{i}.{field}", getattr(lw, field)))
    out.append(("final_norm", weights.final_norm))
    out.append(("lm_head", weights.lm_head))
    return out


def _align(offset: int) -> int:
    return (offset + BLOB_ALIGN - 1) // BLOB_ALIGN * BLOB_ALIGN


def build_manifest(config: ModelConfig, weights: Weights,
                   blob_name: str = DEFAULT_BLOB_NAME) -> tuple[dict, bytes]:
    """Build the manifest dict and the packed blob bytes."""
    entries = []
    chunks = []
    offset = 0
    for name, tensor in _named_tensors(weights):
        arr = np.ascontiguousarray(tensor, dtype=np.float32)
        start = _align(offset)
        if start > offset:
            chunks.append(b"\x00" * (start - offset))
        raw = arr.astype("<f4", copy=False).tobytes(order="C")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": start,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset = start + len(raw)
    manifest = {
        "version": 1,
        "config": config.to_manifest_dict(),
        "blob": blob_name,
        "tensors": entries,
    }
    return manifest, b"".join(chunks)


def manifest_text(manifest: dict) -> str:
    """Canonical manifest serialization; defines the file bytes exactly."""
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def save_model(out_dir: str | Path, config: ModelConfig, weights: Weights) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, blob = build_manifest(config, weights)
    manifest_path = out / MANIFEST_NAME
    blob_path = out / manifest["blob"]
    manifest_path.write_text(manifest_text(manifest), encoding="utf-8")
    blob_path.write_bytes(blob)
    return manifest_path, blob_path


def _resolve_manifest_path(path: str | Path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.is_file():
        raise FileNotFoundError(f"model manifest not found: {p}")
    return p


def load_model(path: str | Path) -> tuple[ModelConfig, Weights]:
    """Load a model from a directory or a manifest path, validating shapes."""
    manifest_path = _resolve_manifest_path(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if manifest.get("version") != 1:
        raise InputError(f"unsupported manifest version {manifest.get('version')!r}")
    config = ModelConfig.from_manifest_dict(manifest.get("config", {}))
    blob_path = manifest_path.parent / manifest.get("blob", DEFAULT_BLOB_NAME)
    if not blob_path.is_file():
        raise FileNotFoundError(f"weight blob not found: {blob_path}")
    blob = blob_path.read_bytes()

    expected = tensor_shapes(config)
    loaded: dict[str, np.ndarray] = {}
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        if entry.get("dtype") != "f32":
            raise InputError(f"tensor {name}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(entry["shape"])
        if name not in expected:
            raise InputError(f"unexpected tensor {name!r} in manifest")
        if shape != expected[name]:
            raise InputError(f"tensor {name}: shape {shape} != expected {expected[name]}")
        offset, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if offset % BLOB_ALIGN != 0:
            raise InputError(f"tensor {name}: offset {offset} not {BLOB_ALIGN}-byte aligned")
        if offset + nbytes > len(blob) or nbytes != 4 * int(np.prod(shape)):
            raise InputError(f"tensor {name}: blob range [{offset}, {offset + nbytes}) invalid")
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset)
        arr = arr.reshape(shape).astype(np.float32, copy=True)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"tensor {name} contains non-finite values")
        loaded[name] = arr
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise InputError(f"manifest is missing tensors: {', '.join(missing[:5])}")

    layers = [
        LayerWeights(**{field: loaded[f"layers.{i}.{field}"] for field in _LAYER_TENSORS})
        for i in range(config.n_layers)
    ]
    weights = Weights(
        embed=loaded["embed"],
        layers=layers,
        final_norm=loaded["final_norm"],
        lm_head=loaded["lm_head"],
    )
    return config, weights


def validate_weights(config: ModelConfig, weights: Weights) -> None:
    """Check every tensor against the config-derived shape table."""
    expected = tensor_shapes(config)
    for name, tensor in _named_tensors(weights):
        if tuple(tensor.shape) != expected[name]:
            raise ConfigError(f"tensor {name}: shape {tensor.shape} != {expected[name]}")
        if tensor.dtype != np.float32:
            raise ConfigError(f"tensor {name}: dtype {tensor.dtype} != float32")
