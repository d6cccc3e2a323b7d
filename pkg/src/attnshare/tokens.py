"""Token-stream files: one decimal token id per line.

A corpus is a directory of such files, one sample each; the filename is the
sample id, and samples are always processed in ascending filename order.
"""

from __future__ import annotations

import os

from .errors import InputError


def read_token_ids(path: str) -> list[int]:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    ids = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        if not text.isdigit():
            raise InputError(f"{path}:{lineno}: expected a decimal token id, got {line!r}")
        ids.append(int(text))
    if not ids:
        raise InputError(f"{path}: no token ids")
    return ids


def write_token_ids(path: str, ids) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for i in ids:
            fh.write(f"{int(i)}\n")


def load_corpus(path: str) -> list[tuple[str, list[int]]]:
    """All non-hidden regular files under ``path``, sorted by filename."""
    if not os.path.isdir(path):
        raise InputError(f"{path}: not a directory")
    names = sorted(n for n in os.listdir(path)
                   if not n.startswith(".") and os.path.isfile(os.path.join(path, n)))
    if not names:
        raise InputError(f"{path}: no sample files")
    return [(name, read_token_ids(os.path.join(path, name))) for name in names]
