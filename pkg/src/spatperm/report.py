"""Run manifests and deterministic JSON serialization of reports."""

from __future__ import annotations

import hashlib
import json
import math
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import __version__

__all__ = ["file_digest", "build_manifest", "sanitize", "dumps", "load_schema", "SCHEMAS"]

SCHEMAS = ("lisa", "gisa", "null-study", "power-study")

# Flags that change where or how fast output is produced but not its content.
VOLATILE_FLAGS = frozenset({"threads", "out", "qq_csv", "power_csv", "weights_out", "func", "command"})


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(subcommand: str, flags: dict[str, Any], inputs: Iterable[tuple[str, str]], seed: int | None) -> dict:
    """Manifest recording everything that determines a report's content.

    ``inputs`` pairs a flag name with a file path; only the file digest is
    recorded.
    """
    clean = {k: sanitize(v) for k, v in sorted(flags.items()) if k not in VOLATILE_FLAGS}
    return {
        "tool": "spatperm",
        "version": __version__,
        "subcommand": subcommand,
        "flags": clean,
        "inputs": {name: file_digest(path) for name, path in sorted(inputs)},
        "seed": seed,
    }


def sanitize(value: Any) -> Any:
    """Convert to plain JSON types; non-finite floats become ``None``."""
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return [sanitize(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if hasattr(value, "value") and hasattr(type(value), "__members__"):
        return value.value
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps(obj: Any) -> str:
    """Deterministic JSON: insertion-ordered keys, shortest round-trip floats."""
    return json.dumps(sanitize(obj), indent=1, allow_nan=False) + "\n"


def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise KeyError(name)
    text = resources.files("spatperm").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)
