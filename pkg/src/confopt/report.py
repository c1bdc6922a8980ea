"""Artifact writers: atomic, deterministic CSV and JSON output.

Every file is written through a temp-and-rename so a crashed run never
leaves a truncated artifact, and every file embeds the resolved config
hash and seed so reruns can be checked byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def atomic_write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], *,
              config_hash: str, seed: int) -> Path:
    """Comma-separated table with a leading provenance comment line."""
    lines = [f"# config_hash={config_hash} seed={seed}", ",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        lines.append(",".join(format_cell(cell) for cell in row))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str | Path, doc: dict, *, config_hash: str, seed: int) -> Path:
    doc = dict(doc)
    doc["config_hash"] = config_hash
    doc["seed"] = seed
    return atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def jsonable(obj):
    """Recursively coerce arrays and non-finite floats into strict JSON."""
    import math

    import numpy as np

    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def mean_sd(values) -> tuple[float, float]:
    import numpy as np

    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


def format_mean_sd(mean: float, sd: float) -> str:
    """Two-decimal summary cell, e.g. '-7.77 (1.87)'."""
    return f"{mean:.2f} ({sd:.2f})"


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain-text table for terminal echo, columns padded to content."""
    cells = [list(map(str, header))] + [list(map(str, row)) for row in rows]
    widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
    out = []
    for i, row in enumerate(cells):
        out.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            out.append("  ".join("-" * widths[j] for j in range(len(header))))
    return "\n".join(out)
