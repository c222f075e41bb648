"""Deterministic report emission: canonical JSON and 17-significant-digit CSV.

Floats are printed with %.17g everywhere, which round-trips IEEE doubles
exactly; JSON objects are emitted with sorted keys so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17-significant-digit decimal form of one scalar."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _json_escape(s: str) -> str:
    out = []
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)


def canonical_json(obj, indent=0) -> str:
    """JSON text with sorted keys and fixed float formatting.

    Non-finite floats are emitted as null (they only appear in optional
    diagnostic slots).  numpy scalars and arrays are accepted.
    """
    pad = "  " * indent
    pad_in = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return "null"
        return fmt(x)
    if isinstance(obj, str):
        return f'"{_json_escape(obj)}"'
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [canonical_json(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(pad_in + it for it in items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(str(k) for k in obj)
        raw = {str(k): v for k, v in obj.items()}
        items = [f'{pad_in}"{_json_escape(k)}": {canonical_json(raw[k], indent + 1)}' for k in keys]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def digest(obj) -> str:
    """sha256 hex digest of the canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n")


def write_csv(path, header, rows) -> None:
    """CSV with a header row and %.17g-formatted numeric cells."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(c) if not isinstance(c, str) else c for c in row))
    Path(path).write_text("\n".join(lines) + "\n")


def orbit_rows(orbit):
    for t, x in zip(orbit.times, orbit.states):
        yield [t, *x]


def orbit_header(m):
    return ["t"] + [f"x_{i + 1}" for i in range(m)]


def cocycle_rows(sample):
    for t, x, A in zip(sample.orbit.times, sample.orbit.states, sample.fundamental):
        yield [t, *x, *A.reshape(-1)]


def cocycle_header(m):
    return orbit_header(m) + [f"A_{i + 1}{j + 1}" for i in range(m) for j in range(m)]


def read_csv(path):
    """Parse a CSV written by write_csv back into header and float rows."""
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [[float(c) for c in line.split(",")] for line in lines[1:]]
    return header, rows
