"""Plot-ready CSV tables preceded by a ``#`` metadata block."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .. import __version__
from .archive import atomic_write_text

NA = "n/a"


def format_value(v: Any) -> str:
    if v is None:
        return NA
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple)):
        return " ".join(format_value(x) for x in v)
    return str(v)


def render_csv(columns: Sequence[str], rows: Iterable[Mapping[str, Any]], meta: Mapping[str, Any]) -> str:
    """CSV text; ``meta`` is emitted first as sorted ``# key: value`` lines."""
    buf = io.StringIO()
    full = {"tool_version": __version__, **meta}
    for k in sorted(full):
        buf.write(f"# {k}: {format_value(full[k])}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]], meta: Mapping[str, Any]) -> Path:
    path = Path(path)
    atomic_write_text(path, render_csv(columns, rows, meta))
    return path


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Parse a file written by :func:`write_csv` (or a plain CSV) into (metadata, rows)."""
    meta: dict[str, str] = {}
    body = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    return meta, list(csv.DictReader(body))
