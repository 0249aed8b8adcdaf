"""CSV/JSON writers with a provenance header."""

from __future__ import annotations

import csv
import json
import math
from typing import Any, Iterable, Mapping, Sequence, TextIO

import numpy as np


def fmt(value: Any) -> str:
    """17 significant digits for floats so values round-trip exactly."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    if value is None:
        return ""
    return str(value)


def write_csv(fh: TextIO, header: Sequence[str], rows: Iterable[Sequence[Any]], provenance: Mapping[str, Any] | None = None) -> None:
    if provenance:
        for key in sorted(provenance):
            fh.write(f"# {key}: {provenance[key]}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(list(header))
    for row in rows:
        w.writerow([fmt(v) for v in row])


def read_csv(fh: TextIO) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Inverse of :func:`write_csv`: ``(provenance, header, rows)`` with values as strings."""
    prov: dict[str, str] = {}
    lines = []
    for line in fh:
        if line.startswith("# "):
            key, _, val = line[2:].rstrip("\n").partition(": ")
            prov[key] = val
        else:
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    return prov, header, [r for r in reader]


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_default)
