"""CSV and JSON writers with a fixed numeric format."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

TINY = 1e-300


def fmt(x) -> str:
    """17 significant digits; integers and strings pass through."""
    if isinstance(x, (str, bool)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def fmt_prob(p, log10p=None) -> str:
    """Probability, switching to ``log10:<value>`` below 1e-300."""
    p = float(p)
    if log10p is not None and math.isfinite(log10p) and (p < TINY or not math.isfinite(p)):
        return "log10:" + fmt(log10p)
    return fmt(p)


def parse_prob(s: str) -> float:
    """Inverse of :func:`fmt_prob`; log-form values come back as ``10**v`` (possibly 0)."""
    s = s.strip()
    if s.startswith("log10:"):
        return 10.0 ** float(s[6:])
    return float(s)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def read_values(path) -> np.ndarray:
    """One number per line; a non-numeric first line is treated as a header."""
    vals = []
    for i, line in enumerate(Path(path).read_text().splitlines()):
        line = line.strip().split(",")[0]
        if not line:
            continue
        try:
            vals.append(float(line))
        except ValueError:
            if i == 0:
                continue
            raise
    return np.asarray(vals)


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot encode {type(o).__name__}")
