"""CSV/JSON reading and atomic writing of results."""

import csv
import enum
import io
import json
import math
import os
import tempfile

import numpy as np

from shapedist.errors import DataError
from shapedist.plugin import ResponseMatrix

SCHEMA_VERSION = 1


def _parse_float(text, line, col):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"line {line}, column {col}: cannot parse {text.strip()!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"line {line}, column {col}: non-finite value {text.strip()!r}")
    return v


def _is_header(fields):
    for f in fields:
        try:
            float(f)
        except ValueError:
            return True
    return False


def load_response_csv(path, bound=None):
    """Read an ``M x N`` response matrix; an optional first header line is skipped."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}") from None
    numbered = [(i + 1, row) for i, row in enumerate(lines) if row and any(c.strip() for c in row)]
    if numbered and _is_header(numbered[0][1]):
        numbered = numbered[1:]
    if not numbered:
        raise DataError(f"{path} contains no data rows")
    width = len(numbered[0][1])
    rows = []
    for line, fields in numbered:
        if len(fields) != width:
            raise DataError(f"{path} line {line}: expected {width} fields, found {len(fields)}")
        rows.append([_parse_float(f, line, c + 1) for c, f in enumerate(fields)])
    return ResponseMatrix(np.array(rows, dtype=float), bound=bound)


def format_float(v):
    return format(float(v), ".17g")


def write_response_csv(path, data, header=True):
    a = data.data if isinstance(data, ResponseMatrix) else np.asarray(data, dtype=float)
    buf = io.StringIO()
    if header:
        buf.write(",".join(f"unit_{k + 1}" for k in range(a.shape[1])) + "\n")
    for row in a:
        buf.write(",".join(format_float(v) for v in row) + "\n")
    atomic_write(path, buf.getvalue())


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temporary file, so no partial file is left behind."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".shapedist-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, enum.Enum):
        return v.value
    return v


def to_json(command, payload, provenance):
    doc = {"schema_version": SCHEMA_VERSION, "command": command,
           "provenance": _clean(provenance), **_clean(payload)}
    return json.dumps(doc, indent=2) + "\n"


def _cell(v):
    v = _clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def load_bounds_grid(path):
    """Parameter points ``(b, n, m, delta)`` from a CSV with a header, or JSON.

    JSON may be a list of point objects or an object of lists expanded as a
    Cartesian product.
    """
    import itertools

    if not os.path.exists(path):
        raise DataError(f"grid file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError:
        spec = None
    if spec is None:
        reader = csv.DictReader(io.StringIO(text))
        spec = []
        for i, row in enumerate(reader, start=2):
            try:
                spec.append({k.strip(): float(v) for k, v in row.items()})
            except (ValueError, AttributeError):
                raise DataError(f"{path} line {i}: malformed grid row") from None
    elif isinstance(spec, dict):
        keys = list(spec)
        vals = [spec[k] if isinstance(spec[k], list) else [spec[k]] for k in keys]
        spec = [dict(zip(keys, v)) for v in itertools.product(*vals)]
    points = []
    for p in spec:
        try:
            points.append({"b": float(p.get("b", 1.0)), "n": int(p["n"]), "m": int(p["m"]),
                           "delta": float(p.get("delta", 0.05))})
        except (KeyError, TypeError, ValueError):
            raise DataError(f"grid point {p!r} needs numeric n and m (b, delta optional)") from None
    return points
