"""Plain-text interchange files: embeddings, classifier weights, traces, manifests.

Floats are written with 17 significant digits so that a float64 survives a
write/read round trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

import numpy as np

from .. import __version__, _backend
from ..metrics import TRACE_COLUMNS

FLOAT_FORMAT = "%.17g"


class FormatError(ValueError):
    """Malformed interchange file; the message names the file and line."""


def _fmt(x) -> str:
    return FLOAT_FORMAT % x


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    return path


def _read_table(path, expected_header=None, header_prefix=None):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}:1: empty file")
    header = [h.strip() for h in rows[0]]
    if expected_header is not None and header != list(expected_header):
        raise FormatError(f"{path}:1: expected header {','.join(expected_header)}")
    if header_prefix is not None and (not header or header[0] != header_prefix):
        raise FormatError(f"{path}:1: header must start with {header_prefix!r}")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        body.append((lineno, row))
    return path, header, body


def _float(path, lineno, text):
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: not a number: {text!r}") from None
    return value


def _label(path, lineno, text):
    try:
        value = int(text)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: label must be a non-negative integer, got {text!r}") from None
    if value < 0:
        raise FormatError(f"{path}:{lineno}: label must be a non-negative integer, got {text!r}")
    return value


def write_embeddings(path, features, labels):
    """Header ``label,f0,...,f{d-1}``, one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    header = ["label"] + [f"f{j}" for j in range(features.shape[1])]
    rows = ([str(int(y))] + [_fmt(v) for v in row] for y, row in zip(labels, features))
    return _write_rows(path, header, rows)


def read_embeddings(path):
    """Returns ``(features, labels)``."""
    path, header, body = _read_table(path, header_prefix="label")
    d = len(header) - 1
    if d < 1 or header[1:] != [f"f{j}" for j in range(d)]:
        raise FormatError(f"{path}:1: expected header label,f0,...,f{{d-1}}")
    if not body:
        raise FormatError(f"{path}: no data rows")
    labels = np.empty(len(body), dtype=np.int64)
    feats = np.empty((len(body), d))
    for k, (lineno, row) in enumerate(body):
        labels[k] = _label(path, lineno, row[0])
        feats[k] = [_float(path, lineno, t) for t in row[1:]]
        if not np.all(np.isfinite(feats[k])):
            raise FormatError(f"{path}:{lineno}: non-finite value")
    return feats, labels


def write_weights(path, weights, bias=None):
    """Header ``class,w0,...,w{d-1}`` plus a trailing ``bias`` column when present."""
    W = np.asarray(weights, dtype=np.float64)
    header = ["class"] + [f"w{j}" for j in range(W.shape[1])] + (["bias"] if bias is not None else [])
    rows = []
    for c, row in enumerate(W):
        cells = [str(c)] + [_fmt(v) for v in row]
        if bias is not None:
            cells.append(_fmt(bias[c]))
        rows.append(cells)
    return _write_rows(path, header, rows)


def read_weights(path):
    """Returns ``(weights, bias or None)``; rows must be classes 0..K-1 in order."""
    path, header, body = _read_table(path, header_prefix="class")
    has_bias = header[-1] == "bias"
    d = len(header) - 1 - int(has_bias)
    if d < 1 or header[1:1 + d] != [f"w{j}" for j in range(d)]:
        raise FormatError(f"{path}:1: expected header class,w0,...,w{{d-1}}[,bias]")
    W = np.empty((len(body), d))
    b = np.empty(len(body)) if has_bias else None
    for k, (lineno, row) in enumerate(body):
        if _label(path, lineno, row[0]) != k:
            raise FormatError(f"{path}:{lineno}: expected class {k}")
        W[k] = [_float(path, lineno, t) for t in row[1:1 + d]]
        if has_bias:
            b[k] = _float(path, lineno, row[-1])
    return W, b


def write_trace(path, trace):
    """The per-evaluation metric table of a run."""
    rows = []
    for rec in trace.records:
        r = rec.report
        vals = [rec.loss, r.train_accuracy, r.erank_intra, r.erank_inter, r.erank_weights,
                r.weight_alignment, r.instance_alignment, r.mir, r.hdr]
        rows.append([str(rec.iteration)] + [_fmt(v) for v in vals])
    return _write_rows(path, TRACE_COLUMNS, rows)


def read_trace(path) -> dict:
    """Column name -> numpy array."""
    path, header, body = _read_table(path, expected_header=TRACE_COLUMNS)
    cols = {name: [] for name in header}
    last = None
    for lineno, row in body:
        it = _label(path, lineno, row[0])
        if last is not None and it <= last:
            raise FormatError(f"{path}:{lineno}: iterations must be strictly increasing")
        last = it
        cols["iter"].append(it)
        for name, text in zip(header[1:], row[1:]):
            cols[name].append(_float(path, lineno, text))
    return {k: np.asarray(v) for k, v in cols.items()}


def versions() -> dict:
    return {
        "ncsphere": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "backend": _backend.NAME,
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(path, config: dict, seed, extra=None):
    """Everything needed to rerun: config, seed, tool versions, plus run facts such as wall clock."""
    data = {"config": config, "seed": seed, "versions": versions()}
    data.update(extra or {})
    return write_json(path, data)
