"""On-disk formats: parameter files, CSV tables and JSON documents.

A parameter file is a little-endian ``uint32`` header length, a UTF-8
JSON header ``{"spec_hash", "length", "dtype"}`` and then ``length``
little-endian float64 values. A JSON sidecar (``<file>.json``) carries
free-form metadata. CSV floats use ``repr`` so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError

_DTYPE = "<f8"


def save_params(path, params, spec, metadata=None):
    path = Path(path)
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise ShapeError(f"parameter vector has shape {params.shape}, expected ({spec.n_params},)")
    header = json.dumps(
        {"spec_hash": spec.digest(), "length": int(params.size), "dtype": _DTYPE},
        sort_keys=True,
    ).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(params.astype(_DTYPE).tobytes())
    side = {"spec": spec.to_dict(), "spec_hash": spec.digest(), **(metadata or {})}
    write_json(str(path) + ".json", side)
    return path


def load_params(path, spec=None):
    """Read a parameter file; checks the spec hash when ``spec`` is given."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataError(f"{path}: truncated parameter file")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4: 4 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header") from exc
    if header.get("dtype") != _DTYPE:
        raise DataError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    body = raw[4 + hlen:]
    n = int(header["length"])
    if len(body) != 8 * n:
        raise DataError(f"{path}: expected {n} values, found {len(body) // 8}")
    if spec is not None:
        if header["spec_hash"] != spec.digest():
            raise DataError(f"{path}: parameters belong to a different network spec")
        if n != spec.n_params:
            raise ShapeError(f"{path}: {n} values for a spec with {spec.n_params}")
    return np.frombuffer(body, dtype=_DTYPE).astype(np.float64)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    if isinstance(v, (tuple, list)):
        return " ".join(_cell(x) for x in v)
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


SCORE_COLUMNS = ("train_id", "test_id", "score", "solver", "curvature", "lambda", "epsilon")


def write_scores(path, rows, cfg, epsilon):
    """Influence scores; ``rows`` are ``(train_id, test_id, score)``."""
    meta = (cfg.solver, cfg.curvature, float(cfg.damping), float(epsilon))
    return write_csv(path, SCORE_COLUMNS, [(int(a), int(b), float(s)) + meta for a, b, s in rows])
