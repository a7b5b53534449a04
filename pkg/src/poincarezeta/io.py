"""Matrix and table serialization, and run manifests.

Binary matrices use the ``OQMX`` layout: the magic bytes, then ``version``,
``rows`` and ``cols`` as little-endian u32, then row-major pairs of
little-endian float64 ``(re, im)``.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ValidationError

MAGIC = b"OQMX"
VERSION = 1
TOOL_VERSION = "0.1.0"
HASH_PREFIX = "# manifest_sha256="


# ---------------------------------------------------------------------------
# Matrices

def write_oqmx(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=np.complex128))
    rows, cols = M.shape
    data = np.empty((rows, cols, 2), dtype="<f8")
    data[..., 0] = M.real
    data[..., 1] = M.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", VERSION, rows, cols))
        fh.write(data.tobytes(order="C"))


def read_oqmx(path):
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ValidationError(f"{path} is not an OQMX file")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise ValidationError(f"unsupported OQMX version {version}")
    body = raw[16:]
    if len(body) != rows * cols * 16:
        raise ValidationError(f"{path}: payload has {len(body)} bytes, expected {rows * cols * 16}")
    data = np.frombuffer(body, dtype="<f8").reshape(rows, cols, 2)
    return data[..., 0] + 1j * data[..., 1]


def matrix_rows(M):
    """Rows ``i, j, re, im`` for the CSV alternative to OQMX."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    i, j = np.indices(M.shape)
    return [[int(a), int(b), float(v.real), float(v.imag)] for a, b, v in zip(i.ravel(), j.ravel(), M.ravel())]


# ---------------------------------------------------------------------------
# Tables

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], manifest_hash: Optional[str] = None):
    """CSV with an optional ``# manifest_sha256=...`` comment line; floats keep full precision."""
    buf = _io.StringIO()
    if manifest_hash:
        buf.write(f"{HASH_PREFIX}{manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Header and rows of a CSV written by :func:`write_csv` (comment lines skipped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rdr = list(csv.reader(lines))
    return rdr[0], rdr[1:]


def resonance_rows(res, extra: Optional[dict] = None):
    header = ["re_z", "im_z", "multiplicity", "residual"]
    rows = res.rows()
    if extra:
        header = header + list(extra)
        rows = [r + list(extra.values()) for r in rows]
    return header, rows


# ---------------------------------------------------------------------------
# Manifests

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def manifest_hash(command: str, params: dict, inputs: dict):
    """Hash of everything that determines the outputs (tool version, command, parameters, input hashes)."""
    body = {"tool_version": TOOL_VERSION, "command": command, "params": params, "inputs": inputs}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()


def _flatten(doc):
    """Fixed head fields first, then sorted ``param.*``, ``input.*``, ``output.*``, ``info.*`` keys."""
    flat = {"tool_version": doc["tool_version"], "command": doc["command"],
            "manifest_sha256": doc["manifest_sha256"]}
    for group in ("param", "input", "output", "info"):
        for k in sorted(doc[group + "s"] if group != "info" else doc["info"]):
            src = doc[group + "s"] if group != "info" else doc["info"]
            flat[f"{group}.{k}"] = src[k]
    return flat


def _unflatten(flat):
    doc = {"params": {}, "inputs": {}, "outputs": {}, "info": {}}
    for key, val in flat.items():
        group, dot, name = key.partition(".")
        if dot and group in ("param", "input", "output", "info"):
            doc[group + "s" if group != "info" else "info"][name] = val
        else:
            doc[key] = val
    return doc


def write_manifest(path, command: str, params: dict, inputs: dict, outputs: dict, info: Optional[dict] = None):
    """Flat JSON key-value manifest; ``outputs`` maps file names to content hashes.

    ``info`` holds derived descriptions (charts, grids, contour profile) that
    are fixed by the parameters and therefore not part of the hash.
    """
    for group in (params, inputs, outputs, info or {}):
        for v in group.values():
            if isinstance(v, (dict, list, tuple)):
                raise ValidationError("manifest values must be scalars")
    doc = {"tool_version": TOOL_VERSION, "command": command, "params": params, "inputs": inputs,
           "outputs": outputs, "info": dict(info or {}),
           "manifest_sha256": manifest_hash(command, params, inputs)}
    Path(path).write_text(json.dumps(_flatten(doc), indent=1, allow_nan=False) + "\n")
    return doc


def read_manifest(path):
    try:
        flat = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(flat, dict):
        raise ValidationError(f"manifest {path} is not a key-value document")
    doc = _unflatten(flat)
    for key in ("tool_version", "command", "manifest_sha256"):
        if key not in doc:
            raise ValidationError(f"manifest {path} lacks '{key}'")
    if manifest_hash(doc["command"], doc["params"], doc["inputs"]) != doc["manifest_sha256"]:
        raise ValidationError(f"manifest {path} was edited: its hash does not match its content")
    return doc


def hash_outputs(outdir, names):
    return {name: sha256_file(os.path.join(outdir, name)) for name in sorted(names)}
