"""Artifact files: CSV series, sorted JSON, legacy-ASCII VTK, npz states, manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__


class ArtifactIOError(OSError):
    """Failure to read or write an artifact; the message names the path."""


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.16e" % float(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    """RFC-4180 CSV; floats in exponent format with 17 significant digits."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return Path(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, data):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(data), fh, indent=1, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return Path(path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_npz(path, **arrays):
    try:
        np.savez_compressed(path, **arrays)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return Path(path)


# -- VTK --------------------------------------------------------------------------

def write_vtk_rectilinear(path, x, z, point_data=None, title="porolayer field"):
    """Legacy-ASCII rectilinear grid on ``x`` by ``z`` (y collapsed to one plane).

    ``point_data`` maps names to arrays with one value (scalar) or two values
    (vector, padded to 3D) per grid point, ordered C-style over ``(x, z)``.
    """
    x, z = np.asarray(x, float), np.asarray(z, float)
    n = len(x) * len(z)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET RECTILINEAR_GRID",
             f"DIMENSIONS {len(x)} 1 {len(z)}",
             f"X_COORDINATES {len(x)} double", " ".join("%.16e" % v for v in x),
             "Y_COORDINATES 1 double", "0",
             f"Z_COORDINATES {len(z)} double", " ".join("%.16e" % v for v in z)]
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, arr in point_data.items():
            a = np.asarray(arr, float).reshape(len(x), len(z), -1)
            # VTK orders points with x fastest
            a = a.transpose(1, 0, 2).reshape(n, -1)
            if a.shape[1] == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += ["%.16e" % v for v in a[:, 0]]
            else:
                lines.append(f"VECTORS {name} double")
                for r in a:
                    lines.append("%.16e 0 %.16e" % (r[0], r[1]))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return Path(path)


def read_vtk_point_data(path):
    """Minimal reader for files written by :func:`write_vtk_rectilinear`."""
    toks = Path(path).read_text(encoding="utf-8").split("\n")
    out, i = {}, 0
    while i < len(toks):
        parts = toks[i].split()
        if parts[:1] == ["SCALARS"]:
            name, i = parts[1], i + 2
            vals = []
            while i < len(toks) and toks[i] and not toks[i][0].isalpha():
                vals.append(float(toks[i]))
                i += 1
            out[name] = np.array(vals)
            continue
        if parts[:1] == ["VECTORS"]:
            name, i = parts[1], i + 1
            vals = []
            while i < len(toks) and toks[i] and not toks[i][0].isalpha():
                vals.append([float(v) for v in toks[i].split()])
                i += 1
            out[name] = np.array(vals)
            continue
        i += 1
    return out


# -- manifest -----------------------------------------------------------------------

def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(data):
    blob = json.dumps(_jsonable(data), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, subcommand, inputs, outputs, config=None, timings=None,
                   extra=None):
    """Record inputs, outputs with content hashes, config hash and timings."""
    out_dir = Path(out_dir)
    data = {
        "subcommand": subcommand,
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out_dir),
        "outputs": {Path(p).name: file_digest(p) for p in sorted(map(str, outputs))},
        "config_hash": config_hash(config) if config is not None else None,
        "version": __version__,
        "python": platform.python_version(),
        "timings": timings or {},
    }
    if extra:
        data.update(extra)
    return write_json(out_dir / "manifest.json", data)


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ArtifactIOError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    return Path(path)
