"""Reading and writing cubes, spectral libraries and noise descriptions.

Cube files are a raw little-endian payload plus a JSON sidecar header with
the same stem (``scene.bin`` / ``scene.json``)::

    {"width": 50, "height": 50, "bands": 100, "dtype": "f64",
     "layout": "band-sequential", "order": "row-major",
     "byte_order": "little-endian"}

The payload stores band 0 for all pixels (row-major), then band 1, and so on.
Abundance, std and presence maps are written as cubes with ``bands = R``.
"""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np

from .model import EndmemberMatrix, EPUnmixError, HyperImage, NoiseModel

SCHEMA = "epunmix/1"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_HEADER_KEYS = ("width", "height", "bands", "dtype", "layout", "order", "byte_order")
_FIXED = {"layout": "band-sequential", "order": "row-major", "byte_order": "little-endian"}


class CubeFormatError(EPUnmixError):
    pass


class CubeSizeError(CubeFormatError):
    """Payload length disagrees with the header."""


class UnknownDtypeError(CubeFormatError):
    pass


class MalformedHeaderError(CubeFormatError):
    pass


class LibraryFormatError(EPUnmixError):
    pass


def cube_paths(path):
    """Return ``(payload, header)`` paths for either member of a cube pair."""
    path = Path(path)
    if path.suffix == ".json":
        return path.with_suffix(".bin"), path
    return path, path.with_suffix(".json")


def write_cube(path, data, width: int | None = None, height: int | None = None, dtype: str = "f64"):
    """Write an image or an ``(bands, N)`` map stack. Returns the payload path."""
    if isinstance(data, HyperImage):
        width, height, arr = data.width, data.height, data.data
    else:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
    if width is None or height is None:
        raise ValueError("width and height are required for raw arrays")
    if dtype not in _DTYPES:
        raise UnknownDtypeError(f"unknown dtype {dtype!r}")
    if arr.shape[1] != width * height:
        raise ValueError("array does not match the stated grid size")
    payload, header = cube_paths(path)
    payload.parent.mkdir(parents=True, exist_ok=True)
    meta = {"width": int(width), "height": int(height), "bands": int(arr.shape[0]), "dtype": dtype, **_FIXED}
    header.write_text(json.dumps(meta, indent=2) + "\n")
    payload.write_bytes(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())
    return payload


def _read_header(header: Path) -> dict:
    try:
        meta = json.loads(header.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"cannot parse cube header {header}: {exc}") from exc
    if not isinstance(meta, dict):
        raise MalformedHeaderError("cube header must be a JSON object")
    missing = [k for k in _HEADER_KEYS if k not in meta]
    if missing:
        raise MalformedHeaderError(f"cube header missing fields: {', '.join(missing)}")
    for key in ("width", "height", "bands"):
        val = meta[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise MalformedHeaderError(f"header field {key!r} must be a positive integer, got {val!r}")
    if meta["dtype"] not in _DTYPES:
        raise UnknownDtypeError(f"unknown dtype {meta['dtype']!r}")
    for key, expected in _FIXED.items():
        if meta[key] != expected:
            raise MalformedHeaderError(f"unsupported {key} {meta[key]!r} (expected {expected!r})")
    return meta


def read_cube_array(path):
    """Return ``(array (bands, N), width, height)`` without validating values."""
    payload, header = cube_paths(path)
    meta = _read_header(header)
    dt = _DTYPES[meta["dtype"]]
    raw = payload.read_bytes()
    n = meta["width"] * meta["height"] * meta["bands"]
    if len(raw) != n * dt.itemsize:
        raise CubeSizeError(f"payload {payload} has {len(raw)} bytes, header implies {n * dt.itemsize}")
    arr = np.frombuffer(raw, dtype=dt).astype(np.float64).reshape(meta["bands"], -1)
    return arr, meta["width"], meta["height"]


def read_cube(path) -> HyperImage:
    arr, width, height = read_cube_array(path)
    return HyperImage(width, height, arr)


def _parse_row(row, lineno):
    try:
        return [float(cell) for cell in row]
    except ValueError as exc:
        raise LibraryFormatError(f"line {lineno}: non-numeric cell ({exc})") from None


def read_library(path) -> EndmemberMatrix:
    """Read an L x R CSV library, one band per row, skipping a header row."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if not rows and lineno == 1:
                try:
                    [float(c) for c in row]
                except ValueError:
                    continue  # header
            rows.append((lineno, row))
    if not rows:
        raise LibraryFormatError(f"{path}: no numeric rows")
    width = len(rows[0][1])
    values = []
    for lineno, row in rows:
        if len(row) != width:
            raise LibraryFormatError(f"line {lineno}: expected {width} columns, found {len(row)}")
        values.append(_parse_row(row, lineno))
    spectra = np.array(values)
    if np.any(spectra < 0):
        warnings.warn(f"{path}: library contains negative reflectance values", stacklevel=2)
    try:
        return EndmemberMatrix(spectra)
    except ValueError as exc:
        raise LibraryFormatError(f"{path}: {exc}") from exc


def write_library(path, endmembers, names=None):
    spectra = endmembers.spectra if isinstance(endmembers, EndmemberMatrix) else np.asarray(endmembers)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if names is not None:
            w.writerow(names)
        for row in spectra:
            w.writerow([repr(float(x)) for x in row])
    return path


def noise_to_dict(noise: NoiseModel) -> dict:
    out = {"schema": SCHEMA, "kind": noise.kind, "bands": noise.n_bands}
    if noise.kind == "isotropic":
        out["variance"] = float(noise.values)
    elif noise.kind == "diagonal":
        out["variances"] = noise.values.tolist()
    else:
        out["covariance"] = noise.values.tolist()
    return out


def noise_from_dict(d: dict) -> NoiseModel:
    kind = d.get("kind")
    if kind == "isotropic":
        return NoiseModel.isotropic(float(d["variance"]), int(d["bands"]))
    if kind == "diagonal":
        return NoiseModel.diagonal(d["variances"])
    if kind == "full":
        return NoiseModel.full(d["covariance"])
    raise ValueError(f"unknown noise kind {kind!r}")


def write_noise(path, noise: NoiseModel):
    path = Path(path)
    path.write_text(json.dumps(noise_to_dict(noise), indent=2) + "\n")
    return path


def read_noise(path) -> NoiseModel:
    return noise_from_dict(json.loads(Path(path).read_text()))
