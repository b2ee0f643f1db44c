"""MPFVOL1 volume and MPFSIN1 sinogram files.

Both formats are an ASCII header, a blank line, then raw little-endian
float32 data in C order. Decimal header fields use ``repr`` so float64
spacings and angles survive a round trip exactly.

MPFVOL1::

    MPFVOL1
    dims nx ny nz
    spacing sx sy sz
    dtype f32le
    <blank line>
    <nx*ny*nz float32>

MPFSIN1::

    MPFSIN1
    views n
    rows r
    cols c
    pitch p
    angles a_0 ... a_{n-1}
    <blank line>
    <n*r*c float32 values><n*r*c float32 weights>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .geometry import Volume
from .projector import ScanGeometry, Sinogram

VOL_MAGIC = "MPFVOL1"
SIN_MAGIC = "MPFSIN1"
_F32LE = np.dtype("<f4")


def _fmt(x: float) -> str:
    return repr(float(x))


def volume_bytes(v: Volume) -> bytes:
    nx, ny, nz = v.dims
    header = "\n".join([
        VOL_MAGIC,
        f"dims {nx} {ny} {nz}",
        "spacing " + " ".join(_fmt(s) for s in v.spacing),
        "dtype f32le",
        "",
        "",
    ])
    return header.encode("ascii") + v.values.astype(_F32LE).tobytes(order="C")


def sinogram_bytes(s: Sinogram) -> bytes:
    g = s.geometry
    header = "\n".join([
        SIN_MAGIC,
        f"views {g.n_views}",
        f"rows {g.n_det_rows}",
        f"cols {g.n_det_cols}",
        f"pitch {_fmt(g.det_pitch)}",
        "angles " + " ".join(_fmt(a) for a in g.angles),
        "",
        "",
    ])
    return (header.encode("ascii") + s.values.astype(_F32LE).tobytes(order="C")
            + s.weights.astype(_F32LE).tobytes(order="C"))


def _split_header(data: bytes, magic: str, path) -> tuple[dict[str, list[str]], bytes]:
    sep = data.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: missing blank line after header")
    try:
        lines = data[:sep].decode("ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not ASCII") from exc
    if lines[0] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {lines[0]!r}")
    fields = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            raise FormatError(f"{path}:{lineno}: empty header line")
        fields[parts[0]] = parts[1:]
    return fields, data[sep + 2:]


def _field(fields, key, count, cast, path):
    if key not in fields:
        raise FormatError(f"{path}: header field {key!r} missing")
    vals = fields[key]
    if count is not None and len(vals) != count:
        raise FormatError(f"{path}: field {key!r} needs {count} values, got {len(vals)}")
    try:
        return [cast(v) for v in vals]
    except ValueError as exc:
        raise FormatError(f"{path}: bad value in field {key!r}: {exc}") from exc


def parse_volume(data: bytes, path="<bytes>") -> Volume:
    fields, payload = _split_header(data, VOL_MAGIC, path)
    dims = _field(fields, "dims", 3, int, path)
    spacing = _field(fields, "spacing", 3, float, path)
    dtype = _field(fields, "dtype", 1, str, path)[0]
    if dtype != "f32le":
        raise FormatError(f"{path}: unsupported dtype {dtype!r}")
    n = int(np.prod(dims))
    if len(payload) != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype=_F32LE).astype(np.float64).reshape(dims)
    try:
        return Volume(values, tuple(spacing))
    except DimensionError as exc:
        raise FormatError(f"{path}: invalid volume contents: {exc}") from exc


def parse_sinogram(data: bytes, path="<bytes>") -> Sinogram:
    fields, payload = _split_header(data, SIN_MAGIC, path)
    n = _field(fields, "views", 1, int, path)[0]
    rows = _field(fields, "rows", 1, int, path)[0]
    cols = _field(fields, "cols", 1, int, path)[0]
    pitch = _field(fields, "pitch", 1, float, path)[0]
    angles = _field(fields, "angles", n, float, path)
    size = n * rows * cols
    if len(payload) != 8 * size:
        raise FormatError(f"{path}: expected {8 * size} data bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=_F32LE).astype(np.float64)
    try:
        g = ScanGeometry(tuple(angles), rows, cols, pitch)
        return Sinogram(g, arr[:size].reshape(g.shape), arr[size:].reshape(g.shape))
    except (ConfigError, DimensionError) as exc:
        raise FormatError(f"{path}: invalid sinogram contents: {exc}") from exc


def write_volume(path, v: Volume) -> Path:
    path = Path(path)
    path.write_bytes(volume_bytes(v))
    return path


def read_volume(path) -> Volume:
    path = Path(path)
    return parse_volume(path.read_bytes(), path)


def write_sinogram(path, s: Sinogram) -> Path:
    path = Path(path)
    path.write_bytes(sinogram_bytes(s))
    return path


def read_sinogram(path) -> Sinogram:
    path = Path(path)
    return parse_sinogram(path.read_bytes(), path)
