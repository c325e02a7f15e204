"""File formats: binary complex time-series datasets, CSV maps, PGM previews,
and flat key = value config/manifest files.

Dataset files ("CVF1"):
    magic   4 bytes ASCII "CVF1"
    version u32 little-endian, currently 1
    ndim    u32 (2 or 3)
    dims    ndim x u32
    T       u32
    payload voxel-major (row-major over the grid), per voxel T pairs of
            little-endian IEEE-754 float64 (re, im); exactly V*T*16 bytes.

Map files are CSV with a leading "# dims: ..." comment line; 3-D maps store
their slices one after another, one grid row per CSV line. Values use the
shortest round-tripping float representation, so write -> read -> write is
byte-stable.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data import ComplexDataset
from .errors import DataFormatError, InvalidSpecError

__all__ = [
    "write_dataset",
    "read_dataset",
    "write_map",
    "read_map",
    "write_pgm",
    "write_keyvalues",
    "read_keyvalues",
]

_MAGIC = b"CVF1"
_VERSION = 1


def write_dataset(path, dataset: ComplexDataset) -> None:
    """Write a dataset in the CVF1 binary layout (bit-exact round trip)."""
    path = Path(path)
    dims = dataset.dims
    header = _MAGIC + struct.pack(
        f"<II{len(dims)}II", _VERSION, len(dims), *dims, dataset.n_time
    )
    flat = dataset.voxel_view()
    payload = np.empty((flat.shape[0], flat.shape[1], 2), dtype="<f8")
    payload[..., 0] = flat.real
    payload[..., 1] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_dataset(path) -> ComplexDataset:
    """Read a CVF1 file, validating magic, version, and payload size."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}, expected {_MAGIC!r}")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}, expected {_VERSION}")
    if ndim not in (2, 3):
        raise DataFormatError(f"{path}: ndim must be 2 or 3, got {ndim}")
    header_len = 12 + 4 * ndim + 4
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    *dims, n_time = struct.unpack_from(f"<{ndim}II", raw, 12)
    n_vox = int(np.prod(dims))
    expected = header_len + n_vox * n_time * 16
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: payload length mismatch, expected {expected} bytes, got {len(raw)}"
        )
    payload = np.frombuffer(raw, dtype="<f8", offset=header_len)
    payload = payload.reshape(n_vox, n_time, 2)
    data = (payload[..., 0] + 1j * payload[..., 1]).reshape(*dims, n_time)
    return ComplexDataset(tuple(dims), data)


def _format_cell(v, as_int: bool) -> str:
    if as_int:
        return str(int(v))
    return repr(float(v))


def write_map(path, values: np.ndarray, integer: bool = False) -> None:
    """Write a 2-D or 3-D map as CSV (row-major, one value per cell)."""
    values = np.asarray(values)
    if values.ndim not in (2, 3):
        raise InvalidSpecError("maps must be 2-D or 3-D")
    rows = values.reshape(-1, values.shape[-1])
    lines = ["# dims: " + ",".join(str(d) for d in values.shape)]
    lines.extend(",".join(_format_cell(v, integer) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_map(path) -> np.ndarray:
    """Read a map CSV written by :func:`write_map`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    dims = None
    data_lines = []
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            body = stripped.lstrip("#").strip()
            if body.startswith("dims:"):
                dims = tuple(int(t) for t in body[5:].split(","))
            continue
        data_lines.append(stripped)
    if dims is None:
        raise DataFormatError(f"{path}: missing '# dims:' header")
    try:
        values = np.array([[float(tok) for tok in line.split(",")] for line in data_lines])
    except ValueError as exc:
        raise DataFormatError(f"{path}: unparseable cell ({exc})") from exc
    if values.size != int(np.prod(dims)):
        raise DataFormatError(
            f"{path}: expected {int(np.prod(dims))} cells for dims {dims}, got {values.size}"
        )
    return values.reshape(dims)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 image as binary PGM (P5, maxval 255)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise InvalidSpecError("PGM output requires a 2-D image")
    img = np.clip(np.round(image), 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())


def write_keyvalues(path, items: dict) -> None:
    """Write a flat 'key = value' file (one pair per line)."""
    lines = [f"{k} = {v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_keyvalues(path) -> dict:
    """Parse a flat 'key = value' file; '#' starts a comment, blanks ignored."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
