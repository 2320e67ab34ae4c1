"""Binary container for named dense matrices, with id-list sidecars."""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .data import DataError

MAGIC = b"CSMX"
VERSION = 1

_DTYPES = {1: "<f8", 2: "<f4"}
_DTYPE_CODES = {np.dtype("float64"): 1, np.dtype("float32"): 2}


def save_matrix(path, sections: dict[str, np.ndarray]) -> None:
    """Write named 2-D matrices; payloads are row-major with a CRC32 each."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(sections)))
        for name, mat in sections.items():
            mat = np.atleast_2d(np.asarray(mat))
            if mat.dtype not in _DTYPE_CODES:
                mat = mat.astype(np.float64)
            if not np.all(np.isfinite(mat)):
                raise DataError(f"section {name!r} contains non-finite values")
            code = _DTYPE_CODES[mat.dtype]
            payload = np.ascontiguousarray(mat.astype(_DTYPES[code])).tobytes()
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<QQB", mat.shape[0], mat.shape[1], code))
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_matrix(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a matrix container")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
    except struct.error:
        raise DataError(f"{path}: truncated header") from None
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    sections: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            rows, cols, code = struct.unpack_from("<QQB", raw, off)
            off += 17
        except (struct.error, UnicodeDecodeError):
            raise DataError(f"{path}: truncated or corrupt section header") from None
        if code not in _DTYPES:
            raise DataError(f"{path}: unknown dtype code {code} in section {name!r}")
        nbytes = rows * cols * int(_DTYPES[code][-1])
        payload = raw[off:off + nbytes]
        if len(payload) != nbytes:
            raise DataError(f"{path}: truncated payload in section {name!r}")
        off += nbytes
        try:
            (crc,) = struct.unpack_from("<I", raw, off)
        except struct.error:
            raise DataError(f"{path}: missing checksum for section {name!r}") from None
        off += 4
        if zlib.crc32(payload) != crc:
            raise DataError(f"{path}: checksum mismatch in section {name!r}")
        sections[name] = np.frombuffer(payload, dtype=_DTYPES[code]).reshape(rows, cols).copy()
    return sections


def save_ids(path, ids: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in ids:
            fh.write(i + "\n")


def load_ids(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def save_params(path, params: dict[str, dict[str, np.ndarray]]) -> None:
    """Persist a network ParamSet, one section per layer tensor."""
    sections = {}
    for layer, tensors in params.items():
        for key, value in tensors.items():
            arr = np.asarray(value)
            sections[f"{layer}:{key}:{arr.ndim}:" + ",".join(map(str, arr.shape))] = \
                arr.reshape(arr.shape[0] if arr.ndim else 1, -1)
    save_matrix(path, sections)


def load_params(path) -> dict[str, dict[str, np.ndarray]]:
    params: dict[str, dict[str, np.ndarray]] = {}
    for name, mat in load_matrix(path).items():
        layer, key, ndim, shape_s = name.rsplit(":", 3)
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        params.setdefault(layer, {})[key] = mat.reshape(shape)
    return params
