"""Fixed-shape numeric encoding of column text.

Each character maps to its 8-bit big-endian binary vector; a column becomes
an 8 x L matrix either by concatenating entry character streams up to the
cutoff L ("concat") or by averaging per-entry encodings ("mean").
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Column

MODES = ("concat", "mean")

CACHE_MAGIC = b"CLE1"
_MODE_BYTE = {"concat": 0, "mean": 1}
_BYTE_MODE = {v: k for k, v in _MODE_BYTE.items()}

# bit j of code c is floor(c / 2^(7-j)) mod 2 (most significant bit first)
_CHAR_BITS = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.float32)


@dataclass(frozen=True)
class EncodingConfig:
    cutoff: int = 250
    mode: str = "mean"

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class ColumnMatrix:
    """8 x L encoding of one column, plus the identity and config behind it."""

    values: np.ndarray
    column_id: str
    config: EncodingConfig


def encode_char(code: int) -> np.ndarray:
    """8-bit big-endian binary vector of a code point in [0, 255]."""
    if not 0 <= code <= 255:
        raise ValueError(f"code point out of 8-bit range: {code} (sanitize input first)")
    return _CHAR_BITS[code].copy()


def encode_entry(entry: str, cutoff: int) -> np.ndarray:
    """Encode one entry as a (cutoff, 8) matrix, zero-padded past its end.

    The entry must already be sanitized to code points <= 255.
    """
    out = np.zeros((cutoff, 8), dtype=np.float32)
    if entry:
        codes = np.frombuffer(entry[:cutoff].encode("latin-1"), dtype=np.uint8)
        out[: len(codes)] = _CHAR_BITS[codes]
    return out


def encode_column_concat(column: Column, config: EncodingConfig) -> ColumnMatrix:
    """Join entry character streams in row order (no separator), cut at L."""
    stream = "".join(column.entries)
    values = encode_entry(stream, config.cutoff).T.copy()
    return ColumnMatrix(values=values, column_id=column.column_id, config=config)


def encode_column_mean(column: Column, config: EncodingConfig) -> ColumnMatrix:
    """Elementwise average of all per-entry encodings; row-order invariant."""
    if not column.entries:
        raise ValueError(f"cannot average a zero-entry column: {column.column_id}")
    acc = np.zeros((config.cutoff, 8), dtype=np.float64)
    for entry in column.entries:
        acc += encode_entry(entry, config.cutoff)
    values = (acc / len(column.entries)).astype(np.float32).T.copy()
    return ColumnMatrix(values=values, column_id=column.column_id, config=config)


def encode_column(column: Column, config: EncodingConfig) -> ColumnMatrix:
    if config.mode == "concat":
        return encode_column_concat(column, config)
    return encode_column_mean(column, config)


def encode_columns(columns: list[Column], config: EncodingConfig) -> list[ColumnMatrix]:
    return [encode_column(c, config) for c in columns]


def write_matrix_cache(path: str | Path, matrices: list[ColumnMatrix]) -> None:
    """Binary cache: magic, then per-column records of id, mode, L, values."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        for m in matrices:
            idb = m.column_id.encode("utf-8")
            fh.write(struct.pack("<I", len(idb)))
            fh.write(idb)
            fh.write(struct.pack("<B", _MODE_BYTE[m.config.mode]))
            fh.write(struct.pack("<I", m.config.cutoff))
            fh.write(np.ascontiguousarray(m.values, dtype="<f4").tobytes())


def read_matrix_cache(path: str | Path) -> list[ColumnMatrix]:
    data = Path(path).read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise ValueError(f"not a {CACHE_MAGIC.decode()} matrix cache: {path}")
    matrices = []
    pos = 4
    while pos < len(data):
        try:
            (id_len,) = struct.unpack_from("<I", data, pos)
            pos += 4
            column_id = data[pos : pos + id_len].decode("utf-8")
            pos += id_len
            (mode_byte,) = struct.unpack_from("<B", data, pos)
            pos += 1
            (cutoff,) = struct.unpack_from("<I", data, pos)
            pos += 4
            n_bytes = 8 * cutoff * 4
            values = np.frombuffer(data[pos : pos + n_bytes], dtype="<f4").reshape(8, cutoff)
            if values.size != 8 * cutoff:
                raise struct.error("short record")
            pos += n_bytes
        except (struct.error, IndexError) as exc:
            raise ValueError(f"truncated matrix cache: {path}") from exc
        if mode_byte not in _BYTE_MODE:
            raise ValueError(f"unknown encoding mode byte {mode_byte} in {path}")
        config = EncodingConfig(cutoff=cutoff, mode=_BYTE_MODE[mode_byte])
        matrices.append(ColumnMatrix(values=values.copy(), column_id=column_id, config=config))
    return matrices
