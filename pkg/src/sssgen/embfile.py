"""Binary embedding files: 7-byte magic, little-endian uint32 row count
and dimension, then float32 rows in document-token order. Rows are
promoted to float64 on load."""

import struct

import numpy as np

MAGIC = b"SSSEMB1"
_HEADER = struct.Struct("<7sII")


class EmbeddingFileError(ValueError):
    pass


def write_embedding_file(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise EmbeddingFileError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes(order="C"))


def read_embedding_file(path):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise EmbeddingFileError(f"{path}: truncated header")
        magic, rows, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise EmbeddingFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return data.astype(np.float64)
