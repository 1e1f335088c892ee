"""Writers for the embedding-store and correspondence file formats.

This mirrors the consumer pipeline's on-disk contract so exported files load
there without warnings: little-endian, magic ``PVLMEMB1``, u8 modality
(0 image / 1 text), u32 n, u32 d, length-prefixed UTF-8 IDs (u16), then the
n x d float32 matrix row-major. Correspondences are ``image<TAB>caption``
text lines.
"""

from __future__ import annotations

import struct

import numpy as np

EMB_MAGIC = b"PVLMEMB1"
MODALITIES = ("image", "text")


class ExportFormatError(ValueError):
    pass


def write_embeddings(modality: str, ids: list[str], matrix: np.ndarray) -> bytes:
    if modality not in MODALITIES:
        raise ExportFormatError(f"unknown modality {modality!r}")
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ExportFormatError(f"matrix must be (n>=1, d>=1), got {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise ExportFormatError(f"{len(ids)} ids for {matrix.shape[0]} rows")
    if len(set(ids)) != len(ids):
        raise ExportFormatError("duplicate sample IDs")
    if not np.all(np.isfinite(matrix)):
        raise ExportFormatError("matrix contains non-finite values")
    parts = [EMB_MAGIC, struct.pack("<B", MODALITIES.index(modality)),
             struct.pack("<II", matrix.shape[0], matrix.shape[1])]
    for sample_id in ids:
        raw = sample_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ExportFormatError(f"sample ID too long: {sample_id!r}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    return b"".join(parts)


def write_correspondences(edges: list[tuple[str, str]]) -> str:
    return "".join(f"{img}\t{cap}\n" for img, cap in edges)
