"""Embedding stores, correspondence maps, file formats, and synthetic data.

The embedding file format is a small custom binary (magic ``PVLMEMB1``) so
the core stays dependency-free; matrices are f32 on disk and promoted to f64
in memory. Correspondences are a tab-separated text file. The synthetic
generator produces a desk-scale stand-in for paired image/caption embeddings
with controlled per-sample noise and a recorded ground-truth noise table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, ValidationError

EMB_MAGIC = b"PVLMEMB1"
MODALITIES = ("image", "text")


@dataclass
class EmbeddingStore:
    """A modality's frozen-encoder embeddings plus sample IDs."""

    modality: str
    ids: list[str]
    matrix: np.ndarray  # (n, d) float64

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def validate(self) -> "EmbeddingStore":
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.matrix.ndim != 2 or self.n < 1 or self.d < 1:
            raise ValidationError(f"matrix must be (n>=1, d>=1), got {self.matrix.shape}")
        if len(self.ids) != self.n:
            raise ValidationError(f"{len(self.ids)} ids for {self.n} rows")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("duplicate sample IDs")
        if not np.all(np.isfinite(self.matrix)):
            raise ValidationError("matrix contains non-finite values")
        return self

    def row(self, sample_id: str) -> np.ndarray:
        try:
            return self.matrix[self.ids.index(sample_id)]
        except ValueError:
            raise ValidationError(f"unknown sample ID {sample_id!r}") from None


@dataclass
class CorrespondenceMap:
    """Many-to-many ground-truth matches between image and caption IDs."""

    edges: list[tuple[str, str]]

    def validate(self, image_store: EmbeddingStore, caption_store: EmbeddingStore) -> "CorrespondenceMap":
        seen = set()
        image_ids = set(image_store.ids)
        caption_ids = set(caption_store.ids)
        for img, cap in self.edges:
            if img not in image_ids:
                raise ValidationError(f"edge references unknown image ID {img!r}")
            if cap not in caption_ids:
                raise ValidationError(f"edge references unknown caption ID {cap!r}")
            if (img, cap) in seen:
                raise ValidationError(f"duplicate edge ({img!r}, {cap!r})")
            seen.add((img, cap))
        return self

    def captions_of(self, image_id: str) -> list[str]:
        return [cap for img, cap in self.edges if img == image_id]

    def images_of(self, caption_id: str) -> list[str]:
        return [img for img, cap in self.edges if cap == caption_id]


def write_embeddings(store: EmbeddingStore) -> bytes:
    """Serialize a store; matrices are written as little-endian f32."""
    store.validate()
    parts = [EMB_MAGIC]
    parts.append(struct.pack("<B", MODALITIES.index(store.modality)))
    parts.append(struct.pack("<II", store.n, store.d))
    for sample_id in store.ids:
        raw = sample_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"sample ID too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())
    return b"".join(parts)


def read_embeddings(data: bytes) -> EmbeddingStore:
    """Parse an embedding file; format problems report their byte offset."""
    if len(data) < 8:
        raise FormatError("file truncated before magic", offset=len(data))
    if data[:8] != EMB_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r}", offset=0)
    if len(data) < 17:
        raise FormatError("file truncated inside header", offset=len(data))
    modality_code = data[8]
    if modality_code >= len(MODALITIES):
        raise FormatError(f"unknown modality code {modality_code}", offset=8)
    n, d = struct.unpack_from("<II", data, 9)
    if n < 1 or d < 1:
        raise FormatError(f"invalid dimensions n={n}, d={d}", offset=9)
    offset = 17
    ids = []
    for _ in range(n):
        if len(data) < offset + 2:
            raise FormatError("file truncated inside ID block", offset=len(data))
        (length,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if len(data) < offset + length:
            raise FormatError("file truncated inside an ID string", offset=len(data))
        try:
            ids.append(data[offset : offset + length].decode("utf-8"))
        except UnicodeDecodeError as err:
            raise FormatError(f"invalid UTF-8 in ID: {err}", offset=offset) from None
        offset += length
    count = n * d
    if len(data) < offset + 4 * count:
        raise FormatError("file truncated inside matrix", offset=len(data))
    flat = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise FormatError("non-finite value in matrix", offset=offset + bad * 4)
    end = offset + 4 * count
    if len(data) != end:
        raise FormatError(f"{len(data) - end} trailing bytes after matrix", offset=end)
    matrix = flat.astype(np.float64).reshape(n, d)
    store = EmbeddingStore(MODALITIES[modality_code], ids, matrix)
    return store.validate()


def write_correspondences(cmap: CorrespondenceMap) -> str:
    """One ``image_id<TAB>caption_id`` line per edge."""
    return "".join(f"{img}\t{cap}\n" for img, cap in cmap.edges)


def read_correspondences(text, image_store: EmbeddingStore,
                         caption_store: EmbeddingStore) -> CorrespondenceMap:
    """Parse and validate an edge list against its two stores.

    ``#`` starts a comment line; blank lines are ignored. Problems report the
    1-based line number.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    image_ids = set(image_store.ids)
    caption_ids = set(caption_store.ids)
    edges: list[tuple[str, str]] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ValidationError(f"expected 'image_id<TAB>caption_id', got {raw!r}", line=lineno)
        img, cap = fields
        if img not in image_ids:
            raise ValidationError(f"unknown image ID {img!r}", line=lineno)
        if cap not in caption_ids:
            raise ValidationError(f"unknown caption ID {cap!r}", line=lineno)
        if (img, cap) in seen:
            raise ValidationError(f"duplicate edge ({img!r}, {cap!r})", line=lineno)
        seen.add((img, cap))
        edges.append((img, cap))
    return CorrespondenceMap(edges)


def write_noise_table(noise: list[tuple[str, float]]) -> str:
    lines = ["id,sigma"]
    lines += [f"{sample_id},{sigma:.17g}" for sample_id, sigma in noise]
    return "\n".join(lines) + "\n"


def read_noise_table(text: str) -> dict[str, float]:
    lines = text.splitlines()
    if not lines or lines[0] != "id,sigma":
        raise ValidationError("noise table must start with header 'id,sigma'", line=1)
    table = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        sample_id, _, value = line.partition(",")
        try:
            table[sample_id] = float(value)
        except ValueError:
            raise ValidationError(f"bad sigma value {value!r}", line=lineno) from None
    return table


@dataclass
class SynthConfig:
    """Synthetic paired-embedding generator settings."""

    n_concepts: int = 16
    d: int = 64
    images_per_concept: int = 8
    captions_per_concept: int = 16
    noise_low: float = 0.05
    noise_high: float = 0.6
    cross_offset: float = 0.2
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if min(self.n_concepts, self.d, self.images_per_concept, self.captions_per_concept) < 1:
            raise DomainError("counts and dimension must all be >= 1")
        if self.noise_low < 0 or self.noise_high < 0 or self.noise_low > self.noise_high:
            raise DomainError("need 0 <= noise_low <= noise_high")
        if self.cross_offset < 0:
            raise DomainError("cross_offset must be nonnegative")
        return self


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    return m / np.where(norms == 0.0, 1.0, norms)


# Per-dimension noise std is sigma * NOISE_GAIN / sqrt(d), so the injected
# displacement has norm ~= sigma * NOISE_GAIN regardless of d. The gain sets
# desk-scale retrieval difficulty: at the default noise range the hardest
# samples sit far enough from their concept that nearest-caption retrieval
# genuinely fails for them.
NOISE_GAIN = 6.0


def _tangent_noise(centers: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Remove the radial component of each noise draw.

    Keeps the recorded noise scale identifiable from the final embedding:
    radial noise is partially cancelled by the normalization and would blur
    the sigma-to-distance relationship the ground-truth table promises.
    """
    units = _unit_rows(centers)[:, None, :]
    radial = np.sum(raw * units, axis=-1, keepdims=True)
    return raw - radial * units


def synth_generate(cfg: SynthConfig):
    """Generate (image store, caption store, correspondences, noise table).

    Every sample is a unit-normalized concept vector plus tangent noise whose
    per-sample scale is drawn uniformly from [noise_low, noise_high] and
    recorded in the noise table. Captions are additionally displaced by
    cross_offset along a fixed per-concept direction before normalization,
    creating a systematic image/caption gap. Matrices are rounded to f32 so
    in-memory data is identical to what a file roundtrip yields.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    k, d = cfg.n_concepts, cfg.d
    mi, mc = cfg.images_per_concept, cfg.captions_per_concept

    concepts = _unit_rows(rng.standard_normal((k, d)))
    cap_shift_dirs = _unit_rows(rng.standard_normal((k, d)))
    cap_centers = concepts + cfg.cross_offset * cap_shift_dirs

    sigmas_img = rng.uniform(cfg.noise_low, cfg.noise_high, size=(k, mi))
    noise_img = _tangent_noise(concepts, rng.standard_normal((k, mi, d)))
    sigmas_cap = rng.uniform(cfg.noise_low, cfg.noise_high, size=(k, mc))
    noise_cap = _tangent_noise(cap_centers, rng.standard_normal((k, mc, d)))

    gain = NOISE_GAIN / np.sqrt(d)
    img_matrix = _unit_rows(concepts[:, None, :] + gain * sigmas_img[..., None] * noise_img)
    cap_matrix = _unit_rows(cap_centers[:, None, :] + gain * sigmas_cap[..., None] * noise_cap)

    img_ids = [f"img{c:03d}_{j:02d}" for c in range(k) for j in range(mi)]
    cap_ids = [f"cap{c:03d}_{j:02d}" for c in range(k) for j in range(mc)]

    f32 = lambda m: m.reshape(-1, d).astype(np.float32).astype(np.float64)
    image_store = EmbeddingStore("image", img_ids, f32(img_matrix)).validate()
    caption_store = EmbeddingStore("text", cap_ids, f32(cap_matrix)).validate()

    edges = [
        (f"img{c:03d}_{i:02d}", f"cap{c:03d}_{j:02d}")
        for c in range(k)
        for i in range(mi)
        for j in range(mc)
    ]
    cmap = CorrespondenceMap(edges).validate(image_store, caption_store)

    noise_table = [
        (sample_id, float(sigma))
        for sample_id, sigma in zip(img_ids, sigmas_img.reshape(-1))
    ] + [
        (sample_id, float(sigma))
        for sample_id, sigma in zip(cap_ids, sigmas_cap.reshape(-1))
    ]
    return image_store, caption_store, cmap, noise_table


@dataclass
class PairedEmbeddings:
    """Training pairs: one row per matched image/caption edge."""

    z_v: np.ndarray  # (n_pairs, d)
    z_t: np.ndarray  # (n_pairs, d)

    @property
    def n(self) -> int:
        return self.z_v.shape[0]

    @property
    def d(self) -> int:
        return self.z_v.shape[1]


def expand_pairs(image_store: EmbeddingStore, caption_store: EmbeddingStore,
                 cmap: CorrespondenceMap) -> PairedEmbeddings:
    """Expand a correspondence map into positive training pairs (edge order)."""
    cmap.validate(image_store, caption_store)
    if image_store.d != caption_store.d:
        raise ValidationError(
            f"stores have different widths: {image_store.d} vs {caption_store.d}"
        )
    img_index = {sample_id: i for i, sample_id in enumerate(image_store.ids)}
    cap_index = {sample_id: i for i, sample_id in enumerate(caption_store.ids)}
    vi = [img_index[img] for img, _ in cmap.edges]
    ti = [cap_index[cap] for _, cap in cmap.edges]
    return PairedEmbeddings(image_store.matrix[vi], caption_store.matrix[ti])
