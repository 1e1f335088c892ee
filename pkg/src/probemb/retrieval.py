"""Cross-modal retrieval evaluation and uncertainty calibration metrics.

Recall@k uses cosine similarity over the stored (frozen) embeddings with
ties broken by ascending gallery index. Calibration bins queries into
equal-sized uncertainty levels, measures R@1 per level against the full
gallery, and summarizes the trend with the Spearman rank correlation S, the
linear-fit R^2, and their negated product -S*R^2 (1.0 for an ideal model
whose performance decays linearly with uncertainty).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterNetwork
from .data_io import CorrespondenceMap, EmbeddingStore
from .errors import DegenerateInputError, DomainError, ValidationError
from .uncertainty import batch_uncertainty

DIRECTIONS = ("i2t", "t2i")


@dataclass
class RetrievalTask:
    """Queries, gallery, and ground-truth matches for one direction."""

    queries: EmbeddingStore
    gallery: EmbeddingStore
    matches: CorrespondenceMap
    direction: str

    def validate(self) -> "RetrievalTask":
        if self.direction not in DIRECTIONS:
            raise ValidationError(f"direction must be one of {DIRECTIONS}")
        self.queries.validate()
        self.gallery.validate()
        match_sets = self.match_sets()
        for qid, matched in zip(self.queries.ids, match_sets):
            if not matched:
                raise ValidationError(f"query {qid!r} has no match in the gallery")
        return self

    def match_sets(self) -> list[set[int]]:
        """Gallery row indices matched to each query, in query order."""
        gallery_index = {sample_id: i for i, sample_id in enumerate(self.gallery.ids)}
        per_query: dict[str, set[int]] = {qid: set() for qid in self.queries.ids}
        for img, cap in self.matches.edges:
            qid, gid = (img, cap) if self.direction == "i2t" else (cap, img)
            if qid in per_query and gid in gallery_index:
                per_query[qid].add(gallery_index[gid])
        return [per_query[qid] for qid in self.queries.ids]


def task_from_stores(image_store: EmbeddingStore, caption_store: EmbeddingStore,
                     cmap: CorrespondenceMap, direction: str) -> RetrievalTask:
    if direction == "i2t":
        task = RetrievalTask(image_store, caption_store, cmap, direction)
    elif direction == "t2i":
        task = RetrievalTask(caption_store, image_store, cmap, direction)
    else:
        raise ValidationError(f"direction must be one of {DIRECTIONS}")
    return task.validate()


def _cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    def unit(m):
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return m / np.where(norms == 0.0, 1.0, norms)
    return unit(a) @ unit(b).T


def _recall_core(query_matrix: np.ndarray, match_sets: list[set[int]],
                 gallery_matrix: np.ndarray, k: int) -> float:
    sims = _cosine_matrix(query_matrix, gallery_matrix)
    # Stable sort on negated scores: ties resolve to the lower gallery index.
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = sum(
        1 for row, matched in zip(top, match_sets) if matched.intersection(row.tolist())
    )
    return hits / len(match_sets)


def recall_at_k(task: RetrievalTask, k: int) -> float:
    """Fraction of queries whose top-k gallery items contain a true match."""
    task.validate()
    if task.queries.n < 1:
        raise DomainError("task has no queries")
    if k < 1 or k > task.gallery.n:
        raise DomainError(f"k must be in [1, {task.gallery.n}], got {k}")
    return _recall_core(task.queries.matrix, task.match_sets(), task.gallery.matrix, k)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties receiving the average of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation: Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DomainError("spearman needs two equal-length 1-D sequences of length >= 2")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateInputError("spearman is undefined for constant input")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / np.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def r_squared_linear(x, y) -> float:
    """Coefficient of determination of the least-squares line of y on x.

    Returns 0 when y has no variance (stated convention).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise DomainError("r_squared_linear needs two equal-length 1-D sequences")
    if np.all(x == x[0]):
        raise DegenerateInputError("regression abscissa is constant")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 0.0
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / np.sum((x - x.mean()) ** 2))
    intercept = y.mean() - slope * x.mean()
    sse = float(np.sum((y - (slope * x + intercept)) ** 2))
    return float(min(max(1.0 - sse / sst, 0.0), 1.0))


def assign_uncertainty_levels(u, n_levels: int) -> np.ndarray:
    """Quantile-bin samples by uncertainty; level 0 is least uncertain.

    Samples are sorted ascending (ties by ascending index) and split into
    contiguous groups whose sizes differ by at most one, with the earlier
    levels taking the extra samples.
    """
    u = np.asarray(u, dtype=np.float64)
    if n_levels < 2:
        raise DomainError(f"n_levels must be >= 2, got {n_levels}")
    if len(u) < n_levels:
        raise DomainError(f"need at least {n_levels} samples, got {len(u)}")
    order = np.argsort(u, kind="stable")
    base, extra = divmod(len(u), n_levels)
    levels = np.empty(len(u), dtype=np.int64)
    start = 0
    for level in range(n_levels):
        size = base + (1 if level < extra else 0)
        levels[order[start : start + size]] = level
        start += size
    return levels


@dataclass
class LevelStats:
    level: int
    mean_uncertainty: float
    count: int
    recall_at_1: float


@dataclass
class CalibrationReport:
    n_levels: int
    levels: list[LevelStats]
    spearman: float
    r2: float
    minus_sr2: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_levels": self.n_levels,
                "levels": [
                    {
                        "level": s.level,
                        "mean_uncertainty": s.mean_uncertainty,
                        "count": s.count,
                        "recall_at_1": s.recall_at_1,
                    }
                    for s in self.levels
                ],
                "spearman": self.spearman,
                "r2": self.r2,
                "minus_sr2": self.minus_sr2,
            },
            indent=2,
        )


def evaluate_calibration(adapter: AdapterNetwork, task: RetrievalTask,
                         n_levels: int = 10, m_passes: int = 10, seed: int = 0,
                         use_level_mean_abscissa: bool = False) -> CalibrationReport:
    """Bin queries by predicted scalar uncertainty and measure R@1 per level.

    The adapter must belong to the query modality. S and R^2 are computed
    against the level index by default; ``use_level_mean_abscissa`` switches
    the abscissa to each level's mean uncertainty.
    """
    task.validate()
    if adapter.d_in != task.queries.d:
        raise DomainError(
            f"adapter width {adapter.d_in} does not match query width {task.queries.d}")
    batch = batch_uncertainty(adapter, task.queries.matrix, m_passes, seed)
    scalars = batch.scalar_total
    levels = assign_uncertainty_levels(scalars, n_levels)
    match_sets = task.match_sets()

    stats = []
    for level in range(n_levels):
        members = np.flatnonzero(levels == level)
        r1 = _recall_core(
            task.queries.matrix[members],
            [match_sets[i] for i in members],
            task.gallery.matrix,
            1,
        )
        stats.append(LevelStats(
            level=level,
            mean_uncertainty=float(scalars[members].mean()),
            count=len(members),
            recall_at_1=r1,
        ))

    xs = np.array([s.mean_uncertainty for s in stats]) if use_level_mean_abscissa \
        else np.arange(n_levels, dtype=np.float64)
    ys = np.array([s.recall_at_1 for s in stats])
    s_val = spearman(xs, ys)
    r2 = r_squared_linear(xs, ys)
    return CalibrationReport(
        n_levels=n_levels,
        levels=stats,
        spearman=s_val,
        r2=r2,
        minus_sr2=-s_val * r2,
    )
