"""Uncertainty-driven downstream procedures: active sample selection and
pretrained-model selection.

Active selection returns the budget samples with the largest scalar total
uncertainty (the ones a labeling pass would help most). Model selection
scores every candidate's vision adapter by mean uncertainty on the unlabeled
target images and picks the least uncertain one; a uniform parameter
interpolation of all candidates is scored alongside as a comparability
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .adapter import AdapterNetwork, interpolate_adapters
from .data_io import EmbeddingStore
from .errors import DomainError
from .uncertainty import batch_uncertainty


@dataclass
class ModelCandidate:
    """A trained adapter pair plus where it came from."""

    name: str
    adapter_v: AdapterNetwork
    adapter_t: AdapterNetwork | None = None
    provenance: str = ""

    def validate(self) -> "ModelCandidate":
        self.adapter_v.validate()
        if self.adapter_t is not None:
            self.adapter_t.validate()
            if self.adapter_t.d_in != self.adapter_v.d_in:
                raise DomainError(f"candidate {self.name!r}: adapters disagree on width")
        return self


@dataclass
class SelectionResult:
    """Candidates ranked by mean uncertainty, least uncertain first."""

    ranking: list[tuple[str, float]]
    selected: str
    interpolated_score: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "candidates": [
                    {"name": name, "mean_uncertainty": score}
                    for name, score in self.ranking
                ],
                "interpolated_mean_uncertainty": self.interpolated_score,
                "selected": self.selected,
            },
            indent=2,
        )


def active_select(adapter_v: AdapterNetwork, images: EmbeddingStore, budget: int,
                  m_passes: int = 10, seed: int = 0) -> list[str]:
    """IDs of the ``budget`` most uncertain samples, most uncertain first.

    Ties break by ascending ID so the selection is reproducible.
    """
    images.validate()
    if not (1 <= budget <= images.n):
        raise DomainError(f"budget must be in [1, {images.n}], got {budget}")
    if adapter_v.d_in != images.d:
        raise DomainError(f"adapter width {adapter_v.d_in} does not match store width {images.d}")
    batch = batch_uncertainty(adapter_v, images.matrix, m_passes, seed)
    order = sorted(range(images.n), key=lambda i: (-batch.scalar_total[i], images.ids[i]))
    return [images.ids[i] for i in order[:budget]]


def model_select(candidates: list[ModelCandidate], target_images: EmbeddingStore,
                 m_passes: int = 10, seed: int = 0) -> SelectionResult:
    """Rank candidates by mean scalar uncertainty on the target images.

    Every candidate is scored with its own vision adapter under identical
    dropout streams; the uniform interpolation of all candidates' vision
    adapters is scored the same way and reported as a baseline.
    """
    if len(candidates) < 2:
        raise DomainError(f"model selection needs >= 2 candidates, got {len(candidates)}")
    names = [c.name for c in candidates]
    if len(set(names)) != len(names):
        raise DomainError("candidate names must be unique")
    target_images.validate()
    for candidate in candidates:
        candidate.validate()
        if candidate.adapter_v.d_in != target_images.d:
            raise DomainError(
                f"candidate {candidate.name!r} width {candidate.adapter_v.d_in} "
                f"does not match target width {target_images.d}")

    def mean_uncertainty(net: AdapterNetwork) -> float:
        return float(batch_uncertainty(net, target_images.matrix, m_passes, seed)
                     .scalar_total.mean())

    # Canonical (name) order keeps the blended tensors bit-identical no
    # matter how the caller ordered the candidates.
    by_name = sorted(candidates, key=lambda c: c.name)
    interpolated = interpolate_adapters(
        [c.adapter_v for c in by_name],
        np.full(len(candidates), 1.0 / len(candidates)),
    )
    ranking = sorted(
        ((c.name, mean_uncertainty(c.adapter_v)) for c in candidates),
        key=lambda pair: (pair[1], pair[0]),
    )
    return SelectionResult(
        ranking=ranking,
        selected=ranking[0][0],
        interpolated_score=mean_uncertainty(interpolated),
    )
