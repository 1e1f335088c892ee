"""Aleatoric, epistemic, and total uncertainty for adapter predictions.

Aleatoric uncertainty is the closed-form per-dimension variance of the
predicted generalized Gaussian (from a dropout-off forward pass); epistemic
uncertainty is the population variance of the predicted means across M
dropout-enabled passes; total is their sum and the scalar aggregate is the
mean over dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adapter import AdapterNetwork, AdapterOutput, forward
from .errors import DomainError
from .ggd import variance_from_scale_shape

DEFAULT_M_PASSES = 10


@dataclass
class UncertaintyReport:
    """Per-sample uncertainty decomposition (embedding units squared)."""

    aleatoric: np.ndarray
    epistemic: np.ndarray
    total: np.ndarray
    scalar: float
    m_passes: int


def aleatoric(out: AdapterOutput) -> np.ndarray:
    """Closed-form variance of the predicted distribution, per dimension."""
    return variance_from_scale_shape(out.alpha, out.beta)


def epistemic(net: AdapterNetwork, z, m: int, rng: np.random.Generator) -> np.ndarray:
    """Population variance of M dropout-on mean predictions, per dimension."""
    if m < 2:
        raise DomainError(f"epistemic uncertainty needs m >= 2 passes, got {m}")
    mus = np.stack([forward(net, z, dropout_on=True, rng=rng).mu for _ in range(m)])
    # Shift by the first pass so identical passes yield exactly zero.
    return np.var(mus - mus[0], axis=0)  # population variance (divide by M)


def total_uncertainty(net: AdapterNetwork, z, m: int, rng: np.random.Generator,
                      average_aleatoric_over_passes: bool = False) -> UncertaintyReport:
    """Aleatoric (dropout off) plus epistemic (M dropout passes).

    With ``average_aleatoric_over_passes`` the aleatoric part is instead the
    mean of the per-pass dropout-on variances.
    """
    if m < 2:
        raise DomainError(f"total uncertainty needs m >= 2 passes, got {m}")
    if average_aleatoric_over_passes:
        passes = [forward(net, z, dropout_on=True, rng=rng) for _ in range(m)]
        alea = np.mean([aleatoric(out) for out in passes], axis=0)
        mus = np.stack([out.mu for out in passes])
        epis = np.var(mus - mus[0], axis=0)
    else:
        alea = aleatoric(forward(net, z, dropout_on=False))
        epis = epistemic(net, z, m, rng)
    total = alea + epis
    return UncertaintyReport(aleatoric=alea, epistemic=epis, total=total,
                             scalar=float(np.mean(total)), m_passes=m)


@dataclass
class UncertaintyBatch:
    """Scalar uncertainty decomposition for every row of a store."""

    scalar_total: np.ndarray
    scalar_aleatoric: np.ndarray
    scalar_epistemic: np.ndarray
    m_passes: int


def batch_uncertainty(net: AdapterNetwork, matrix: np.ndarray, m: int,
                      seed: int) -> UncertaintyBatch:
    """Scalar uncertainties for a whole (n, d) matrix of embeddings.

    Each dropout pass uses a generator derived from (seed, pass index), so
    passes are independent, reproducible, and order-insensitive; the
    reduction over passes is a fixed-order sum.
    """
    if m < 2:
        raise DomainError(f"batch uncertainty needs m >= 2 passes, got {m}")
    matrix = np.asarray(matrix, dtype=np.float64)
    alea = aleatoric(forward(net, matrix, dropout_on=False))
    mus = np.stack([
        forward(net, matrix, dropout_on=True,
                rng=np.random.default_rng(np.random.SeedSequence((seed, j)))).mu
        for j in range(m)
    ])
    epis = np.var(mus - mus[0], axis=0)
    total = alea + epis
    return UncertaintyBatch(
        scalar_total=total.mean(axis=-1),
        scalar_aleatoric=alea.mean(axis=-1),
        scalar_epistemic=epis.mean(axis=-1),
        m_passes=m,
    )


def uncertainty_csv(ids: list[str], batch: UncertaintyBatch) -> str:
    """Per-sample export: id,scalar_total,scalar_aleatoric,scalar_epistemic."""
    lines = ["id,scalar_total,scalar_aleatoric,scalar_epistemic"]
    for i, sample_id in enumerate(ids):
        lines.append(
            f"{sample_id},{batch.scalar_total[i]:.17g},"
            f"{batch.scalar_aleatoric[i]:.17g},{batch.scalar_epistemic[i]:.17g}"
        )
    return "\n".join(lines) + "\n"
