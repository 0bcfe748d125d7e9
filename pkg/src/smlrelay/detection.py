"""Exhaustive maximum-likelihood detection over the enumerated symbol vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import SymbolVectorSet

__all__ = ["DetectionResult", "MAX_CANDIDATES", "ml_detect", "ml_detect_batch"]

MAX_CANDIDATES = 4096


@dataclass(frozen=True)
class DetectionResult:
    index: int
    residual: float


def _check(y_rows: int, H: np.ndarray, energy_per_antenna: float, vectors: SymbolVectorSet):
    if H.ndim != 2:
        raise ValueError(f"channel must be a matrix, got shape {H.shape}")
    if H.shape[1] != vectors.M_S:
        raise ValueError(f"channel has {H.shape[1]} columns, expected M_S={vectors.M_S}")
    if y_rows != H.shape[0]:
        raise ValueError(f"received vector has {y_rows} entries, channel has {H.shape[0]} rows")
    if energy_per_antenna <= 0:
        raise ValueError("energy_per_antenna must be positive")
    if len(vectors) > MAX_CANDIDATES:
        raise ValueError(
            f"{len(vectors)} candidate vectors exceeds the exhaustive-search cap of {MAX_CANDIDATES}"
        )


def ml_detect_batch(Y: np.ndarray, H_est: np.ndarray, energy_per_antenna: float,
                    vectors: SymbolVectorSet) -> tuple[np.ndarray, np.ndarray]:
    """Detect each row of ``Y`` (``n, rows``) against a common channel.

    Returns ``(indices, residuals)``. ``argmin`` returns the first minimum,
    so ties go to the lowest candidate index.
    """
    Y = np.atleast_2d(Y)
    _check(Y.shape[1], H_est, energy_per_antenna, vectors)
    centers = np.sqrt(energy_per_antenna) * (H_est @ vectors.vectors.T)  # (rows, K)
    diff = Y[:, :, None] - centers[None, :, :]
    residuals = (diff.real ** 2 + diff.imag ** 2).sum(axis=1)  # (n, K)
    idx = residuals.argmin(axis=1)
    return idx, residuals[np.arange(len(idx)), idx]


def ml_detect(y: np.ndarray, H_est: np.ndarray, energy_per_antenna: float,
              vectors: SymbolVectorSet) -> DetectionResult:
    """Return ``argmin_x ||y - sqrt(e) H x||^2`` over all candidate vectors.

    ``energy_per_antenna`` is ``2E/M_S`` for direct transmission and
    ``E/M_S`` for a cooperative hop.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    idx, res = ml_detect_batch(y[None, :], H_est, energy_per_antenna, vectors)
    return DetectionResult(int(idx[0]), float(res[0]))
