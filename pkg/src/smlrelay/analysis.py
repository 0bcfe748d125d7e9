"""Closed-form companions: worst-case PEP, per-slot sum-rate, complexity counts."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erfc

from .selection import DIRECT, MAX_LINK_RD, MAX_LINK_SR, metric_count

__all__ = [
    "qfunc",
    "pep_direct",
    "pep_cooperative",
    "PepSample",
    "theoretical_pep_curve",
    "ComplexityReport",
    "complexity_report",
    "RateParams",
    "log2det_capacity",
    "sum_rate_slot",
    "sum_rate_aggregate",
]


def qfunc(x):
    """Gaussian tail ``Q(x) = 0.5 erfc(x / sqrt 2)``."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def _pep_argument(d_min, E, N0, M_S):
    d_min = np.asarray(d_min, dtype=float)
    if np.any(d_min < 0):
        raise ValueError("distance must be non-negative")
    if E <= 0 or N0 <= 0 or M_S < 1:
        raise ValueError("E, N0 must be positive and M_S >= 1")
    return np.sqrt(E / (2.0 * N0 * M_S) * d_min)


def pep_direct(d_min, E: float, N0: float, M_S: int):
    """Worst-case PEP of a direct transmission, ``Q(sqrt(E D'_min / (2 N0 M_S)))``.

    ``d_min`` already carries the factor 2 of the direct link's doubled
    energy.
    """
    return qfunc(_pep_argument(d_min, E, N0, M_S))


def pep_cooperative(d_min, E: float, N0: float, M_S: int):
    """Two-hop approximation ``1 - (1 - Q(.))**2`` with the same argument."""
    q = qfunc(_pep_argument(d_min, E, N0, M_S))
    # q (2 - q) equals 1 - (1 - q)^2 without cancellation for tiny q
    return q * (2.0 - q)


@dataclass(frozen=True)
class PepSample:
    slot: int
    d_min: float
    mode: str
    pep: float


def theoretical_pep_curve(traces: dict[float, Sequence[tuple[str, float]]],
                          M_S: int, N0: float = 1.0) -> dict[float, float]:
    """Mean per-slot worst-case PEP for each SNR.

    ``traces`` maps SNR in dB to ``(mode, D'_min of the selected matrix)``
    pairs, one per slot. Direct slots use :func:`pep_direct`, relay slots
    :func:`pep_cooperative`.
    """
    out = {}
    for snr_db, trace in traces.items():
        if len(trace) == 0:
            raise ValueError(f"empty trace at {snr_db} dB")
        E = N0 * 10.0 ** (snr_db / 10.0)
        modes = np.array([m for m, _ in trace])
        d = np.array([v for _, v in trace], dtype=float)
        direct = modes == DIRECT
        pep = np.where(direct, pep_direct(d, E, N0, M_S), pep_cooperative(d, E, N0, M_S))
        out[snr_db] = float(pep.mean())
    return out


@dataclass(frozen=True)
class ComplexityReport:
    mmd_additions: int
    mmd_multiplications: int
    qn_additions: int
    qn_multiplications: int
    X: int


def complexity_report(N: int, U: int, M_S: int, W: int) -> ComplexityReport:
    if min(N, U, M_S, W) < 1:
        raise ValueError("N, U, M_S and W must be positive")
    X = metric_count(M_S, W)
    base = 2 * N * U
    return ComplexityReport(
        mmd_additions=base * M_S * (X - 1),
        mmd_multiplications=base * M_S * X,
        qn_additions=base * (M_S ** 2 - 1),
        qn_multiplications=base * M_S ** 2,
        X=X,
    )


@dataclass(frozen=True)
class RateParams:
    """Identity-scaled input covariances ``Q = q I`` per link type."""

    E: float
    N0: float
    M_S: int

    @property
    def q_sr(self) -> float:
        return self.E / self.M_S

    @property
    def q_rd(self) -> float:
        return self.E / self.M_S

    @property
    def q_sd(self) -> float:
        return 2.0 * self.E / self.M_S


def log2det_capacity(H: np.ndarray, snr_per_antenna: float) -> float:
    """``log2 det(I + snr H H^H)`` via a Hermitian eigen-decomposition."""
    H = np.asarray(H, dtype=complex)
    # det(I + s H H^H) = det(I + s H^H H); use the smaller Gram matrix
    G = H.conj().T @ H if H.shape[0] >= H.shape[1] else H @ H.conj().T
    eig = np.linalg.eigvalsh(G)
    return float(np.log2(1.0 + snr_per_antenna * np.clip(eig, 0.0, None)).sum())


def sum_rate_slot(mode: str, H: np.ndarray, E: float, N0: float, M_S: int) -> float:
    """Approximate per-slot sum-rate (bits/Hz) of the link a slot used.

    SR uses the full ``(U M_S, M_S)`` relay matrix, RD the selected
    ``M_S x M_S`` submatrix; both are halved for the two-hop path. DT uses
    ``2E / M_S`` per antenna and is not halved.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[1] != M_S:
        raise ValueError(f"channel of shape {H.shape} does not have M_S={M_S} columns")
    p = RateParams(E, N0, M_S)
    if mode == MAX_LINK_SR:
        if H.shape[0] % M_S:
            raise ValueError("SR matrix rows must be a multiple of M_S")
        return 0.5 * log2det_capacity(H, p.q_sr / N0)
    if H.shape[0] != M_S:
        raise ValueError(f"{mode} requires a square {M_S}x{M_S} matrix, got {H.shape}")
    if mode == MAX_LINK_RD:
        return 0.5 * log2det_capacity(H, p.q_rd / N0)
    if mode == DIRECT:
        return log2det_capacity(H, p.q_sd / N0)
    raise ValueError(f"unknown mode {mode!r}")


def sum_rate_aggregate(sr_rates: Iterable[float], rd_rates: Iterable[float],
                       sd_rates: Iterable[float], n_sr: int | None = None,
                       n_rd: int | None = None, n_sd: int | None = None) -> float:
    """Slot-weighted sum-rate with direct slots counted twice.

    ``(sum SR + sum RD + 2 sum SD) / (n_SR + n_RD + 2 n_SD)``
    """
    sr, rd, sd = (np.asarray(list(r), dtype=float) for r in (sr_rates, rd_rates, sd_rates))
    counts = (len(sr), len(rd), len(sd))
    for given, actual, name in zip((n_sr, n_rd, n_sd), counts, ("n_sr", "n_rd", "n_sd")):
        if given is not None and given != actual:
            raise ValueError(f"{name}={given} does not match {actual} rates")
    denom = counts[0] + counts[1] + 2 * counts[2]
    if denom == 0:
        raise ValueError("no slots to aggregate")
    return float((sr.sum() + rd.sum() + 2.0 * sd.sum()) / denom)
