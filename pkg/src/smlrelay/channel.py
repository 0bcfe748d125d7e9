"""Constellations, symbol-vector enumeration and block-fading MIMO channels.

Every stochastic function takes an explicit ``numpy.random.Generator`` so
that a run is fully determined by its seed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Constellation",
    "SymbolVectorSet",
    "LinkVarianceProfile",
    "CsiModel",
    "ChannelRealization",
    "ChannelBatch",
    "UnsupportedConstellation",
    "build_constellation",
    "enumerate_symbol_vectors",
    "complex_gaussian",
    "generate_channels",
    "generate_channel_batch",
    "apply_csi_error",
    "apply_csi_error_batch",
    "awgn",
    "split_submatrices",
    "stack_submatrices",
]


class UnsupportedConstellation(ValueError):
    pass


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy symbol alphabet.

    ``symbols[i]`` carries the bit label ``labels[i]`` (Gray mapping), and
    ``distance_alphabet`` holds one representative of each distinct
    inter-symbol distance ``d_c``.
    """

    kind: str
    symbols: np.ndarray
    labels: np.ndarray
    distance_alphabet: np.ndarray

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def W(self) -> int:
        return len(self.distance_alphabet)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.size))

    def signed_differences(self) -> np.ndarray:
        """All distinct nonzero values of ``s_a - s_b``, in a fixed order."""
        diffs = (self.symbols[:, None] - self.symbols[None, :]).ravel()
        diffs = diffs[np.abs(diffs) > 1e-9]
        _, first = np.unique(np.round(diffs, 9), return_index=True)
        return diffs[np.sort(first)]

    def bit_error_table(self) -> np.ndarray:
        """``table[a, b]`` = number of differing bits between symbols a and b."""
        x = self.labels[:, None] ^ self.labels[None, :]
        return np.array([[bin(int(v)).count("1") for v in row] for row in x], dtype=np.int64)


def build_constellation(kind: str) -> Constellation:
    key = kind.strip().upper()
    if key == "BPSK":
        symbols = np.array([-1.0 + 0j, 1.0 + 0j])
        labels = np.array([0, 1])
        alphabet = np.array([2.0 + 0j])
    elif key == "QPSK":
        # label = 2*b_re + b_im, Gray by construction
        re = np.array([-1, -1, 1, 1])
        im = np.array([-1, 1, -1, 1])
        symbols = (re + 1j * im) / np.sqrt(2)
        labels = np.arange(4)
        r2 = np.sqrt(2)
        alphabet = np.array([r2 + 0j, r2 * 1j, r2 + r2 * 1j])
    else:
        raise UnsupportedConstellation(
            f"unsupported constellation {kind!r}: only BPSK and QPSK are implemented"
        )
    return Constellation(key, symbols, labels, alphabet)


@dataclass(frozen=True)
class SymbolVectorSet:
    """All ``N_s ** M_S`` transmit vectors in lexicographic order.

    ``indices[k]`` holds the per-antenna symbol indices of vector ``k``
    (antenna 0 most significant) and ``vectors[k]`` the complex symbols.
    """

    M_S: int
    indices: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.vectors)

    def vector_index(self, symbol_indices: np.ndarray) -> np.ndarray:
        """Map per-antenna symbol indices (``..., M_S``) to vector indices."""
        ns = int(self.indices.max()) + 1 if len(self.indices) else 1
        weights = ns ** np.arange(self.M_S - 1, -1, -1)
        return symbol_indices @ weights


def enumerate_symbol_vectors(constellation: Constellation, M_S: int) -> SymbolVectorSet:
    if M_S < 1:
        raise ValueError("M_S must be >= 1")
    idx = np.array(list(itertools.product(range(constellation.size), repeat=M_S)), dtype=np.int64)
    return SymbolVectorSet(M_S, idx, constellation.symbols[idx])


@dataclass(frozen=True)
class LinkVarianceProfile:
    sigma2_SR: float = 1.0
    sigma2_RD: float = 1.0
    sigma2_SD: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_SR", "sigma2_RD", "sigma2_SD"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class CsiModel:
    """Channel-estimation error model, ``var = beta * E**-alpha``."""

    beta: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @property
    def perfect(self) -> bool:
        return self.beta == 0

    def error_variance(self, E: float, direct: bool = False) -> float:
        if self.perfect:
            return 0.0
        base = 2.0 * E if direct else E
        return self.beta * base ** (-self.alpha)


def split_submatrices(H: np.ndarray, M_S: int) -> np.ndarray:
    """Split a tall ``(U*M_S, M_S)`` matrix (leading axes allowed) into ``(U, M_S, M_S)``."""
    rows = H.shape[-2]
    if rows % M_S or H.shape[-1] != M_S:
        raise ValueError(f"matrix of shape {H.shape[-2:]} is not a stack of {M_S}x{M_S} blocks")
    return H.reshape(*H.shape[:-2], rows // M_S, M_S, M_S)


def stack_submatrices(blocks: np.ndarray) -> np.ndarray:
    U, m, n = blocks.shape[-3:]
    return blocks.reshape(*blocks.shape[:-3], U * m, n)


def complex_gaussian(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric CN(0, variance) samples."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass
class ChannelRealization:
    """One slot's channels. ``H_SR[i]``/``H_RD[i]`` are ``(U*M_S, M_S)``.

    The ``*_est`` fields hold the CSI estimates; they alias the true
    matrices until :func:`apply_csi_error` fills them.
    """

    H_SR: np.ndarray
    H_RD: np.ndarray
    H_SD: np.ndarray
    H_SR_est: np.ndarray = field(default=None)
    H_RD_est: np.ndarray = field(default=None)
    H_SD_est: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.H_SR_est is None:
            self.H_SR_est = self.H_SR
        if self.H_RD_est is None:
            self.H_RD_est = self.H_RD
        if self.H_SD_est is None:
            self.H_SD_est = self.H_SD

    @property
    def N(self) -> int:
        return self.H_SR.shape[0]

    @property
    def M_S(self) -> int:
        return self.H_SD.shape[-1]

    @property
    def U(self) -> int:
        return self.H_SR.shape[-2] // self.M_S


@dataclass
class ChannelBatch:
    """Channels for ``n_slots`` consecutive slots, slot axis first."""

    H_SR: np.ndarray  # (K, N, U*M_S, M_S)
    H_RD: np.ndarray
    H_SD: np.ndarray  # (K, M_S, M_S)
    H_SR_est: np.ndarray = field(default=None)
    H_RD_est: np.ndarray = field(default=None)
    H_SD_est: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.H_SR_est is None:
            self.H_SR_est = self.H_SR
        if self.H_RD_est is None:
            self.H_RD_est = self.H_RD
        if self.H_SD_est is None:
            self.H_SD_est = self.H_SD

    def __len__(self) -> int:
        return self.H_SD.shape[0]

    def slot(self, k: int) -> ChannelRealization:
        return ChannelRealization(
            self.H_SR[k], self.H_RD[k], self.H_SD[k],
            self.H_SR_est[k], self.H_RD_est[k], self.H_SD_est[k],
        )


def generate_channel_batch(rng, n_slots: int, N: int, M_S: int, U: int,
                           profile: LinkVarianceProfile) -> ChannelBatch:
    """Independent Rayleigh block-fading draws for ``n_slots`` slots."""
    if N < 0 or U < 1 or M_S < 1:
        raise ValueError("need N >= 0, U >= 1, M_S >= 1")
    M_R = U * M_S
    H_SR = complex_gaussian(rng, (n_slots, N, M_R, M_S), profile.sigma2_SR)
    H_RD = complex_gaussian(rng, (n_slots, N, M_R, M_S), profile.sigma2_RD)
    H_SD = complex_gaussian(rng, (n_slots, M_S, M_S), profile.sigma2_SD)
    return ChannelBatch(H_SR, H_RD, H_SD)


def generate_channels(rng, N: int, M_S: int, U: int,
                      profile: LinkVarianceProfile) -> ChannelRealization:
    return generate_channel_batch(rng, 1, N, M_S, U, profile).slot(0)


def _perturb(rng, H, var):
    if var == 0.0:
        return H
    return H + complex_gaussian(rng, H.shape, var)


def apply_csi_error_batch(rng, batch: ChannelBatch, csi: CsiModel, E: float) -> ChannelBatch:
    if E <= 0:
        raise ValueError("E must be positive")
    var_coop = csi.error_variance(E)
    var_sd = csi.error_variance(E, direct=True)
    batch.H_SR_est = _perturb(rng, batch.H_SR, var_coop)
    batch.H_RD_est = _perturb(rng, batch.H_RD, var_coop)
    batch.H_SD_est = _perturb(rng, batch.H_SD, var_sd)
    return batch


def apply_csi_error(rng, realization: ChannelRealization, csi: CsiModel,
                    E: float) -> ChannelRealization:
    """Fill the estimated channels: ``H_est = H + H_e``.

    Cooperative links get error variance ``beta * E**-alpha``, the direct
    link ``beta * (2E)**-alpha``. With ``beta == 0`` the estimates are the
    true matrices.
    """
    if E <= 0:
        raise ValueError("E must be positive")
    realization.H_SR_est = _perturb(rng, realization.H_SR, csi.error_variance(E))
    realization.H_RD_est = _perturb(rng, realization.H_RD, csi.error_variance(E))
    realization.H_SD_est = _perturb(rng, realization.H_SD, csi.error_variance(E, direct=True))
    return realization


def awgn(rng, dimension, N0: float) -> np.ndarray:
    """CN(0, N0) noise: ``N0 / 2`` per real dimension."""
    if N0 <= 0:
        raise ValueError("N0 must be positive")
    return complex_gaussian(rng, dimension, N0)
