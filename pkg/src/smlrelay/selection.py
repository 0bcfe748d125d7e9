"""MMD and QN link metrics and the Switched Max-Link selection pipeline.

Distances are kept on the energy-free scale ``D' = ||H (x_l - x_n)||^2``
for cooperative links. The direct link carries twice the per-antenna
energy, so its value is stored as ``2 ||H_SD (x_l - x_n)||^2``; both then
share the ``E / M_S`` factor and compare directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple, Sequence

import numpy as np

from .channel import ChannelBatch, ChannelRealization, Constellation, split_submatrices

__all__ = [
    "MMD",
    "QN",
    "SR",
    "RD",
    "MAX_LINK_SR",
    "MAX_LINK_RD",
    "DIRECT",
    "NoFeasibleCandidate",
    "DegenerateSlot",
    "difference_terms",
    "block_min_distances",
    "min_distance_submatrix",
    "metric_count",
    "qn_metric",
    "BalancingState",
    "update_balancing",
    "DistanceReport",
    "distance_report",
    "distance_report_batch",
    "Candidate",
    "MaxLinkSelection",
    "select_max_link",
    "SlotDecision",
    "decide_mode",
]

MMD = "mmd"
QN = "qn"

SR = "SR"
RD = "RD"

MAX_LINK_SR = "MaxLinkSR"
MAX_LINK_RD = "MaxLinkRD"
DIRECT = "DT"


class NoFeasibleCandidate(RuntimeError):
    pass


class DegenerateSlot(RuntimeError):
    pass


def difference_terms(constellation: Constellation, M_S: int) -> np.ndarray:
    """Difference vectors ``x_l - x_n`` needed to find the minimum distance.

    For every support of ``i`` nonzero positions the first nonzero entry
    runs over the distance alphabet ``d_c`` and each later entry over every
    signed symbol difference. A common sign (or, for QPSK, a common
    quarter-turn) of the whole vector leaves ``||H d||`` unchanged, so this
    covers every pair. For BPSK it yields exactly ``metric_count(M_S, 1)``
    rows; for QPSK it also includes conjugate variants that ``+-d_c`` alone
    miss once ``M_S >= 3``.
    """
    lead = constellation.distance_alphabet
    rest = constellation.signed_differences()
    rows = []
    for i in range(1, M_S + 1):
        for support in itertools.combinations(range(M_S), i):
            for first in lead:
                for tail in itertools.product(rest, repeat=i - 1):
                    v = np.zeros(M_S, dtype=complex)
                    v[support[0]] = first
                    v[list(support[1:])] = tail
                    rows.append(v)
    return np.array(rows)


def block_min_distances(blocks: np.ndarray, terms: np.ndarray) -> np.ndarray:
    """Min over ``terms`` of ``||B d||^2`` for every square block in ``blocks`` (``..., M, M``)."""
    prod = blocks @ terms.T  # (..., M, T)
    return (prod.real ** 2 + prod.imag ** 2).sum(axis=-2).min(axis=-1)


def min_distance_submatrix(H: np.ndarray, constellation: Constellation,
                           M_S: int | None = None) -> tuple[float, np.ndarray]:
    """Return ``(D'_min, D' for every structured term)`` of a square channel block."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    M_S = H.shape[1] if M_S is None else M_S
    if H.shape[1] != M_S:
        raise ValueError(f"matrix has {H.shape[1]} columns, expected {M_S}")
    terms = difference_terms(constellation, M_S)
    prod = H @ terms.T
    values = (prod.real ** 2 + prod.imag ** 2).sum(axis=0)
    return float(values.min()), values


def metric_count(M_S: int, W: int) -> int:
    """Number of metric evaluations per block: ``sum_i 2^(i-1) W^i C(M_S, i)``."""
    if M_S < 1 or W < 1:
        raise ValueError("M_S and W must be >= 1")
    return sum(2 ** (i - 1) * W ** i * comb(M_S, i) for i in range(1, M_S + 1))


def qn_metric(H: np.ndarray) -> float:
    H = np.asarray(H)
    return float((H.real ** 2 + H.imag ** 2).sum())


@dataclass
class BalancingState:
    """Running means of the raw SR and best-RD distances.

    The SR metrics are scaled by ``mean_RD / mean_SR`` so that SR and RD
    wins occur equally often; before any sample the ratio is 1.
    """

    sum_sr: float = 0.0
    sum_rd: float = 0.0
    count_sr: int = 0
    count_rd: int = 0

    @property
    def mean_sr(self) -> float:
        return self.sum_sr / self.count_sr if self.count_sr else float("nan")

    @property
    def mean_rd(self) -> float:
        return self.sum_rd / self.count_rd if self.count_rd else float("nan")

    @property
    def ratio(self) -> float:
        if not self.count_sr or not self.count_rd or self.sum_sr <= 0:
            return 1.0
        return self.mean_rd / self.mean_sr

    def balance(self, sr_values):
        return self.ratio * np.asarray(sr_values)

    def update(self, sr_samples, rd_samples) -> "BalancingState":
        sr = np.asarray(sr_samples, dtype=float).ravel()
        rd = np.asarray(rd_samples, dtype=float).ravel()
        self.sum_sr += float(sr.sum())
        self.count_sr += sr.size
        self.sum_rd += float(rd.sum())
        self.count_rd += rd.size
        return self


def update_balancing(balancing: BalancingState, sr_samples, rd_samples) -> BalancingState:
    return balancing.update(sr_samples, rd_samples)


@dataclass
class DistanceReport:
    """Per-link metrics of one slot (or a batch, with a leading slot axis).

    ``sr_block``/``rd_block``: metric per relay and submatrix, shape ``(N, U)``.
    ``sr``: per-relay SR metric (worst submatrix). ``rd``/``rd_u``: best RD
    submatrix value and its index. ``sd``: direct-link metric.
    For ``criterion == "mmd"`` these are ``D'`` minimum distances, for
    ``"qn"`` quadratic norms.
    """

    criterion: str
    sr_block: np.ndarray
    rd_block: np.ndarray
    sd: np.ndarray | float
    sr: np.ndarray = field(init=False)
    rd: np.ndarray = field(init=False)
    rd_u: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sr = self.sr_block.min(axis=-1)
        self.rd_u = self.rd_block.argmax(axis=-1)
        self.rd = np.take_along_axis(self.rd_block, self.rd_u[..., None], axis=-1)[..., 0]

    @property
    def N(self) -> int:
        return self.sr_block.shape[-2]

    def slot(self, k: int) -> "DistanceReport":
        # slice the precomputed reductions instead of redoing them
        rep = object.__new__(DistanceReport)
        rep.criterion = self.criterion
        rep.sr_block, rep.rd_block = self.sr_block[k], self.rd_block[k]
        rep.sd = float(self.sd[k])
        rep.sr, rep.rd, rep.rd_u = self.sr[k], self.rd[k], self.rd_u[k]
        return rep


def _reports(H_SR, H_RD, H_SD, M_S, criterion, terms):
    sr_blocks = split_submatrices(H_SR, M_S)
    rd_blocks = split_submatrices(H_RD, M_S)
    if criterion == MMD:
        sr = block_min_distances(sr_blocks, terms)
        rd = block_min_distances(rd_blocks, terms)
        sd = 2.0 * block_min_distances(H_SD, terms)
    elif criterion == QN:
        sr = (np.abs(sr_blocks) ** 2).sum(axis=(-1, -2))
        rd = (np.abs(rd_blocks) ** 2).sum(axis=(-1, -2))
        sd = 2.0 * (np.abs(H_SD) ** 2).sum(axis=(-1, -2))
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return DistanceReport(criterion, sr, rd, sd)


def distance_report(realization: ChannelRealization, constellation: Constellation,
                    criterion: str = MMD, terms: np.ndarray | None = None) -> DistanceReport:
    """Metrics of one slot, computed on the estimated channels."""
    M_S = realization.M_S
    if terms is None and criterion == MMD:
        terms = difference_terms(constellation, M_S)
    rep = _reports(realization.H_SR_est, realization.H_RD_est, realization.H_SD_est,
                   M_S, criterion, terms)
    rep.sd = float(rep.sd)
    return rep


def distance_report_batch(batch: ChannelBatch, constellation: Constellation,
                          criterion: str = MMD, terms: np.ndarray | None = None) -> DistanceReport:
    M_S = batch.H_SD.shape[-1]
    if terms is None and criterion == MMD:
        terms = difference_terms(constellation, M_S)
    return _reports(batch.H_SR_est, batch.H_RD_est, batch.H_SD_est, M_S, criterion, terms)


class Candidate(NamedTuple):
    link: str  # SR or RD
    relay: int
    value: float
    u: int = 0


@dataclass
class MaxLinkSelection:
    ranking: list[Candidate]
    winner: Candidate


def _rank(sr_values: np.ndarray, rd_values: np.ndarray) -> np.ndarray:
    # stable sort on -value: ties go SR before RD, then lower relay index
    values = np.concatenate([sr_values, rd_values])
    return np.argsort(-values, kind="stable")


def select_max_link(report: DistanceReport, balancing: BalancingState | float | None,
                    buffer_lengths: Sequence[int], capacity: int,
                    source_has_data: bool = True) -> MaxLinkSelection:
    """Rank the ``2N`` SR/RD candidates and pick the best feasible one.

    SR into a full buffer and RD out of an empty buffer are skipped, as is
    every SR candidate once the source has nothing left to send.
    """
    N = report.N
    if N == 0:
        raise NoFeasibleCandidate("no feasible Max-Link candidate: no relays")
    if isinstance(balancing, BalancingState):
        ratio = balancing.ratio
    else:
        ratio = 1.0 if balancing is None else float(balancing)
    sr_values = ratio * np.asarray(report.sr, dtype=float)
    rd_values = np.asarray(report.rd, dtype=float)
    lengths = np.asarray(buffer_lengths)
    order = _rank(sr_values, rd_values)
    ranking = []
    winner = None
    for c in order:
        if c < N:
            cand = Candidate(SR, int(c), float(sr_values[c]))
            ok = source_has_data and lengths[c] < capacity
        else:
            r = c - N
            cand = Candidate(RD, int(r), float(rd_values[r]), int(report.rd_u[r]))
            ok = lengths[r] > 0
        ranking.append(cand)
        if ok and winner is None:
            winner = cand
    if winner is None:
        raise NoFeasibleCandidate("no feasible Max-Link candidate")
    return MaxLinkSelection(ranking, winner)


@dataclass(frozen=True)
class SlotDecision:
    mode: str
    relay: int | None = None
    u: int | None = None
    value: float = float("nan")
    G: float = float("nan")


def decide_mode(winner: Candidate | None, d_sd: float, switch: float) -> SlotDecision:
    """Choose between Max-Link-SR, Max-Link-RD and direct transmission.

    ``G = winner.value / d_sd``. SR is kept when ``G > switch``, RD when
    ``G > 1``; otherwise the source transmits directly. ``switch == 0``
    disables direct transmission altogether (pure MMD-Max-Link).
    """
    if switch < 0:
        raise ValueError("switch must be >= 0")
    if winner is None:
        if d_sd <= 0:
            raise DegenerateSlot("degenerate slot: zero direct-link distance and no feasible relay link")
        return SlotDecision(DIRECT, G=0.0)
    G = winner.value / d_sd if d_sd > 0 else float("inf")
    if winner.link == SR:
        ml = SlotDecision(MAX_LINK_SR, winner.relay, None, winner.value, G)
        threshold = switch
    else:
        ml = SlotDecision(MAX_LINK_RD, winner.relay, winner.u, winner.value, G)
        threshold = 1.0
    if switch == 0 or G > threshold:
        return ml
    return SlotDecision(DIRECT, value=winner.value, G=G)
