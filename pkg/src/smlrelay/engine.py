"""Slot-by-slot link-level simulation of buffer-aided relay protocols.

A run sends ``packets / M_S`` packet-sets from the source. Each slot is one
of: direct transmission (DT), source-to-relay (SR) or relay-to-destination
(RD). Relays decode and forward, so they store and later resend the
*detected* symbols. The destination puts the sets back in sequence order
before computing the BER.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .analysis import log2det_capacity, pep_cooperative, pep_direct, sum_rate_aggregate, sum_rate_slot
from .channel import (
    ChannelRealization,
    Constellation,
    CsiModel,
    LinkVarianceProfile,
    apply_csi_error_batch,
    awgn,
    build_constellation,
    enumerate_symbol_vectors,
    generate_channel_batch,
    split_submatrices,
)
from .detection import ml_detect_batch
from .selection import (
    DIRECT,
    MAX_LINK_RD,
    MAX_LINK_SR,
    MMD,
    QN,
    RD,
    SR,
    BalancingState,
    Candidate,
    DistanceReport,
    NoFeasibleCandidate,
    SlotDecision,
    decide_mode,
    difference_terms,
    distance_report_batch,
    select_max_link,
)

log = logging.getLogger(__name__)

__all__ = [
    "OUTAGE",
    "ProtocolKind",
    "SwitchedMaxLink",
    "MmdMaxLink",
    "QnMaxLink",
    "DirectMimo",
    "ThresholdMaxLinkDT",
    "parse_protocol",
    "SimulationConfig",
    "PacketSet",
    "RelayBufferState",
    "SlotInputs",
    "SlotOutcome",
    "RunMetrics",
    "ReassemblyResult",
    "reassemble",
    "ProtocolEngine",
    "step_slot",
    "run_protocol",
]

OUTAGE = "OUTAGE"

_KINDS = ("switched_max_link", "mmd_max_link", "qn_max_link", "direct_mimo", "threshold_max_link_dt")


@dataclass(frozen=True)
class ProtocolKind:
    """Protocol identity plus its parameter (switch ``S`` or rate threshold ``r0``)."""

    name: str
    switch: float = 0.0
    r0: float = 0.0

    def __post_init__(self):
        if self.name not in _KINDS:
            raise ValueError(f"unknown protocol {self.name!r}; expected one of {', '.join(_KINDS)}")
        if self.switch < 0:
            raise ValueError("switch S must be >= 0")
        if self.name == "threshold_max_link_dt" and not self.r0 > 0:
            raise ValueError("r0 must be > 0")

    @property
    def criterion(self) -> str | None:
        if self.name in ("switched_max_link", "mmd_max_link"):
            return MMD
        if self.name == "qn_max_link":
            return QN
        return None

    @property
    def uses_relays(self) -> bool:
        return self.name != "direct_mimo"

    @property
    def label(self) -> str:
        if self.name == "switched_max_link":
            return f"switched_max_link(S={self.switch:g})"
        if self.name == "threshold_max_link_dt":
            return f"threshold_max_link_dt(r0={self.r0:g})"
        return self.name


def SwitchedMaxLink(switch: float = 1.0) -> ProtocolKind:
    return ProtocolKind("switched_max_link", switch=float(switch))


def MmdMaxLink() -> ProtocolKind:
    return ProtocolKind("mmd_max_link")


def QnMaxLink() -> ProtocolKind:
    return ProtocolKind("qn_max_link")


def DirectMimo() -> ProtocolKind:
    return ProtocolKind("direct_mimo")


def ThresholdMaxLinkDT(r0: float = 1.0) -> ProtocolKind:
    """Rate-threshold Max-Link with a direct link; an approximate baseline only."""
    return ProtocolKind("threshold_max_link_dt", r0=float(r0))


def parse_protocol(entry, default_switch: float = 1.0, default_r0: float = 1.0) -> ProtocolKind:
    """Build a protocol from a name or ``{"name": ..., "S": ..., "r0": ...}``."""
    if isinstance(entry, ProtocolKind):
        return entry
    if isinstance(entry, str):
        name, params = entry, {}
    elif isinstance(entry, dict):
        params = dict(entry)
        name = params.pop("name", None)
        if name is None:
            raise ValueError("protocol entry needs a 'name'")
    else:
        raise ValueError(f"cannot interpret protocol {entry!r}")
    name = str(name).strip().lower()
    unknown = set(params) - {"S", "r0"}
    if unknown:
        raise ValueError(f"unknown protocol parameter(s) {sorted(unknown)} for {name}")
    if name == "switched_max_link":
        return SwitchedMaxLink(params.get("S", default_switch))
    if name == "threshold_max_link_dt":
        return ThresholdMaxLinkDT(params.get("r0", default_r0))
    return ProtocolKind(name)


@dataclass(frozen=True)
class SimulationConfig:
    N: int = 3
    M_S: int = 2
    U: int = 1
    J: int = 4
    constellation: str = "BPSK"
    snr_db: float = 10.0
    packets: int | None = None  # default 10000 * M_S
    symbols_per_packet: int = 100
    profile: LinkVarianceProfile = field(default_factory=LinkVarianceProfile)
    csi: CsiModel = field(default_factory=CsiModel)
    N0: float = 1.0
    slot_budget_factor: int = 20
    chunk_slots: int = 512
    detect: bool = True
    record_trace: bool = False

    def __post_init__(self):
        if self.N < 0 or self.M_S < 1 or self.U < 1:
            raise ValueError("need N >= 0, M_S >= 1, U >= 1")
        if self.J % self.M_S:
            raise ValueError("buffer size must hold whole packet-sets (J divisible by M_S)")
        if self.packets is not None and self.packets % self.M_S:
            raise ValueError("packets must be a multiple of M_S")

    @property
    def L(self) -> int:
        return self.J // self.M_S

    @property
    def M_R(self) -> int:
        return self.U * self.M_S

    @property
    def E(self) -> float:
        return self.N0 * 10.0 ** (self.snr_db / 10.0)

    @property
    def n_sets(self) -> int:
        packets = 10000 * self.M_S if self.packets is None else self.packets
        return packets // self.M_S


@dataclass
class PacketSet:
    seq: int
    symbols: np.ndarray | None  # (symbols_per_packet, M_S) symbol indices, one column per packet
    arrival_slot: int


@dataclass
class RelayBufferState:
    """FIFO of packet-sets per relay, ``capacity`` sets each, plus the direct-link toggle."""

    capacity: int
    queues: list[deque]
    e_d: int = 0

    @classmethod
    def empty(cls, N: int, capacity: int) -> "RelayBufferState":
        return cls(capacity, [deque() for _ in range(N)])

    def lengths(self) -> list[int]:
        return [len(q) for q in self.queues]

    def total(self) -> int:
        return sum(len(q) for q in self.queues)

    def push(self, relay: int, packet_set: PacketSet):
        q = self.queues[relay]
        if len(q) >= self.capacity:
            raise RuntimeError(f"relay {relay} buffer overflow")
        q.append(packet_set)

    def pop(self, relay: int) -> PacketSet:
        q = self.queues[relay]
        if not q:
            raise RuntimeError(f"relay {relay} buffer underflow")
        return q.popleft()


@dataclass
class SlotInputs:
    """Everything the scheduler sees in one slot."""

    channels: ChannelRealization
    mmd: DistanceReport | None = None
    qn: DistanceReport | None = None


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    mode: str
    relay: int | None = None
    u: int | None = None
    d_min: float = float("nan")
    pep: float = float("nan")
    rate: float = float("nan")
    seq: int | None = None


@dataclass
class RunMetrics:
    protocol: str
    snr_db: float
    ber: float
    bit_errors: int
    bits: int
    avg_delay: float
    avg_throughput: float
    n_sr: int
    n_rd: int
    n_sd: int
    n_outage: int
    n_slots: int
    pep_theory: float
    sum_rate: float
    delivered: int
    undelivered: int
    budget_exhausted: bool
    p_ml: float
    occupancy: np.ndarray
    departures: np.ndarray
    active_slots: int
    trace: list[SlotOutcome] | None = None
    set_bit_errors: np.ndarray | None = None  # bit errors per delivered packet-set, in order

    @property
    def little_delay(self) -> float:
        """Per-relay Little's-law delay ``E[L_n] / E[T_n]`` averaged over relays."""
        if self.active_slots == 0 or not len(self.departures):
            return float("nan")
        throughput = self.departures / self.active_slots
        ok = throughput > 0
        return float(np.mean(self.occupancy[ok] / throughput[ok])) if ok.any() else float("nan")


@dataclass
class ReassemblyResult:
    order: list[int]
    payloads: list
    missing: list[int]


def reassemble(received, expected_ids=None) -> ReassemblyResult:
    """Order received packet-sets by sequence id.

    ``received`` is a mapping ``seq -> payload`` or an iterable of
    ``(seq, payload)`` pairs in arrival order. Ids in ``expected_ids`` that
    never arrived are returned in ``missing``.
    """
    items = dict(received.items() if hasattr(received, "items") else received)
    order = sorted(items)
    missing = [] if expected_ids is None else sorted(set(expected_ids) - set(items))
    return ReassemblyResult(order, [items[s] for s in order], missing)


class ProtocolEngine:
    """One simulation trial. Not thread-safe; use one engine per seed."""

    def __init__(self, config: SimulationConfig, protocol: ProtocolKind, rng):
        self.cfg = config
        self.protocol = protocol
        self.constellation: Constellation = build_constellation(config.constellation)
        self.vectors = enumerate_symbol_vectors(self.constellation, config.M_S)
        self.terms = difference_terms(self.constellation, config.M_S)
        self._bit_table = self.constellation.bit_error_table()
        if isinstance(rng, np.random.Generator):
            streams = rng.spawn(4)
        else:
            streams = [np.random.default_rng(s) for s in np.random.SeedSequence(rng).spawn(4)]
        self.chan_rng, self.csi_rng, self.noise_rng, data_rng = streams

        cfg = config
        self.E = cfg.E
        self.n_sets = cfg.n_sets
        self.source = None
        if cfg.detect:
            self.source = data_rng.integers(
                0, self.constellation.size, (self.n_sets, cfg.symbols_per_packet, cfg.M_S),
                dtype=np.int16)
        self.buffers = RelayBufferState.empty(cfg.N if protocol.uses_relays else 0, cfg.L)
        self.balancing = BalancingState()
        self.next_seq = 0
        self.slot = 0
        self.received: dict[int, np.ndarray | None] = {}
        self.delays: list[int] = []
        self.counts = {MAX_LINK_SR: 0, MAX_LINK_RD: 0, DIRECT: 0, OUTAGE: 0}
        self.rates = {MAX_LINK_SR: [], MAX_LINK_RD: [], DIRECT: []}
        self.peps: list[float] = []
        self.trace: list[SlotOutcome] = []
        n_relays = len(self.buffers.queues)
        self.occupancy_sum = np.zeros(n_relays)
        self.departures = np.zeros(n_relays)
        self.active_slots = 0
        self._chunk = None
        self._chunk_pos = 0

    # channel supply -------------------------------------------------------
    def _next_inputs(self) -> SlotInputs:
        if self._chunk is None or self._chunk_pos >= len(self._chunk[0]):
            cfg = self.cfg
            batch = generate_channel_batch(self.chan_rng, cfg.chunk_slots, cfg.N, cfg.M_S, cfg.U,
                                           cfg.profile)
            apply_csi_error_batch(self.csi_rng, batch, cfg.csi, self.E)
            mmd = distance_report_batch(batch, self.constellation, MMD, self.terms)
            qn = distance_report_batch(batch, self.constellation, QN) \
                if self.protocol.criterion == QN else None
            self._chunk = (batch, mmd, qn)
            self._chunk_pos = 0
        batch, mmd, qn = self._chunk
        k = self._chunk_pos
        self._chunk_pos += 1
        return SlotInputs(batch.slot(k), mmd.slot(k), None if qn is None else qn.slot(k))

    # state queries --------------------------------------------------------
    @property
    def source_has_data(self) -> bool:
        return self.next_seq < self.n_sets

    @property
    def finished(self) -> bool:
        return not self.source_has_data and self.buffers.total() == 0

    @property
    def slot_budget(self) -> int:
        return self.cfg.slot_budget_factor * max(self.n_sets, 1)

    # scheduling -----------------------------------------------------------
    def decide(self, inputs: SlotInputs) -> SlotDecision | None:
        """Pick this slot's action; ``None`` means nothing is transmitted."""
        p = self.protocol
        has_data = self.source_has_data
        if p.name == "direct_mimo" or not self.buffers.queues:
            return SlotDecision(DIRECT) if has_data else None
        if p.name == "threshold_max_link_dt":
            return self._decide_threshold(inputs)

        report = inputs.mmd if p.criterion == MMD else inputs.qn
        lengths = self.buffers.lengths()
        try:
            sel = select_max_link(report, self.balancing, lengths, self.buffers.capacity, has_data)
            winner = sel.winner
        except NoFeasibleCandidate:
            winner = None
        switch = p.switch if p.name == "switched_max_link" else 0.0
        if winner is None:
            if not has_data:
                return None
            return decide_mode(None, report.sd, switch) if switch > 0 else None
        decision = decide_mode(winner, report.sd, switch)
        if decision.mode == DIRECT and not has_data:
            # source exhausted: flush the relays instead of idling
            decision = SlotDecision(MAX_LINK_RD, winner.relay, winner.u, winner.value, decision.G)
        return decision

    def _decide_threshold(self, inputs: SlotInputs) -> SlotDecision:
        cfg = self.cfg
        ch = inputs.channels
        threshold = self.protocol.r0 * cfg.M_S
        e = self.E / cfg.M_S / cfg.N0
        has_data = self.source_has_data
        if has_data and log2det_capacity(ch.H_SD_est, 2.0 * e) >= threshold:
            return SlotDecision(DIRECT)
        lengths = self.buffers.lengths()
        best = None
        for i in range(len(lengths)):
            if has_data and lengths[i] < self.buffers.capacity:
                rate = log2det_capacity(ch.H_SR_est[i], e)
                if rate >= threshold and (best is None or rate > best.value):
                    best = Candidate(SR, i, rate)
            if lengths[i] > 0:
                blocks = split_submatrices(ch.H_RD_est[i], cfg.M_S)
                rates = [log2det_capacity(b, e) for b in blocks]
                u = int(np.argmax(rates))
                if rates[u] >= threshold and (best is None or rates[u] > best.value):
                    best = Candidate(RD, i, rates[u], u)
        if best is None:
            return SlotDecision(OUTAGE)
        if best.link == SR:
            return SlotDecision(MAX_LINK_SR, best.relay, None, best.value)
        return SlotDecision(MAX_LINK_RD, best.relay, best.u, best.value)

    # transmission ---------------------------------------------------------
    def _transmit(self, H_true, H_est, energy, symbols):
        if symbols is None:
            return None
        x = self.constellation.symbols[symbols]  # (n, M_S)
        y = np.sqrt(energy) * (x @ H_true.T)
        y = y + awgn(self.noise_rng, y.shape, self.cfg.N0)
        idx, _ = ml_detect_batch(y, H_est, energy, self.vectors)
        return self.vectors.indices[idx].astype(np.int16)

    def execute(self, decision: SlotDecision, inputs: SlotInputs) -> SlotOutcome:
        cfg = self.cfg
        ch = inputs.channels
        t = self.slot
        E, M = self.E, cfg.M_S
        mmd = inputs.mmd
        mode = decision.mode
        if mode == DIRECT:
            seq = self.next_seq
            self.next_seq += 1
            src = None if self.source is None else self.source[seq]
            self.received[seq] = self._transmit(ch.H_SD, ch.H_SD_est, 2 * E / M, src)
            self.delays.append(0)
            self.buffers.e_d ^= 1
            d = float(mmd.sd)
            pep = float(pep_direct(d, E, cfg.N0, M))
            rate = sum_rate_slot(DIRECT, ch.H_SD, E, cfg.N0, M)
            out = SlotOutcome(t, mode, d_min=d, pep=pep, rate=rate, seq=seq)
        elif mode == MAX_LINK_SR:
            k = decision.relay
            seq = self.next_seq
            self.next_seq += 1
            src = None if self.source is None else self.source[seq]
            detected = self._transmit(ch.H_SR[k], ch.H_SR_est[k], E / M, src)
            self.buffers.push(k, PacketSet(seq, detected, t))
            d = float(mmd.sr[k])
            pep = float(pep_cooperative(d, E, cfg.N0, M))
            rate = sum_rate_slot(MAX_LINK_SR, ch.H_SR[k], E, cfg.N0, M)
            out = SlotOutcome(t, mode, k, None, d, pep, rate, seq)
        elif mode == MAX_LINK_RD:
            j, u = decision.relay, decision.u
            ps = self.buffers.pop(j)
            blk = slice(u * M, (u + 1) * M)
            self.received[ps.seq] = self._transmit(ch.H_RD[j][blk], ch.H_RD_est[j][blk], E / M,
                                                   ps.symbols)
            self.delays.append(t - ps.arrival_slot)
            d = float(mmd.rd_block[j, u])
            pep = float(pep_cooperative(d, E, cfg.N0, M))
            rate = sum_rate_slot(MAX_LINK_RD, ch.H_RD[j][blk], E, cfg.N0, M)
            out = SlotOutcome(t, mode, j, u, d, pep, rate, ps.seq)
        elif mode == OUTAGE:
            out = SlotOutcome(t, OUTAGE)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        self.counts[mode] += 1
        if mode in self.rates:
            self.rates[mode].append(out.rate)
            self.peps.append(out.pep)
        return out

    def step(self) -> SlotOutcome | None:
        """Advance one slot. Returns ``None`` once nothing is left to send."""
        if self.finished:
            return None
        inputs = self._next_inputs()
        decision = self.decide(inputs)
        if decision is None:
            return None
        active = self.source_has_data
        if active:
            self.occupancy_sum += self.buffers.lengths()
            self.active_slots += 1
        outcome = self.execute(decision, inputs)
        if active and outcome.mode == MAX_LINK_RD:
            self.departures[outcome.relay] += 1
        if self.protocol.criterion is not None:
            rep = inputs.mmd if self.protocol.criterion == MMD else inputs.qn
            self.balancing.update(rep.sr, rep.rd)
        self.slot += 1
        self._check_invariants()
        if self.cfg.record_trace:
            self.trace.append(outcome)
        return outcome

    def _check_invariants(self):
        lengths = self.buffers.lengths()
        assert all(0 <= n <= self.buffers.capacity for n in lengths), lengths
        assert len(self.received) + sum(lengths) + (self.n_sets - self.next_seq) == self.n_sets

    def run(self) -> RunMetrics:
        budget = self.slot_budget
        while self.slot < budget:
            if self.step() is None:
                break
        exhausted = not self.finished
        if exhausted:
            log.warning("%s at %.1f dB: slot budget %d exhausted with %d sets undelivered",
                        self.protocol.label, self.cfg.snr_db, budget,
                        self.n_sets - len(self.received))
        return self.metrics(budget_exhausted=exhausted)

    def metrics(self, budget_exhausted: bool = False) -> RunMetrics:
        cfg = self.cfg
        res = reassemble(self.received, range(self.n_sets))
        bits = errors = 0
        per_set = None
        if self.source is not None and res.order:
            sent = self.source[res.order]
            got = np.stack(res.payloads)
            per_set = self._bit_table[sent, got].sum(axis=(1, 2))
            errors = int(per_set.sum())
            bits = sent.size * self.constellation.bits_per_symbol
        n_sr, n_rd, n_sd = (self.counts[m] for m in (MAX_LINK_SR, MAX_LINK_RD, DIRECT))
        if n_sr + n_rd + n_sd:
            rate = sum_rate_aggregate(self.rates[MAX_LINK_SR], self.rates[MAX_LINK_RD],
                                      self.rates[DIRECT])
            # outage slots carry nothing but still cost a cooperative slot
            rate *= (n_sr + n_rd + 2 * n_sd) / (n_sr + n_rd + 2 * n_sd + self.counts[OUTAGE])
        else:
            rate = 0.0
        delivered = len(res.order)
        relayed = n_rd
        active = max(self.active_slots, 1)
        return RunMetrics(
            protocol=self.protocol.label,
            snr_db=cfg.snr_db,
            ber=errors / bits if bits else float("nan"),
            bit_errors=errors,
            bits=bits,
            avg_delay=float(np.mean(self.delays)) if self.delays else 0.0,
            avg_throughput=delivered / self.slot if self.slot else 0.0,
            n_sr=n_sr,
            n_rd=n_rd,
            n_sd=n_sd,
            n_outage=self.counts[OUTAGE],
            n_slots=self.slot,
            pep_theory=float(np.mean(self.peps)) if self.peps else float("nan"),
            sum_rate=rate,
            delivered=delivered,
            undelivered=len(res.missing),
            budget_exhausted=budget_exhausted,
            p_ml=relayed / delivered if delivered else 0.0,
            occupancy=self.occupancy_sum / active,
            departures=self.departures.copy(),
            active_slots=self.active_slots,
            trace=list(self.trace) if cfg.record_trace else None,
            set_bit_errors=per_set,
        )


def step_slot(engine: ProtocolEngine) -> SlotOutcome | None:
    return engine.step()


def run_protocol(config: SimulationConfig, protocol: ProtocolKind, rng) -> RunMetrics:
    """Simulate until every packet-set is delivered or the slot budget runs out.

    ``rng`` is a seed (int) or a ``numpy.random.Generator``.
    """
    return ProtocolEngine(config, protocol, rng).run()
