import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import bpsk_rayleigh_ber
from smlrelay.channel import CsiModel, LinkVarianceProfile
from smlrelay.engine import (DirectMimo, MmdMaxLink, ProtocolEngine, QnMaxLink, SimulationConfig,
                             SwitchedMaxLink, ThresholdMaxLinkDT, parse_protocol, reassemble,
                             run_protocol, step_slot)
from smlrelay.selection import DIRECT, MAX_LINK_SR

LOW_SD = LinkVarianceProfile(1.0, 1.0, 0.2)


def test_config_rejects_partial_packet_sets():
    with pytest.raises(ValueError, match="buffer size must hold whole packet-sets"):
        SimulationConfig(N=3, M_S=2, J=3)


def test_parse_protocol():
    assert parse_protocol("mmd_max_link") == MmdMaxLink()
    assert parse_protocol({"name": "switched_max_link", "S": 10}).switch == 10
    assert parse_protocol({"name": "threshold_max_link_dt", "r0": 2}).r0 == 2
    with pytest.raises(ValueError, match="unknown protocol"):
        parse_protocol("max_max_link")


def test_first_slot_is_sr():
    eng = ProtocolEngine(SimulationConfig(N=3, packets=20), MmdMaxLink(), 1)
    assert step_slot(eng).mode == MAX_LINK_SR


def test_low_power_sd_rarely_direct():
    m = run_protocol(SimulationConfig(N=3, snr_db=8, packets=4000, profile=LOW_SD, detect=False),
                     SwitchedMaxLink(1), 2)
    assert m.n_sd < 0.1 * (m.n_sr + m.n_rd)


def test_direct_mimo_matches_rayleigh_oracle():
    E = 10 ** 0.4
    m = run_protocol(SimulationConfig(N=0, M_S=1, J=1, snr_db=4, packets=10_000), DirectMimo(), 3)
    assert m.ber == pytest.approx(bpsk_rayleigh_ber(2 * E), rel=0.05)
    assert m.n_sd == 10_000 and m.avg_delay == 0


def test_switch_zero_trace_equals_mmd():
    cfg = SimulationConfig(N=3, snr_db=6, packets=600, record_trace=True)
    a = run_protocol(cfg, SwitchedMaxLink(0), 9)
    b = run_protocol(cfg, MmdMaxLink(), 9)
    assert a.trace == b.trace
    assert a.bit_errors == b.bit_errors


def test_run_is_deterministic():
    cfg = SimulationConfig(N=2, snr_db=4, packets=400)
    a, b = run_protocol(cfg, SwitchedMaxLink(1), 4), run_protocol(cfg, SwitchedMaxLink(1), 4)
    assert (a.ber, a.avg_delay, a.sum_rate, a.pep_theory) == (b.ber, b.avg_delay, b.sum_rate,
                                                               b.pep_theory)


@pytest.mark.parametrize("proto", [MmdMaxLink(), QnMaxLink(), SwitchedMaxLink(2),
                                   ThresholdMaxLinkDT(0.5)])
def test_every_set_delivered_and_balanced(proto):
    cfg = SimulationConfig(N=3, J=4, snr_db=6, packets=2000, csi=CsiModel(1.0, 0.8))
    m = run_protocol(cfg, proto, 5)
    assert m.undelivered == 0 and not m.budget_exhausted
    assert m.delivered == 1000
    assert m.n_sr == m.n_rd
    assert 0 <= m.ber < 0.5


def test_budget_exhaustion_is_flagged():
    cfg = SimulationConfig(N=2, snr_db=0, packets=20, slot_budget_factor=2)
    m = run_protocol(cfg, ThresholdMaxLinkDT(50.0), 1)
    assert m.budget_exhausted and m.undelivered > 0
    assert m.n_outage == m.n_slots


def test_mmd_beats_qn():
    cfg = SimulationConfig(N=3, snr_db=8, packets=4000)
    assert run_protocol(cfg, MmdMaxLink(), 1).ber < run_protocol(cfg, QnMaxLink(), 1).ber


def test_ber_non_increasing_in_snr():
    bers = [run_protocol(SimulationConfig(N=3, snr_db=s, packets=2000), MmdMaxLink(), 2).ber
            for s in (0, 4, 8)]
    assert bers[0] > bers[1] > bers[2]


def test_little_law_closure():
    m = run_protocol(SimulationConfig(N=3, J=4, snr_db=12, packets=8000, detect=False),
                     MmdMaxLink(), 6)
    assert m.little_delay == pytest.approx(m.avg_delay, rel=0.10)


def test_bpsk_and_qpsk_run():
    m = run_protocol(SimulationConfig(N=2, constellation="QPSK", snr_db=10, packets=200),
                     SwitchedMaxLink(1), 1)
    assert m.undelivered == 0 and m.bits == 100 * 100 * 2 * 2


def test_reassemble_examples():
    r = reassemble({3: "c", 1: "a", 2: "b"}, [1, 2, 3])
    assert r.order == [1, 2, 3] and r.payloads == ["a", "b", "c"] and not r.missing
    assert reassemble({0: 0, 1: 1}, [0, 1]).order == [0, 1]
    assert reassemble({0: 0}, [0, 1]).missing == [1]


@settings(max_examples=50, deadline=None)
@given(st.permutations(list(range(100))))
def test_reassemble_sorts(perm):
    r = reassemble({k: k for k in perm}, range(100))
    assert r.order == sorted(perm)


def test_direct_slots_counted_once_in_rate():
    m = run_protocol(SimulationConfig(N=0, M_S=2, J=2, snr_db=0, packets=200), DirectMimo(), 1)
    assert m.sum_rate > 0 and m.n_sd == 100 and m.n_sr == 0
