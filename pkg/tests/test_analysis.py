import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from smlrelay.analysis import (complexity_report, log2det_capacity, pep_cooperative, pep_direct,
                               qfunc, sum_rate_aggregate, sum_rate_slot, theoretical_pep_curve)
from smlrelay.selection import DIRECT, MAX_LINK_RD, MAX_LINK_SR


def test_qfunc_matches_normal_tail():
    x = np.linspace(-3, 8, 50)
    np.testing.assert_allclose(qfunc(x), norm.sf(x), rtol=1e-12)


def test_pep_direct_values():
    assert pep_direct(8, 1, 1, 2) == pytest.approx(norm.sf(np.sqrt(2)), rel=1e-12)
    assert pep_direct(8, 1, 1, 2) == pytest.approx(0.0786, abs=1e-4)
    assert pep_direct(0, 1, 1, 2) == 0.5
    assert pep_direct(1e6, 1, 1, 2) < 1e-100


def test_pep_cooperative_values():
    q = norm.sf(np.sqrt(2))
    assert pep_cooperative(8, 1, 1, 2) == pytest.approx(1 - (1 - q) ** 2, rel=1e-12)
    assert pep_cooperative(8, 1, 1, 2) == pytest.approx(0.1511, abs=1e-4)
    assert pep_cooperative(0, 1, 1, 2) == 0.75


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e3), st.floats(0.01, 1e3), st.integers(1, 4))
def test_pep_cooperative_dominates(d, E, M):
    assert pep_cooperative(d, E, 1.0, M) >= pep_direct(d, E, 1.0, M)


def test_pep_curve_single_slot():
    curve = theoretical_pep_curve({0.0: [(MAX_LINK_SR, 8.0)], 3.0: [(DIRECT, 8.0)]}, 2)
    assert curve[0.0] == pytest.approx(pep_cooperative(8.0, 1.0, 1.0, 2))
    assert curve[3.0] == pytest.approx(pep_direct(8.0, 10 ** 0.3, 1.0, 2))


def test_pep_curve_empty_trace():
    with pytest.raises(ValueError):
        theoretical_pep_curve({0.0: []}, 2)


def test_complexity_table():
    r = complexity_report(3, 1, 2, 1)
    assert (r.X, r.mmd_additions, r.mmd_multiplications) == (4, 36, 48)
    assert (r.qn_additions, r.qn_multiplications) == (18, 24)
    r = complexity_report(3, 1, 1, 1)
    assert (r.mmd_additions, r.mmd_multiplications) == (0, 6)


def test_qn_complexity_independent_of_w():
    a, b = complexity_report(4, 2, 3, 1), complexity_report(4, 2, 3, 3)
    assert (a.qn_additions, a.qn_multiplications) == (b.qn_additions, b.qn_multiplications)


def test_sum_rate_hand_values():
    assert sum_rate_slot(DIRECT, np.eye(2), 1, 1, 2) == pytest.approx(2.0, abs=1e-12)
    assert sum_rate_slot(MAX_LINK_SR, np.eye(2), 1, 1, 2) == pytest.approx(np.log2(1.5), abs=1e-12)
    assert sum_rate_slot(MAX_LINK_RD, np.zeros((2, 2)), 1, 1, 2) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.floats(0.01, 100))
def test_log2det_matches_slogdet(seed, M, U, s):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((U * M, M)) + 1j * rng.standard_normal((U * M, M))
    ref = np.linalg.slogdet(np.eye(U * M) + s * H @ H.conj().T)[1] / np.log(2)
    assert log2det_capacity(H, s) == pytest.approx(ref, rel=1e-10)


def test_sum_rate_dimension_errors():
    with pytest.raises(ValueError):
        sum_rate_slot(MAX_LINK_RD, np.eye(3)[:, :2], 1, 1, 2)
    with pytest.raises(ValueError):
        sum_rate_slot(DIRECT, np.eye(3), 1, 1, 2)


def test_sum_rate_aggregate():
    sr = np.log2(1.5) / 2
    assert sum_rate_aggregate([0.585], [0.585], [2.0]) == pytest.approx(5.17 / 4)
    assert sum_rate_aggregate([sr, 2 * sr], [sr], []) == pytest.approx(4 * sr / 3)
    assert sum_rate_aggregate([], [], [1.0, 3.0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        sum_rate_aggregate([], [], [])
    with pytest.raises(ValueError):
        sum_rate_aggregate([1.0], [], [], n_sr=2)
