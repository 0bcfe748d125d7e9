import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smlrelay.channel import (CsiModel, LinkVarianceProfile, UnsupportedConstellation,
                              apply_csi_error, apply_csi_error_batch, awgn, build_constellation,
                              enumerate_symbol_vectors, generate_channel_batch, generate_channels,
                              split_submatrices, stack_submatrices)


def test_bpsk_constellation():
    c = build_constellation("BPSK")
    np.testing.assert_array_equal(c.symbols, [-1, 1])
    assert c.W == 1
    np.testing.assert_array_equal(c.distance_alphabet, [2])


def test_qpsk_constellation():
    c = build_constellation("qpsk")
    assert c.W == 3
    s2 = np.sqrt(2)
    np.testing.assert_allclose(sorted(c.distance_alphabet, key=lambda z: (z.real, z.imag)),
                               sorted([s2, s2 * 1j, s2 + s2 * 1j], key=lambda z: (z.real, z.imag)))
    np.testing.assert_allclose(np.abs(c.symbols), 1.0)


def test_qpsk_gray_labels_neighbours_differ_by_one_bit():
    c = build_constellation("QPSK")
    for a in range(4):
        for b in range(4):
            d = abs(c.symbols[a] - c.symbols[b])
            if np.isclose(d, np.sqrt(2)):
                assert bin(int(c.labels[a]) ^ int(c.labels[b])).count("1") == 1


def test_unsupported_constellation():
    with pytest.raises(UnsupportedConstellation, match="unsupported"):
        build_constellation("16QAM")


def test_enumerate_bpsk_two():
    v = enumerate_symbol_vectors(build_constellation("BPSK"), 2)
    assert {tuple(x) for x in v.vectors.real} == {(-1, -1), (-1, 1), (1, -1), (1, 1)}
    assert len(v) == 4


def test_enumerate_counts():
    assert len(enumerate_symbol_vectors(build_constellation("BPSK"), 1)) == 2
    assert len(enumerate_symbol_vectors(build_constellation("QPSK"), 2)) == 16


def test_channel_variances(rng):
    batch = generate_channel_batch(rng, 50_000, 1, 2, 1, LinkVarianceProfile(1.0, 1.0, 1.0))
    assert np.var(batch.H_SD) == pytest.approx(1.0, abs=0.02)
    batch = generate_channel_batch(rng, 50_000, 1, 2, 1, LinkVarianceProfile(1.0, 1.0, 0.2))
    assert np.var(batch.H_SD) == pytest.approx(0.2, abs=0.01)
    assert abs(batch.H_SD.mean()) < 0.01


def test_no_relays_only_sd(rng):
    ch = generate_channels(rng, 0, 2, 1, LinkVarianceProfile())
    assert ch.H_SR.shape[0] == 0 and ch.H_RD.shape[0] == 0
    assert ch.H_SD.shape == (2, 2)


def test_slot_independence(rng):
    batch = generate_channel_batch(rng, 10_000, 1, 1, 1, LinkVarianceProfile())
    x = batch.H_SD[:, 0, 0]
    r = np.abs(np.vdot(x[:-1], x[1:])) / np.vdot(x, x).real
    assert r < 4 / np.sqrt(len(x))


def test_perfect_csi_is_exact(rng):
    ch = generate_channels(rng, 3, 2, 2, LinkVarianceProfile())
    est = apply_csi_error(rng, ch, CsiModel(0.0, 0.0), 10.0)
    np.testing.assert_array_equal(est.H_SR_est, est.H_SR)
    np.testing.assert_array_equal(est.H_SD_est, est.H_SD)


def test_csi_error_variance(rng):
    batch = generate_channel_batch(rng, 30_000, 1, 2, 1, LinkVarianceProfile())
    apply_csi_error_batch(rng, batch, CsiModel(1.0, 0.8), 10.0)
    assert np.var(batch.H_SR_est - batch.H_SR) == pytest.approx(10 ** -0.8, rel=0.03)
    assert np.var(batch.H_SD_est - batch.H_SD) == pytest.approx(20 ** -0.8, rel=0.03)


def test_csi_error_scales_with_energy(rng):
    def measured(E):
        b = generate_channel_batch(rng, 25_000, 1, 2, 1, LinkVarianceProfile())
        apply_csi_error_batch(rng, b, CsiModel(1.0, 0.5), E)
        return np.var(b.H_SR_est - b.H_SR)
    assert measured(20.0) / measured(10.0) == pytest.approx(2 ** -0.5, rel=0.05)


def test_awgn_statistics(rng):
    n = awgn(rng, 100_000, 1.0)
    assert np.var(n) == pytest.approx(1.0, abs=0.02)
    assert np.var(n.real) == pytest.approx(0.5, abs=0.02)
    assert np.var(n.imag) == pytest.approx(0.5, abs=0.02)
    assert abs(n.mean()) < 0.02


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_submatrix_round_trip(M, U, seed):
    H = np.random.default_rng(seed).standard_normal((U * M, M)) + 0j
    blocks = split_submatrices(H, M)
    assert blocks.shape == (U, M, M)
    np.testing.assert_array_equal(stack_submatrices(blocks), H)


def test_invalid_variance():
    with pytest.raises(ValueError):
        LinkVarianceProfile(1.0, 0.0, 1.0)
