"""Channel-model tests: one-ring correlation against independent quadrature
oracles, and statistical checks on the Gaussian sampling routines."""

import numpy as np
import pytest

from cranmq.channel import (
    OneRingParams,
    make_training_ensemble,
    one_ring_correlation,
    sample_channels,
    sample_symbols,
)
from cranmq.rng import substream


def trapezoid_oracle(theta, delta, offset, n=400_000):
    """Independent dense-trapezoid evaluation of the correlation integral."""
    phi = np.linspace(theta - delta, theta + delta, n)
    vals = np.exp(-1j * np.pi * offset * np.sin(phi))
    return np.trapezoid(vals, phi) / (2 * delta)


def test_unit_diagonal_and_trivial_entry():
    corr = one_ring_correlation(OneRingParams(theta=np.pi / 4, delta=2 * np.pi,
                                              num_antennas=2))
    assert corr[0, 0] == 1.0
    assert corr[1, 1] == 1.0


def test_full_spread_offdiagonal_matches_bessel_oracle():
    # over a full period the integral reduces to J0(pi) = -0.30424217763...
    corr = one_ring_correlation(OneRingParams(theta=np.pi / 4, delta=2 * np.pi,
                                              num_antennas=2))
    oracle = trapezoid_oracle(np.pi / 4, 2 * np.pi, offset=-1)
    assert abs(corr[0, 1] - oracle) < 1e-7
    assert abs(corr[0, 1] - (-0.3042421776392431)) < 1e-9
    assert abs(corr[0, 1].imag) < 1e-9


def test_degenerate_spread_collapses_to_point_evaluation():
    # delta -> 0+ turns the average into a point evaluation at theta; with
    # entry (m, n) built from exp(-j*pi*(m-n)*sin(phi)), the m > n entry
    # carries the negative phase and the mirrored entry its conjugate
    corr = one_ring_correlation(OneRingParams(theta=np.pi / 4, delta=1e-7,
                                              num_antennas=2))
    expected = np.exp(-1j * np.pi * np.sin(np.pi / 4))
    assert abs(corr[1, 0] - expected) < 1e-6
    assert abs(corr[0, 1] - np.conj(expected)) < 1e-6


@pytest.mark.parametrize("m_ant", [2, 4, 8])
@pytest.mark.parametrize("delta", [np.pi / 6, np.pi / 2, 2 * np.pi])
def test_correlation_hermitian_psd_unit_diagonal(m_ant, delta):
    corr = one_ring_correlation(OneRingParams(theta=np.pi / 4, delta=delta,
                                              num_antennas=m_ant))
    assert np.array_equal(corr, corr.conj().T)
    assert np.min(np.linalg.eigvalsh(corr)) >= -1e-10
    assert np.max(np.abs(np.diag(corr) - 1)) <= 1e-10


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        OneRingParams(theta=np.nan, delta=1.0, num_antennas=2)
    with pytest.raises(ValueError):
        OneRingParams(theta=0.0, delta=0.0, num_antennas=2)
    with pytest.raises(ValueError):
        OneRingParams(theta=0.0, delta=1.0, num_antennas=0)


def test_white_channel_sample_covariance():
    n_h = 4000
    h = sample_channels([np.eye(2)], n_h, substream(11, "white"))
    flat = h[:, :, 0]
    cov = np.einsum("ni,nj->ij", flat, flat.conj()) / n_h
    assert np.linalg.norm(cov - np.eye(2)) < 5 / np.sqrt(n_h)


def test_rank_one_correlation_gives_steering_direction():
    params = OneRingParams(theta=np.pi / 4, delta=1e-9, num_antennas=4)
    corr = one_ring_correlation(params)
    h = sample_channels([corr], 50, substream(12, "rank1"))
    steer = corr[:, 0] / np.linalg.norm(corr[:, 0])
    for n in range(50):
        v = h[n, :, 0]
        cos = abs(np.vdot(steer, v)) / np.linalg.norm(v)
        assert cos > 1 - 1e-6


def test_sample_covariance_matches_quadrature_oracle():
    params = OneRingParams(theta=np.pi / 4, delta=2 * np.pi, num_antennas=4)
    corr = one_ring_correlation(params)
    h = sample_channels([corr], 10_000, substream(13, "cov"))
    flat = h[:, :, 0]
    cov = np.einsum("ni,nj->ij", flat, flat.conj()) / flat.shape[0]
    assert np.linalg.norm(cov - corr) < 0.1


def test_non_psd_covariance_rejected():
    bad = np.array([[1.0, 0.0], [0.0, -0.5]], dtype=complex)
    with pytest.raises(ValueError, match="PSD"):
        sample_channels([bad], 3, substream(14, "bad"))


def test_symbol_moments_and_determinism():
    s = sample_symbols(1, 100_000, substream(15, "sym"))
    assert abs(np.mean(np.abs(s) ** 2) - 1.0) < 0.02

    s2 = sample_symbols(2, 100_000, substream(16, "sym2"))
    cross = np.mean(s2[:, 0] * np.conj(s2[:, 1]))
    assert abs(cross) < 0.02

    a = sample_symbols(3, 64, substream(17, "det"))
    b = sample_symbols(3, 64, substream(17, "det"))
    assert np.array_equal(a, b)


def test_channel_sampling_bit_reproducible():
    corr = one_ring_correlation(OneRingParams(np.pi / 4, 2 * np.pi, 4))
    a = sample_channels([corr, corr], 16, substream(18, "rep"))
    b = sample_channels([corr, corr], 16, substream(18, "rep"))
    assert np.array_equal(a, b)


def test_training_ensemble_symbol_moments():
    corr = one_ring_correlation(OneRingParams(np.pi / 4, 2 * np.pi, 2))
    ens = make_training_ensemble([corr], 10, 5000, substream(19, "ens"))
    n_s = ens.num_symbols
    assert abs(np.mean(ens.symbols)) < 5 / np.sqrt(n_s)
    assert abs(np.mean(np.abs(ens.symbols) ** 2) - 1) < 5 / np.sqrt(n_s)
    assert ens.num_antennas == 2 and ens.num_users == 1
