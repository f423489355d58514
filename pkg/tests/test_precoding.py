"""Precoding tests: matched beamformer geometry, rate formulas, the
log-det tangent bound, DC ascent, rank-1 reduction oracles, and the joint
design loop contract."""

import numpy as np
import pytest

from cranmq.channel import OneRingParams, make_training_ensemble, one_ring_correlation
from cranmq.design import DesignConfig
from cranmq.precoding import (
    DcConfig,
    achievable_rate,
    dc_precoder,
    estimate_quant_noise_cov,
    joint_design,
    logdet_linearization,
    matched_beamformer,
    rank1_reduce,
    sum_rate,
)
from cranmq.codebooks import ProductCodebook, ScalarCodebook
from cranmq.quantize import mq_map_batch
from cranmq.rng import substream
from cranmq.solvers import InfeasibleError


def random_channel(rng, m_ru, n_ue):
    return (rng.standard_normal((m_ru, n_ue))
            + 1j * rng.standard_normal((m_ru, n_ue))) / np.sqrt(2)


# ---------------------------------------------------------------------------
# matched beamformer


def test_matched_beamformer_scalar_case():
    w = matched_beamformer(np.array([[2.0 + 0j]]), gamma=1.0)
    assert abs(w[0, 0] - 1.0) < 1e-12


def test_matched_beamformer_two_ru_geometry():
    h = np.array([[np.sqrt(1 / 3)], [np.sqrt(2 / 3)]], dtype=complex)
    w = matched_beamformer(h, gamma=2 / 3)
    assert np.max(np.abs(w - h)) < 1e-12  # binding antenna is already at 2/3


def test_matched_beamformer_direction_parallel():
    rng = substream(61, "mb")
    h = random_channel(rng, 4, 2)
    w = matched_beamformer(h, gamma=0.5)
    for k in range(2):
        cos = abs(np.vdot(h[:, k], w[:, k])) \
            / (np.linalg.norm(h[:, k]) * np.linalg.norm(w[:, k]))
        assert cos > 1 - 1e-12
    assert np.max(np.sum(np.abs(w) ** 2, axis=1)) <= 0.5 + 1e-12
    with pytest.raises(ValueError):
        matched_beamformer(np.zeros((2, 1)))


# ---------------------------------------------------------------------------
# achievable rate


def test_rate_interference_free_reduction():
    rng = substream(62, "rate")
    h = random_channel(rng, 3, 1)
    w = matched_beamformer(h, 1.0)
    p = 10.0
    want = np.log2(1 + p * abs(np.vdot(h[:, 0], w[:, 0])) ** 2)
    assert abs(achievable_rate(h, w, None, p, 0) - want) < 1e-12


def test_rate_vanishes_under_large_noise():
    rng = substream(63, "noise")
    h = random_channel(rng, 2, 1)
    w = matched_beamformer(h, 1.0)
    rates = [achievable_rate(h, w, s * np.eye(2), 10.0, 0)
             for s in (0.0, 1.0, 100.0, 1e6)]
    assert all(np.diff(rates) < 0)
    assert rates[-1] < 1e-4


def test_rate_symmetric_users_equal():
    h = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
    w = np.array([[0.6, 0.0], [0.0, 0.6]], dtype=complex)
    r0 = achievable_rate(h, w, None, 5.0, 0)
    r1 = achievable_rate(h, w, None, 5.0, 1)
    assert abs(r0 - r1) < 1e-12


# ---------------------------------------------------------------------------
# log-det linearization


def test_logdet_linearization_zero_step():
    a = np.array([[2.0, 0.3], [0.3, 1.0]], dtype=complex)
    assert abs(logdet_linearization(a, a)
               - np.log2(np.linalg.det(a).real)) < 1e-10


def test_logdet_linearization_hand_value():
    a = np.eye(2, dtype=complex)
    b = 2 * np.eye(2, dtype=complex)
    f = logdet_linearization(a, b)
    assert abs(f - 2 / np.log(2)) < 1e-12
    assert f >= np.log2(np.linalg.det(b).real)


def test_logdet_linearization_majorizes_on_random_pairs():
    rng = substream(64, "tangent")
    for _ in range(300):
        n = int(rng.integers(1, 4))
        x = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        y = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        a = x @ x.conj().T + 0.1 * np.eye(n)
        b = y @ y.conj().T + 0.01 * np.eye(n)
        f = logdet_linearization(a, b)
        assert f >= np.log2(np.linalg.det(b).real) - 1e-10
    # equality at the expansion point within 1e-10
    assert abs(logdet_linearization(a, a)
               - np.log2(np.linalg.det(a).real)) < 1e-10


# ---------------------------------------------------------------------------
# rank-1 reduction


def test_rank1_exact_recovery():
    rng = substream(65, "r1")
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v = np.outer(w, w.conj())
    got = rank1_reduce(v)
    ref = w * np.exp(-1j * np.angle(w[0]))
    assert np.max(np.abs(got - ref)) < 1e-10


def test_rank1_principal_axis():
    got = rank1_reduce(np.diag([2.0, 1.0]).astype(complex))
    assert np.allclose(got, [np.sqrt(2), 0.0])
    assert np.allclose(rank1_reduce(np.zeros((3, 3))), 0.0)


def test_rank1_is_frobenius_nearest_among_random_candidates():
    rng = substream(66, "eckart")
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    v = a @ a.conj().T
    w = rank1_reduce(v)
    base = np.linalg.norm(v - np.outer(w, w.conj()))
    for _ in range(1000):
        c = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        assert np.linalg.norm(v - np.outer(c, c.conj())) >= base - 1e-9


# ---------------------------------------------------------------------------
# DC precoder


def test_dc_scalar_closed_form():
    h = np.array([[1.3 - 0.7j]])
    gamma, p = 0.8, 10.0
    res = dc_precoder(h, None, DcConfig(power=p, gamma=gamma, r_max=5))
    rate = achievable_rate(h, res.precoder, None, p, 0)
    want = np.log2(1 + p * gamma * abs(h[0, 0]) ** 2)
    assert abs(rate - want) < 1e-4
    assert abs(abs(res.precoder[0, 0]) - np.sqrt(gamma)) < 1e-4


def test_dc_beats_matched_beamformer_single_user():
    rng = substream(67, "dc")
    p = 10.0
    cfg = DcConfig(power=p, gamma=0.5, r_max=5)
    for _ in range(25):
        h = random_channel(rng, 4, 1)
        res = dc_precoder(h, None, cfg)
        base = sum_rate(h, matched_beamformer(h, 0.5), None, p)
        assert sum_rate(h, res.precoder, None, p) >= base - 1e-9


def test_dc_surrogate_and_true_rates_nondecreasing():
    rng = substream(68, "mm")
    cfg = DcConfig(power=10.0, gamma=0.6, r_max=5)
    for _ in range(20):
        h = random_channel(rng, 3, 2)
        res = dc_precoder(h, None, cfg)
        assert np.all(np.diff(res.surrogate_values) >= -1e-9)
        assert np.all(np.diff(res.true_rates) >= -1e-6)


def test_dc_respects_omega_margin_and_infeasibility():
    rng = substream(69, "om")
    h = random_channel(rng, 2, 1)
    omega = np.diag([0.3, 0.1]).astype(complex)
    cfg = DcConfig(power=10.0, gamma=0.5, r_max=3)
    res = dc_precoder(h, omega, cfg)
    loads = np.sum(np.abs(res.precoder) ** 2, axis=1) + np.diag(omega).real
    assert np.all(loads <= 0.5 + 1e-9)
    with pytest.raises(InfeasibleError):
        dc_precoder(h, np.diag([0.6, 0.1]).astype(complex), cfg)


# ---------------------------------------------------------------------------
# quantization noise covariance


def test_omega_zero_for_exact_codebook():
    rng = substream(70, "omega0")
    h = random_channel(rng, 2, 1)
    w = matched_beamformer(h, 1.0)
    symbols = (rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1)))
    x = symbols @ w.T
    # codebooks containing exactly the precoded samples per RU
    pads = [ScalarCodebook(levels=np.concatenate([x[:, i]]).ravel())
            for i in range(2)]
    omega = estimate_quant_noise_cov(symbols, w, h, ProductCodebook(per_ru=pads))
    assert np.max(np.abs(omega)) < 1e-20


def test_omega_psd_and_rank_bound():
    rng = substream(71, "omegapsd")
    h = random_channel(rng, 3, 2)
    w = matched_beamformer(h, 0.5)
    symbols = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    levels = ScalarCodebook(levels=np.array([-0.5, 0.5], dtype=complex))
    cb = ProductCodebook(per_ru=[levels] * 3)
    omega = estimate_quant_noise_cov(symbols, w, h, cb)
    assert np.max(np.abs(omega - omega.conj().T)) < 1e-12
    eig = np.linalg.eigvalsh(omega)
    assert eig.min() >= -1e-12
    assert np.sum(eig > 1e-12) <= min(3, 2)  # rank <= min(M, N_s)


def test_omega_invariant_to_symbol_order():
    rng = substream(72, "perm")
    h = random_channel(rng, 2, 1)
    w = matched_beamformer(h, 0.5)
    symbols = (rng.standard_normal((16, 1)) + 1j * rng.standard_normal((16, 1)))
    levels = ScalarCodebook(levels=np.array([-0.7, 0.0 + 0.3j, 0.7, 1.0],
                                            dtype=complex))
    cb = ProductCodebook(per_ru=[levels] * 2)
    o1 = estimate_quant_noise_cov(symbols, w, h, cb)
    o2 = estimate_quant_noise_cov(symbols[::-1], w, h, cb)
    assert np.max(np.abs(o1 - o2)) < 1e-12


# ---------------------------------------------------------------------------
# joint design


def test_joint_design_runs_and_reports():
    corr = one_ring_correlation(OneRingParams(np.pi / 4, 2 * np.pi, 2))
    ens = make_training_ensemble([corr], 6, 200, substream(73, "joint"))
    res = joint_design(ens, None, DesignConfig(rate_bits=(2, 2), epsilon=5e-3),
                       DcConfig(power=10.0, gamma=1.0, r_max=3))
    assert res.trace.size >= 1
    assert np.all(np.isfinite(res.trace))
    assert len(res.omega_trace) == res.trace.size
    assert res.precoders.shape == (6, 2, 1)
    for cb, f in zip(res.codebook.per_ru, res.frequencies):
        assert np.sum(f * np.abs(cb.levels) ** 2) <= 1.0 + 1e-9
    # per-channel omegas are Hermitian PSD
    for m in range(6):
        o = res.omegas[m]
        assert np.max(np.abs(o - o.conj().T)) < 1e-12
        assert np.linalg.eigvalsh(o).min() >= -1e-12


def test_joint_design_ptpq_variant():
    corr = one_ring_correlation(OneRingParams(np.pi / 4, 2 * np.pi, 2))
    ens = make_training_ensemble([corr], 4, 150, substream(74, "jointpq"))
    res = joint_design(ens, None, DesignConfig(rate_bits=(2, 2), epsilon=5e-3),
                       DcConfig(power=10.0, gamma=1.0, r_max=3),
                       quantizer="ptpq")
    assert res.trace.size >= 1
    with pytest.raises(ValueError):
        joint_design(ens, None, DesignConfig(rate_bits=(2, 2)),
                     DcConfig(power=10.0), quantizer="bogus")
