"""Codebook-design tests: closed-form Gaussian oracles, Lloyd monotonicity,
power feasibility, and the entropy-constrained termination window."""

import numpy as np
import pytest

from cranmq.channel import TrainingEnsemble, make_training_ensemble
from cranmq.codebooks import ProductCodebook
from cranmq.design import (
    DesignConfig,
    design_mq,
    design_mq_entropy_constrained,
    design_ptpq,
    design_ptpq_entropy_constrained,
    empirical_entropy,
    partition_stats,
    precode_ensemble,
)
from cranmq.quantize import ptpq_map_batch, weighted_projection_distortion
from cranmq.rng import substream
from cranmq.channel import OneRingParams, one_ring_correlation, sample_symbols


def passthrough_ensemble(symbols) -> TrainingEnsemble:
    """Single trivial channel so precoded samples equal the symbols."""
    symbols = np.asarray(symbols, dtype=np.complex128).reshape(-1, 1)
    return TrainingEnsemble(channels=np.ones((1, 1, 1), dtype=np.complex128),
                            symbols=symbols)


def identity_rule(channel):
    return np.ones_like(channel)


def one_ring_ensemble(m_ru, n_ue, n_h, n_s, seed_tag, delta=2 * np.pi):
    corr = one_ring_correlation(OneRingParams(np.pi / 4, delta, m_ru))
    return make_training_ensemble([corr] * n_ue, n_h, n_s,
                                  substream(51, seed_tag))


def matched_rule(gamma=1.0):
    def rule(channel):
        row_power = np.sum(np.abs(channel) ** 2, axis=1)
        return channel * np.sqrt(gamma / row_power.max())
    return rule


# ---------------------------------------------------------------------------
# entropy


def test_empirical_entropy_values():
    assert empirical_entropy([0.5, 0.5]) == 1.0
    assert empirical_entropy([1.0, 0.0, 0.0, 0.0]) == 0.0
    assert abs(empirical_entropy([0.75, 0.25]) - 0.8112781244591328) < 1e-12
    with pytest.raises(ValueError):
        empirical_entropy([0.7, 0.2])


# ---------------------------------------------------------------------------
# scalar design


def test_gaussian_quadrant_centroid_oracle():
    # closed-form conditional mean of a unit-variance circular Gaussian in
    # each quadrant: (+-1/sqrt(pi), +-1/sqrt(pi)); design power 2/pi < 1
    symbols = sample_symbols(1, 100_000, substream(52, "gauss"))
    ens = passthrough_ensemble(symbols)
    res = design_ptpq(ens, identity_rule, DesignConfig(rate_bits=(2,)))
    levels = res.codebooks[0].levels
    target = 1 / np.sqrt(np.pi)
    expected = np.array([t_re + 1j * t_im
                         for t_re in (-target, target)
                         for t_im in (-target, target)])
    matched = sorted(levels, key=lambda z: (round(z.real, 1), round(z.imag, 1)))
    expected = sorted(expected, key=lambda z: (round(z.real, 1), round(z.imag, 1)))
    for got, want in zip(matched, expected):
        assert abs(got.real - want.real) < 0.02
        assert abs(got.imag - want.imag) < 0.02
    power = np.sum(res.frequencies[0] * np.abs(levels) ** 2)
    assert power < 1.0  # 2/pi, constraint inactive


def test_exact_cover_reaches_zero_distortion():
    points = np.array([0.4 + 0.2j, -0.6 - 0.1j])
    symbols = np.tile(points, 50)
    ens = passthrough_ensemble(symbols)
    res = design_ptpq(ens, identity_rule, DesignConfig(rate_bits=(1,)))
    assert res.traces[0][-1] < 1e-25
    assert set(np.round(res.codebooks[0].levels, 12)) == set(np.round(points, 12))


def test_binding_power_constraint_hits_sphere():
    symbols = 3.0 * sample_symbols(1, 20_000, substream(53, "big"))
    ens = passthrough_ensemble(symbols)
    res = design_ptpq(ens, identity_rule, DesignConfig(rate_bits=(2,)))
    levels = res.codebooks[0].levels
    power = np.sum(res.frequencies[0] * np.abs(levels) ** 2)
    assert power <= 1.0 + 1e-9
    assert power >= 1.0 - 1e-6  # binding


def test_ptpq_trace_monotone():
    ens = one_ring_ensemble(2, 1, 10, 400, "mono")
    res = design_ptpq(ens, matched_rule(0.5), DesignConfig(rate_bits=(3, 3)))
    for trace in res.traces:
        assert np.all(np.diff(trace) <= 1e-9)


# ---------------------------------------------------------------------------
# joint design


def test_mq_trace_monotone_and_power_feasible():
    ens = one_ring_ensemble(2, 1, 8, 300, "mqmono")
    res = design_mq(ens, matched_rule(0.5), None, DesignConfig(rate_bits=(2, 2)))
    assert np.all(np.diff(res.trace) <= 1e-9)
    for cb, f in zip(res.codebook.per_ru, res.frequencies):
        assert np.sum(f * np.abs(cb.levels) ** 2) <= 1.0 + 1e-9
    assert res.converged


def test_mq_beats_ptpq_on_projected_metric():
    ens = one_ring_ensemble(2, 1, 10, 300, "cmp")
    rule = matched_rule(0.5)
    cfg = DesignConfig(rate_bits=(2, 2))
    mq_res = design_mq(ens, rule, None, cfg)
    pq_res = design_ptpq(ens, rule, cfg)

    pq_codebook = ProductCodebook(per_ru=pq_res.codebooks)

    def mean_metric(codebook, use_mq):
        from cranmq.quantize import mq_map_batch
        total = 0.0
        for m in range(ens.num_channels):
            h = ens.channels[m]
            w = rule(h)
            if use_mq:
                _, metric = mq_map_batch(ens.symbols, w, h, codebook)
                total += metric.sum()
            else:
                x = ens.symbols @ w.T
                digits = np.stack([ptpq_map_batch(x[:, i], cb)
                                   for i, cb in enumerate(codebook.per_ru)], axis=1)
                xhat = codebook.levels_at(digits)
                for n in range(ens.num_symbols):
                    total += weighted_projection_distortion(
                        h, w, ens.symbols[n], xhat[n])
        return total / (ens.num_channels * ens.num_symbols)

    assert mean_metric(mq_res.codebook, True) <= mean_metric(pq_codebook, False)


def test_mq_single_ru_matches_scalar_design_fixed_points():
    symbols = sample_symbols(1, 5000, substream(54, "m1"))
    ens = TrainingEnsemble(channels=np.full((1, 1, 1), 0.7 + 0.4j),
                           symbols=symbols)

    def rule(channel):
        return np.ones_like(channel)

    cfg = DesignConfig(rate_bits=(2,), epsilon=1e-6, max_outer_iters=200)
    scalar = design_ptpq(ens, rule, cfg)
    joint = design_mq(ens, rule, None, cfg)
    a = np.sort_complex(scalar.codebooks[0].levels)
    b = np.sort_complex(joint.codebook.per_ru[0].levels)
    assert np.max(np.abs(a - b)) < 5e-3


def test_mq_fixed_point_consistency():
    ens = one_ring_ensemble(2, 1, 6, 250, "fix")
    rule = matched_rule(0.5)
    cfg = DesignConfig(rate_bits=(2, 2), epsilon=1e-3)
    first = design_mq(ens, rule, None, cfg)
    again = design_mq(ens, rule, None, cfg, init_codebook=first.codebook)
    assert len(again.trace) <= 2
    assert again.converged


def test_partition_stats_counts():
    ens = one_ring_ensemble(2, 1, 4, 100, "stats")
    rule = matched_rule(0.5)
    res = design_mq(ens, rule, None, DesignConfig(rate_bits=(1, 2)))
    stats = partition_stats(ens, rule, res.codebook)
    assert sum(stats.joint_counts.values()) == stats.total == 400
    # marginals follow by summing joint counts over the other RU
    sizes = res.codebook.sizes
    marg0 = np.zeros(sizes[0])
    for flat, c in stats.joint_counts.items():
        j0, _ = np.unravel_index(flat, sizes)
        marg0[j0] += c
    assert np.allclose(marg0 / stats.total, stats.marginals[0])


# ---------------------------------------------------------------------------
# entropy-constrained designs


def test_ec_ptpq_zero_lambda_reduces_to_plain():
    symbols = sample_symbols(1, 8000, substream(55, "ec0"))
    ens = passthrough_ensemble(symbols)
    cfg_plain = DesignConfig(rate_bits=(2,))
    cfg_ec = DesignConfig(rate_bits=(2,), expanded_rate_bits=(2,),
                          lambda_bounds=(0.0, 0.0))
    plain = design_ptpq(ens, identity_rule, cfg_plain)
    ec = design_ptpq_entropy_constrained(ens, identity_rule, cfg_ec)
    assert np.allclose(np.sort_complex(plain.codebooks[0].levels),
                       np.sort_complex(ec.codebooks[0].levels))


def test_ec_ptpq_hits_entropy_window():
    symbols = sample_symbols(1, 20_000, substream(56, "ecw"))
    ens = passthrough_ensemble(symbols)
    cfg = DesignConfig(rate_bits=(2,), expanded_rate_bits=(3,), tau=0.05,
                       lambda_bounds=(0.0, 1.5))
    res = design_ptpq_entropy_constrained(ens, identity_rule, cfg)
    assert res.in_window
    assert 2 - 0.05 <= res.entropies[0] <= 2.0
    # penalized-objective traces are non-increasing
    for trace in res.traces:
        assert np.all(np.diff(trace) <= 1e-9)


def test_ec_mq_zero_lambda_reduces_to_plain():
    ens = one_ring_ensemble(2, 1, 6, 250, "ecmq0")
    rule = matched_rule(0.5)
    cfg_p = DesignConfig(rate_bits=(2, 2))
    cfg_e = DesignConfig(rate_bits=(2, 2), expanded_rate_bits=(2, 2),
                         lambda_bounds=(0.0, 0.0))
    plain = design_mq(ens, rule, None, cfg_p)
    ec = design_mq_entropy_constrained(ens, rule, None, cfg_e)
    for a, b in zip(plain.codebook.per_ru, ec.codebook.per_ru):
        assert np.allclose(a.levels, b.levels)


def test_ec_mq_hits_entropy_window():
    ens = one_ring_ensemble(2, 1, 8, 400, "ecmqw")
    cfg = DesignConfig(rate_bits=(2, 2), expanded_rate_bits=(3, 3), tau=0.05)
    res = design_mq_entropy_constrained(ens, matched_rule(0.5), None, cfg)
    assert res.in_window
    for h in res.entropies:
        assert 2 - 0.05 <= h <= 2.0
    for trace in res.traces:
        assert np.all(np.diff(trace) <= 1e-9)
