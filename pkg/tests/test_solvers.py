"""Solver tests: KKT oracles for the power-constrained quadratic, grid
oracles for the PSD ascent, and the PSD projection / bisection utilities."""

import numpy as np
import pytest

from cranmq.rng import substream
from cranmq.solvers import (
    InfeasibleError,
    PsdConstrainedProblem,
    QuadraticProgram,
    bisect,
    psd_project,
    solve_power_constrained_quadratic,
    solve_psd_constrained_concave_max,
)


# ---------------------------------------------------------------------------
# bisect


def test_bisect_finds_threshold():
    res = bisect(lambda x: x >= 0.3, 0.0, 1.0, tol=1e-6)
    assert abs(res.value - 0.3) <= 1e-6
    assert not res.flagged


def test_bisect_left_endpoint_already_satisfied():
    res = bisect(lambda x: True, 0.25, 1.0)
    assert res.value == 0.25 and not res.flagged


def test_bisect_constant_false_flagged():
    res = bisect(lambda x: False, 0.0, 1.0)
    assert res.value == 1.0 and res.flagged


def test_bisect_iteration_cap_flagged():
    res = bisect(lambda x: x >= 0.3, 0.0, 1.0, tol=1e-300, max_iters=5)
    assert res.flagged and res.reason == "iteration cap reached"


# ---------------------------------------------------------------------------
# psd_project


def test_psd_project_keeps_psd_input():
    rng = substream(41, "psd")
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    v = a @ a.conj().T
    assert np.max(np.abs(psd_project(v) - v)) < 1e-12


def test_psd_project_clips_negative_eigenvalue():
    out = psd_project(np.diag([1.0, -1.0]).astype(complex))
    assert np.allclose(out, np.diag([1.0, 0.0]))


def test_psd_project_frobenius_nearest_among_random_candidates():
    rng = substream(42, "near")
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    herm = (a + a.conj().T) / 2
    proj = psd_project(herm)
    assert np.min(np.linalg.eigvalsh(proj)) >= -1e-12
    base = np.linalg.norm(proj - herm)
    for _ in range(1000):
        b = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        cand = b @ b.conj().T * rng.uniform(0, 2)
        assert np.linalg.norm(cand - herm) >= base - 1e-12


def test_psd_project_rejects_non_hermitian():
    with pytest.raises(ValueError):
        psd_project(np.array([[0.0, 1.0], [0.0, 0.0]]))


# ---------------------------------------------------------------------------
# power-constrained quadratic


def centroid_qp(counts, centroids, total):
    """Per-RU Lloyd update: A = diag(counts), b = counts * centroids."""
    counts = np.asarray(counts, dtype=float)
    a = np.diag(counts).astype(complex)
    b = counts * np.asarray(centroids)
    return QuadraticProgram(hessian=a, linear=b,
                            groups=[np.arange(counts.size)],
                            weights=[counts / total], bound=1.0)


def test_unconstrained_minimizer_returns_exact_centroids():
    centroids = np.array([0.1 + 0.2j, -0.3 + 0.1j, 0.2 - 0.2j])
    qp = centroid_qp([10, 20, 30], centroids, 60)
    x, info = solve_power_constrained_quadratic(qp)
    assert np.max(np.abs(x - centroids)) < 1e-12
    assert info.multipliers[0] == 0.0


def test_binding_constraint_scales_onto_power_sphere():
    # centroids with usage power 4 > 1: the scalar KKT solution scales all
    # centroids by 1/(1+mu) onto the sphere; check against a fine
    # multiplier-grid oracle
    counts = np.array([50.0, 50.0])
    centroids = np.array([2.0 + 0j, -2.0 + 0j])
    qp = centroid_qp(counts, centroids, 100)
    x, info = solve_power_constrained_quadratic(qp)
    p = np.sum(0.5 * np.abs(x) ** 2)
    assert abs(p - 1.0) < 1e-8

    # closed form: x = c / sqrt(sum p_j |c_j|^2)
    expected = centroids / np.sqrt(np.sum(0.5 * np.abs(centroids) ** 2))
    assert np.max(np.abs(x - expected)) < 1e-6

    # multiplier-grid oracle: no feasible grid point does better
    def objective(v):
        return float(np.real(v.conj() @ qp.hessian @ v - 2 * np.real(qp.linear.conj() @ v)))

    best = objective(x)
    for mu in np.linspace(0, 500, 20001):
        xv = qp.linear / (counts + mu * counts / 100.0)
        if np.sum(0.5 * np.abs(xv) ** 2) <= 1.0 + 1e-12:
            assert objective(xv) >= best - 1e-6


def test_qp_beats_random_feasible_points():
    rng = substream(43, "qp")
    t = 8
    m = rng.standard_normal((t, t)) + 1j * rng.standard_normal((t, t))
    a = m @ m.conj().T + 0.5 * np.eye(t)
    b = rng.standard_normal(t) + 1j * rng.standard_normal(t)
    groups = [np.arange(0, 4), np.arange(4, 8)]
    weights = [np.full(4, 0.25), np.full(4, 0.25)]
    qp = QuadraticProgram(hessian=a, linear=b, groups=groups, weights=weights)
    x, info = solve_power_constrained_quadratic(qp)
    assert info.max_violation <= 1e-8
    assert info.kkt_residual <= 1e-6

    def objective(v):
        return float(np.real(v.conj() @ a @ v) - 2 * np.real(b.conj() @ v))

    base = objective(x)
    for _ in range(1000):
        cand = rng.standard_normal(t) + 1j * rng.standard_normal(t)
        for g, w in zip(groups, weights):
            p = np.sum(w * np.abs(cand[g]) ** 2)
            if p > 1.0:
                cand[g] /= np.sqrt(p)
        assert objective(cand) >= base - 1e-9


def test_qp_singular_hessian_gets_ridge():
    # dead level: zero row/column in A
    a = np.diag([1.0, 0.0]).astype(complex)
    b = np.array([1.0, 0.0], dtype=complex)
    qp = QuadraticProgram(hessian=a, linear=b, groups=[np.array([0, 1])],
                          weights=[np.array([1.0, 0.0])])
    x, info = solve_power_constrained_quadratic(qp)
    assert info.ridge_used
    assert abs(x[0] - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# PSD-constrained concave maximization


def scalar_rate_problem(power, gain, bound):
    """N = 1, M = 1: maximize log2(1 + P*V*|h|^2), optimum V = bound."""

    def value(v):
        return np.log2(1.0 + power * max(v[0, 0, 0].real, 0.0) * gain)

    def gradient(v):
        g = power * gain / (np.log(2.0) * (1.0 + power * v[0, 0, 0].real * gain))
        return np.array([[[g]]], dtype=complex)

    return PsdConstrainedProblem(value=value, gradient=gradient, dim=1,
                                 num_matrices=1, omega_diag=np.zeros(1),
                                 bounds=np.array([bound]))


def test_scalar_closed_form_maximizer():
    power, gain, bound = 10.0, 1.7, 0.6
    prob = scalar_rate_problem(power, gain, bound)
    v, info = solve_psd_constrained_concave_max(prob, iters=500, tol=1e-10)
    assert abs(v[0, 0, 0].real - bound) < 1e-6
    assert abs(info.objective - np.log2(1 + power * bound * gain)) < 1e-6


def test_ascent_objective_nondecreasing_from_feasible_start():
    power, gain, bound = 4.0, 0.9, 1.0
    prob = scalar_rate_problem(power, gain, bound)
    v0 = np.array([[[0.1]]], dtype=complex)
    f0 = prob.value(v0)
    v, info = solve_psd_constrained_concave_max(prob, v0=v0, iters=50)
    assert info.objective >= f0


def test_iterates_feasible_and_psd():
    rng = substream(44, "pgd")
    m = 3
    h = rng.standard_normal((m, 2)) + 1j * rng.standard_normal((m, 2))
    hh = [np.outer(h[:, k], h[:, k].conj()) for k in range(2)]

    def value(v):
        s = v.sum(axis=0)
        return sum(np.log2(1.0 + np.real(np.trace(hh[k] @ s))) for k in range(2))

    def gradient(v):
        s = v.sum(axis=0)
        g = sum(hh[k] / (np.log(2.0) * (1.0 + np.real(np.trace(hh[k] @ s))))
                for k in range(2))
        return np.array([g, g])

    prob = PsdConstrainedProblem(value=value, gradient=gradient, dim=m,
                                 num_matrices=2, omega_diag=np.full(m, 0.1),
                                 bounds=np.ones(m))
    v, info = solve_psd_constrained_concave_max(prob, iters=200)
    loads = sum(np.diag(vk).real for vk in v)
    assert np.all(loads <= 1.0 - 0.1 + 1e-9)
    for vk in v:
        assert np.min(np.linalg.eigvalsh((vk + vk.conj().T) / 2)) >= -1e-10


def test_two_antenna_matches_grid_oracle():
    # 2-antenna slice including off-diagonal correlation; the projected
    # ascent must reach the best grid point within 1e-3 objective
    h = np.array([[1.0 + 0j], [0.5 + 0j]])
    hh = np.outer(h[:, 0], h[:, 0].conj())
    power = 5.0

    def value(v):
        return np.log2(1.0 + power * np.real(np.trace(hh @ v[0])))

    def gradient(v):
        return (power * hh / (np.log(2.0)
                              * (1.0 + power * np.real(np.trace(hh @ v[0])))))[None]

    caps = np.array([0.8, 0.5])
    prob = PsdConstrainedProblem(value=value, gradient=gradient, dim=2,
                                 num_matrices=1, omega_diag=np.zeros(2),
                                 bounds=caps)
    v, info = solve_psd_constrained_concave_max(prob, iters=400, tol=1e-10)

    best_grid = -np.inf
    for v1 in np.linspace(0, caps[0], 81):
        for v2 in np.linspace(0, caps[1], 81):
            for rho in np.linspace(-1, 1, 41):
                off = rho * np.sqrt(v1 * v2)
                cand = np.array([[[v1, off], [off, v2]]], dtype=complex)
                if np.min(np.linalg.eigvalsh(cand[0])) < -1e-12:
                    continue
                best_grid = max(best_grid, value(cand))
    assert info.objective >= best_grid - 1e-3


def test_infeasible_noise_loads_raise():
    prob = scalar_rate_problem(1.0, 1.0, bound=0.5)
    prob.omega_diag = np.array([0.7])
    with pytest.raises(InfeasibleError):
        solve_psd_constrained_concave_max(prob)
