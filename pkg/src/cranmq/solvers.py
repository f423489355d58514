"""Small constrained solvers used inside the design loops.

Problem sizes here are tiny (matrices of a few antennas, level vectors of
at most a few hundred entries), so first-order methods plus explicit KKT
multiplier searches are enough and keep the package dependency-free:

* a power-constrained quadratic solver for the codebook updates, with one
  usage-weighted sphere constraint per RU, solved by cyclic bisection over
  the non-negative multipliers;
* a projected-gradient ascent for maximizing a concave functional of PSD
  matrices under per-antenna trace caps (the precoder surrogate step);
* Frobenius-nearest PSD projection and a generic monotone bisection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from numba import njit

__all__ = [
    "InfeasibleError",
    "QuadraticProgram",
    "QpInfo",
    "solve_power_constrained_quadratic",
    "PsdConstrainedProblem",
    "PgdInfo",
    "solve_psd_constrained_concave_max",
    "psd_project",
    "BisectResult",
    "bisect",
]

BISECTION_CAP = 60


class InfeasibleError(ValueError):
    """Constraint set is empty."""


# ---------------------------------------------------------------------------
# bisection


class BisectResult(NamedTuple):
    value: float
    flagged: bool
    reason: str | None


def bisect(predicate: Callable[[float], bool], lo: float, hi: float,
           tol: float = 1e-8, max_iters: int = BISECTION_CAP) -> BisectResult:
    """Smallest x in [lo, hi] with predicate(x) true, for monotone predicates.

    The predicate must be False-then-True as x increases. Returns the left
    endpoint immediately if it already satisfies the predicate; a constant-
    False predicate returns the right endpoint flagged.
    """
    if hi < lo:
        raise ValueError("empty interval")
    if predicate(lo):
        return BisectResult(lo, False, None)
    if not predicate(hi):
        return BisectResult(hi, True, "predicate false on whole interval")
    it = 0
    while hi - lo > tol:
        if it >= max_iters:
            return BisectResult(hi, True, "iteration cap reached")
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    return BisectResult(hi, False, None)


# ---------------------------------------------------------------------------
# PSD projection


def psd_project(matrix: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: symmetrize, clip negative eigenvalues."""
    matrix = np.asarray(matrix, dtype=np.complex128)
    herm_err = np.max(np.abs(matrix - matrix.conj().T)) if matrix.size else 0.0
    scale = max(1.0, float(np.max(np.abs(matrix)))) if matrix.size else 1.0
    if herm_err > 1e-9 * scale:
        raise ValueError(f"input not Hermitian within tolerance (error {herm_err:g})")
    sym = (matrix + matrix.conj().T) / 2.0
    w, u = np.linalg.eigh(sym)
    if w.size and w[0] >= 0:
        return sym
    w = np.clip(w, 0.0, None)
    return (u * w[None, :]) @ u.conj().T


# ---------------------------------------------------------------------------
# power-constrained quadratic codebook update


@dataclass
class QuadraticProgram:
    """min x^H A x - 2 Re(b^H x) s.t. sum_j w_ij |x_j|^2 <= bound per group.

    ``groups`` lists each RU's variable indices; ``weights`` the matching
    usage frequencies. Zero-weight entries are unconstrained dead levels.
    """

    hessian: np.ndarray
    linear: np.ndarray
    groups: list
    weights: list
    bound: float = 1.0

    def __post_init__(self):
        self.hessian = np.asarray(self.hessian, dtype=np.complex128)
        self.linear = np.asarray(self.linear, dtype=np.complex128).ravel()
        t = self.linear.size
        if self.hessian.shape != (t, t):
            raise ValueError("hessian/linear size mismatch")
        scale = max(1.0, float(np.max(np.abs(self.hessian))) if t else 1.0)
        if t and np.max(np.abs(self.hessian - self.hessian.conj().T)) > 1e-9 * scale:
            raise ValueError("hessian must be Hermitian")
        self.groups = [np.asarray(g, dtype=np.intp).ravel() for g in self.groups]
        self.weights = [np.asarray(w, dtype=np.float64).ravel() for w in self.weights]
        for g, w in zip(self.groups, self.weights):
            if g.size != w.size:
                raise ValueError("group/weight size mismatch")
            if np.any(w < 0):
                raise ValueError("group weights must be non-negative")


@dataclass
class QpInfo:
    multipliers: np.ndarray
    kkt_residual: float
    max_violation: float
    complementarity: float
    passes: int
    ridge_used: bool = False


def _qp_diag(qp: QuadraticProgram) -> list:
    diags = []
    t = qp.linear.size
    for g, w in zip(qp.groups, qp.weights):
        d = np.zeros(t)
        d[g] = w
        diags.append(d)
    return diags


def solve_power_constrained_quadratic(qp: QuadraticProgram, tol: float = 1e-8,
                                      max_passes: int = 60):
    """KKT-certified solution of the group-power-constrained quadratic.

    Stationarity (A + sum_i mu_i D_i) x = b is kept exact by construction;
    the non-negative multipliers are found by cyclic coordinate bisection
    until feasibility and complementary slackness hold within ``tol``.
    Returns (x, QpInfo).
    """
    a = qp.hessian
    b = qp.linear
    t = b.size
    diags = _qp_diag(qp)
    n_grp = len(diags)
    mu = np.zeros(n_grp)
    ridge_used = False

    def solve_sys(mu_vec):
        nonlocal ridge_used
        s = a + np.diag(sum(m * d for m, d in zip(mu_vec, diags))) \
            if n_grp else a.copy()
        try:
            x = np.linalg.solve(s, b)
            if np.isfinite(x).all():
                resid = np.linalg.norm(s @ x - b)
                if resid <= 1e-6 * (np.linalg.norm(b) + 1.0):
                    return x
        except np.linalg.LinAlgError:
            pass
        ridge_used = True
        x = np.linalg.solve(s + 1e-12 * np.eye(t), b)
        return x

    def group_power(x, i):
        g, w = qp.groups[i], qp.weights[i]
        return float(np.sum(w * np.abs(x[g]) ** 2))

    x = solve_sys(mu)
    passes = 0
    for passes in range(1, max_passes + 1):
        changed = False
        for i in range(n_grp):
            p0 = group_power(x, i)
            if mu[i] == 0.0 and p0 <= qp.bound + tol:
                continue

            def feasible(m):
                trial = mu.copy()
                trial[i] = m
                return group_power(solve_sys(trial), i) <= qp.bound

            if feasible(0.0):
                new_mu = 0.0
            else:
                hi = max(1.0, 2.0 * mu[i])
                while not feasible(hi):
                    hi *= 4.0
                    if hi > 1e18:
                        raise RuntimeError("constraint cannot be satisfied")
                new_mu = bisect(feasible, 0.0, hi, tol=1e-12 * max(1.0, hi),
                                max_iters=80).value
            if new_mu != mu[i]:
                mu[i] = new_mu
                x = solve_sys(mu)
                changed = True
        max_viol = max((max(0.0, group_power(x, i) - qp.bound)
                        for i in range(n_grp)), default=0.0)
        comp = max((mu[i] * abs(group_power(x, i) - qp.bound)
                    for i in range(n_grp)), default=0.0)
        if max_viol <= tol and comp <= max(10 * tol, 1e-6):
            break
        if not changed:
            break
    s = a + (np.diag(sum(m * d for m, d in zip(mu, diags))) if n_grp else 0.0)
    kkt = float(np.linalg.norm(s @ x - b) / (np.linalg.norm(b) + 1.0))
    info = QpInfo(
        multipliers=mu,
        kkt_residual=kkt,
        max_violation=max((max(0.0, group_power(x, i) - qp.bound)
                           for i in range(n_grp)), default=0.0),
        complementarity=max((mu[i] * abs(group_power(x, i) - qp.bound)
                             for i in range(n_grp)), default=0.0),
        passes=passes,
        ridge_used=ridge_used,
    )
    return x, info


# ---------------------------------------------------------------------------
# PSD-constrained concave maximization


@dataclass
class PsdConstrainedProblem:
    """max objective(V) s.t. V_k PSD, sum_k V_k[i,i] + omega[i] <= bound_i.

    ``value`` and ``gradient`` take a stacked (K, M, M) complex array; the
    gradient must return Hermitian matrices of the same shape.
    """

    value: Callable
    gradient: Callable
    dim: int
    num_matrices: int
    omega_diag: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        self.omega_diag = np.asarray(self.omega_diag, dtype=np.float64).ravel()
        self.bounds = np.broadcast_to(
            np.asarray(self.bounds, dtype=np.float64), (self.dim,)).copy()
        if self.omega_diag.size != self.dim:
            raise ValueError("omega diagonal length must equal dim")

    @property
    def caps(self) -> np.ndarray:
        return self.bounds - self.omega_diag


@dataclass
class PgdInfo:
    iterations: int
    objective: float
    step_norm: float
    converged: bool


@njit(cache=True)
def _psd_clip_nb(m):
    """Eigenvalue clipping of one Hermitian matrix (in: any square complex)."""
    sym = (m + np.conj(m.T)) / 2.0
    w, u = np.linalg.eigh(sym)
    if w[0] >= 0.0:
        return sym
    w = np.maximum(w, 0.0)
    return (u * w) @ np.conj(u.T)


@njit(cache=True)
def _project_feasible_nb(v, caps, sweeps):
    """Dykstra alternating projection onto {PSD} ∩ {per-antenna caps}.

    The per-antenna halfspaces have orthogonal normals, so projecting onto
    their intersection (shift every matrix's (i, i) entry by the average
    excess) is exact. Finishes with a PSD snap plus a per-antenna
    congruence rescale, so the returned stack is always exactly feasible.
    """
    n_k, n_m = v.shape[0], v.shape[1]
    x = v.copy()
    x_prev = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    shift = np.zeros(n_m)
    for _ in range(sweeps):
        x_prev[:] = x
        for k in range(n_k):
            t = x[k] + p[k]
            y = _psd_clip_nb(t)
            p[k] = t - y
            x[k] = y + q[k]  # x temporarily holds z
        loads = np.zeros(n_m)
        for k in range(n_k):
            for i in range(n_m):
                loads[i] += x[k, i, i].real
        for i in range(n_m):
            ex = loads[i] - caps[i]
            shift[i] = ex / n_k if ex > 0.0 else 0.0
        for k in range(n_k):
            q[k][:] = 0.0
            for i in range(n_m):
                x[k, i, i] = x[k, i, i] - shift[i]
                q[k, i, i] = shift[i]
        if np.max(np.abs(x - x_prev)) < 1e-12 and np.max(shift) < 1e-12:
            break
    for k in range(n_k):
        x[k] = _psd_clip_nb(x[k])
    loads = np.zeros(n_m)
    for k in range(n_k):
        for i in range(n_m):
            loads[i] += x[k, i, i].real
    scale = np.ones(n_m)
    for i in range(n_m):
        if loads[i] > caps[i]:
            c = caps[i] if caps[i] > 0.0 else 0.0
            scale[i] = np.sqrt(c / loads[i])
    for k in range(n_k):
        for i in range(n_m):
            for j in range(n_m):
                x[k, i, j] *= scale[i] * scale[j]
    return x


def _project_feasible(v: np.ndarray, caps: np.ndarray,
                      sweeps: int = 24) -> np.ndarray:
    x = np.ascontiguousarray(v, dtype=np.complex128)
    return _project_feasible_nb(x, np.ascontiguousarray(caps, dtype=np.float64),
                                sweeps)


def solve_psd_constrained_concave_max(problem: PsdConstrainedProblem,
                                      v0=None, iters: int = 300,
                                      tol: float = 1e-7, step0: float = 1.0):
    """Projected-gradient ascent with exact feasible-set projection.

    Each step projects onto the intersection of the PSD cones and the
    per-antenna trace caps (Dykstra alternating projections), so iterates
    stay feasible and, the problem being concave, the ascent reaches the
    global maximum. The objective is non-decreasing across accepted steps
    (backtracking line search). Returns (V stack (K, M, M), PgdInfo).
    """
    caps = problem.caps
    if np.any(caps < -1e-12):
        raise InfeasibleError("noise loads exceed the per-antenna bounds")
    caps = np.clip(caps, 0.0, None)
    shape = (problem.num_matrices, problem.dim, problem.dim)
    if v0 is None:
        v = np.zeros(shape, dtype=np.complex128)
    else:
        v = np.asarray(v0, dtype=np.complex128).reshape(shape).copy()
        v = _project_feasible(v, caps)

    f0 = float(problem.value(v))
    step = step0
    step_norm = np.inf
    trial = v
    it = 0
    for it in range(1, iters + 1):
        grad = np.asarray(problem.gradient(v))
        accepted = False
        t = step
        for _ in range(60):
            trial = _project_feasible(v + t * grad, caps)
            f1 = float(problem.value(trial))
            if np.isfinite(f1) and f1 >= f0:
                accepted = True
                break
            t *= 0.5
            if t < 1e-16:
                break
        if not accepted:
            step_norm = 0.0
            break
        move = float(np.linalg.norm(trial - v))
        step_norm = move / max(t, 1e-300)
        improved = f1 - f0
        v, f0 = trial, f1
        step = min(t * 2.0, 1e6)
        if step_norm <= tol or (0 <= improved <= 1e-14 * max(1.0, abs(f0))
                                and move <= 1e-12):
            break
    return v, PgdInfo(iterations=it, objective=f0, step_norm=float(step_norm),
                      converged=bool(step_norm <= tol))
