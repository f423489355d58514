"""Downlink precoder construction and the joint precoding/quantization loop.

The sum-rate precoder maximizes sum_k log2((1 + P h_k^H (W W^H + O) h_k) /
(1 + P h_k^H (sum_{l != k} w_l w_l^H + O) h_k)) under per-antenna power
caps, where O is the quantization-noise covariance. After the change of
variables V_k = w_k w_k^H (rank constraint dropped), each iteration
maximizes the concave surrogate obtained by linearizing the subtracted
log-det around the current iterate; the tangent overestimates the concave
term, so the surrogate minorizes the true rate and each step cannot
decrease it. Beamformers are recovered by rank-1 reduction.

The joint design loop alternates per-channel precoder optimization, the
joint codebook update, and re-estimation of the quantization noise
covariance from training symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import TrainingEnsemble
from .codebooks import ProductCodebook, ScalarCodebook, fixed_product_codebook
from .design import (
    DesignConfig,
    _marginal_counts,
    _mq_codebook_update,
    _mq_partition,
    _scalar_lloyd,
    _snap_power,
    precode_ensemble,
)
from .quantize import mq_map_batch, ptpq_map_batch
from .solvers import (
    InfeasibleError,
    PsdConstrainedProblem,
    solve_psd_constrained_concave_max,
)

__all__ = [
    "DcConfig",
    "DcResult",
    "JointDesignResult",
    "matched_beamformer",
    "achievable_rate",
    "sum_rate",
    "logdet_linearization",
    "dc_precoder",
    "rank1_reduce",
    "estimate_quant_noise_cov",
    "joint_design",
]

_LN2 = np.log(2.0)


@dataclass
class DcConfig:
    """Transmit scale, per-antenna bound, and iteration budget for the
    difference-of-convex precoder."""

    power: float
    gamma: float = 1.0
    r_max: int = 5
    pg_iters: int = 200
    pg_tol: float = 1e-7

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("power must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")


@dataclass
class DcResult:
    precoder: np.ndarray
    covariances: np.ndarray
    surrogate_values: np.ndarray
    true_rates: np.ndarray
    used_fallback: bool = False


def matched_beamformer(channel: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """Columns proportional to the channel vectors, jointly scaled so the
    busiest antenna meets the per-antenna power cap with equality."""
    channel = np.asarray(channel, dtype=np.complex128)
    row_power = np.sum(np.abs(channel) ** 2, axis=1)
    peak = float(np.max(row_power))
    if peak <= 0.0:
        raise ValueError("all-zero channel")
    return channel * np.sqrt(gamma / peak)


def achievable_rate(channel, precoder, omega, power: float, user: int) -> float:
    """Rate of one user under the Gaussian quantization-noise model."""
    channel = np.asarray(channel, dtype=np.complex128)
    precoder = np.asarray(precoder, dtype=np.complex128)
    m_ru = channel.shape[0]
    omega = np.zeros((m_ru, m_ru)) if omega is None \
        else np.asarray(omega, dtype=np.complex128)
    h = channel[:, user]
    full = precoder @ precoder.conj().T + omega
    interf = full - np.outer(precoder[:, user], precoder[:, user].conj())
    a = float(np.real(h.conj() @ full @ h))
    b = float(np.real(h.conj() @ interf @ h))
    return float(np.log2(1.0 + power * a) - np.log2(1.0 + power * b))


def sum_rate(channel, precoder, omega, power: float, weights=None) -> float:
    """Weighted sum of per-user achievable rates."""
    n_ue = np.asarray(channel).shape[1]
    weights = np.ones(n_ue) if weights is None \
        else np.asarray(weights, dtype=np.float64).ravel()
    return float(sum(weights[k] * achievable_rate(channel, precoder, omega,
                                                  power, k)
                     for k in range(n_ue)))


def logdet_linearization(a: np.ndarray, b: np.ndarray) -> float:
    """First-order expansion of log2 det at A, evaluated toward B.

    f(A, B) = log2 det A + tr(A^{-1}(B - A)) / ln 2 >= log2 det B for all
    PSD B (concavity), with equality at B = A. Near-singular A is ridge
    regularized.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.complex128))
    b = np.atleast_2d(np.asarray(b, dtype=np.complex128))
    sign, logdet = np.linalg.slogdet(a)
    if sign.real <= 0 or not np.isfinite(logdet):
        a = a + 1e-12 * np.eye(a.shape[0])
        sign, logdet = np.linalg.slogdet(a)
    return float(logdet / _LN2
                 + np.real(np.trace(np.linalg.solve(a, b - a))) / _LN2)


def rank1_reduce(v: np.ndarray) -> np.ndarray:
    """Principal component sqrt(lambda_max) * u of a PSD matrix.

    The phase is fixed by making the first entry with non-negligible
    magnitude real-positive; a zero matrix gives a zero vector.
    """
    v = np.asarray(v, dtype=np.complex128)
    sym = (v + v.conj().T) / 2.0
    w, u = np.linalg.eigh(sym)
    lead = float(w[-1])
    if lead <= 0.0:
        return np.zeros(v.shape[0], dtype=np.complex128)
    vec = np.sqrt(lead) * u[:, -1]
    nz = np.flatnonzero(np.abs(vec) > 1e-12 * np.linalg.norm(vec))
    if nz.size:
        vec = vec * np.exp(-1j * np.angle(vec[nz[0]]))
    return vec


def _surrogate_problem(channel, omega, config: DcConfig, weights,
                       expansion: np.ndarray) -> PsdConstrainedProblem:
    """Concave minorant of the weighted sum rate around ``expansion``."""
    m_ru, n_ue = channel.shape
    power = config.power
    hh = np.stack([np.outer(channel[:, k], channel[:, k].conj())
                   for k in range(n_ue)])
    omega_q = np.array([float(np.real(channel[:, k].conj() @ omega
                                      @ channel[:, k]))
                        for k in range(n_ue)])
    s_exp = expansion.sum(axis=0)
    denom = np.empty(n_ue)
    for k in range(n_ue):
        q_exp = float(np.real(np.trace(hh[k] @ (s_exp - expansion[k])))) \
            + omega_q[k]
        denom[k] = 1.0 + power * q_exp

    def value(v):
        s = v.sum(axis=0)
        total = 0.0
        for k in range(n_ue):
            t_k = float(np.real(np.trace(hh[k] @ s))) + omega_q[k]
            q_k = float(np.real(np.trace(hh[k] @ (s - v[k])))) + omega_q[k]
            lin = np.log2(denom[k]) \
                + power * (q_k - (denom[k] - 1.0) / power) / (_LN2 * denom[k])
            total += weights[k] * (np.log2(1.0 + power * t_k) - lin)
        return total

    def gradient(v):
        s = v.sum(axis=0)
        common = np.zeros((m_ru, m_ru), dtype=np.complex128)
        for k in range(n_ue):
            t_k = float(np.real(np.trace(hh[k] @ s))) + omega_q[k]
            common += weights[k] * power * hh[k] / (_LN2 * (1.0 + power * t_k))
        grads = np.empty((n_ue, m_ru, m_ru), dtype=np.complex128)
        for l in range(n_ue):
            sub = np.zeros((m_ru, m_ru), dtype=np.complex128)
            for k in range(n_ue):
                if k != l:
                    sub += weights[k] * power * hh[k] / (_LN2 * denom[k])
            grads[l] = common - sub
        return grads

    return PsdConstrainedProblem(
        value=value, gradient=gradient, dim=m_ru, num_matrices=n_ue,
        omega_diag=np.real(np.diag(omega)).astype(float),
        bounds=np.full(m_ru, config.gamma))


def dc_precoder(channel, omega, config: DcConfig, weights=None) -> DcResult:
    """Difference-of-convex sum-rate precoder under per-antenna caps.

    Runs r_max surrogate maximizations from a matched-beamformer start,
    each warm-started at the current iterate so the attained surrogate and
    true objective sequences are non-decreasing, then reduces the user
    covariances to beamformers. If the rank-1 reduction loses more rate
    than the matched-beamformer start achieves, the start is returned.
    """
    channel = np.asarray(channel, dtype=np.complex128)
    m_ru, n_ue = channel.shape
    omega = np.zeros((m_ru, m_ru), dtype=np.complex128) if omega is None \
        else np.asarray(omega, dtype=np.complex128)
    weights = np.ones(n_ue) if weights is None \
        else np.asarray(weights, dtype=np.float64).ravel()

    caps = config.gamma - np.real(np.diag(omega))
    if np.any(caps <= 0):
        raise InfeasibleError(
            "quantization-noise antenna loads reach the power bound")

    row_power = np.sum(np.abs(channel) ** 2, axis=1)
    peak = float(np.max(row_power / caps))
    if peak <= 0.0:
        raise ValueError("all-zero channel")
    w0 = channel * np.sqrt(1.0 / peak)
    v = np.stack([np.outer(w0[:, k], w0[:, k].conj()) for k in range(n_ue)])

    surrogate_values = np.empty(config.r_max)
    true_rates = np.empty(config.r_max + 1)
    true_rates[0] = _cov_sum_rate(channel, v, omega, config.power, weights)
    for r in range(config.r_max):
        problem = _surrogate_problem(channel, omega, config, weights, v)
        v, info = solve_psd_constrained_concave_max(
            problem, v0=v, iters=config.pg_iters, tol=config.pg_tol)
        surrogate_values[r] = info.objective
        true_rates[r + 1] = _cov_sum_rate(channel, v, omega, config.power,
                                          weights)

    precoder = np.stack([rank1_reduce(v[k]) for k in range(n_ue)], axis=1)
    used_fallback = False
    if sum_rate(channel, precoder, omega, config.power, weights) \
            < sum_rate(channel, w0, omega, config.power, weights):
        precoder = w0
        used_fallback = True

    loads = np.sum(np.abs(precoder) ** 2, axis=1) + np.real(np.diag(omega))
    if np.any(loads > config.gamma * (1 + 1e-9)):
        raise RuntimeError("per-antenna constraint violated after reduction")
    return DcResult(precoder=precoder, covariances=v,
                    surrogate_values=surrogate_values, true_rates=true_rates,
                    used_fallback=used_fallback)


def _cov_sum_rate(channel, v, omega, power, weights) -> float:
    """Weighted sum rate of the covariance relaxation."""
    n_ue = channel.shape[1]
    s = v.sum(axis=0)
    total = 0.0
    for k in range(n_ue):
        h = channel[:, k]
        t_k = float(np.real(h.conj() @ (s + omega) @ h))
        q_k = float(np.real(h.conj() @ (s - v[k] + omega) @ h))
        total += weights[k] * (np.log2(1.0 + power * t_k)
                               - np.log2(1.0 + power * q_k))
    return total


def estimate_quant_noise_cov(symbols, precoder, channel,
                             codebook: ProductCodebook, alpha=None,
                             mapper=None) -> np.ndarray:
    """Sample covariance of the joint quantization error W s - xhat."""
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.complex128))
    precoder = np.asarray(precoder, dtype=np.complex128)
    if mapper is None:
        mapper = lambda s, w, h, cb, a: mq_map_batch(s, w, h, cb, a)[0]
    digits = mapper(symbols, precoder, channel, codebook, alpha)
    xhat = codebook.levels_at(np.asarray(digits))
    errs = symbols @ precoder.T - xhat
    omega = errs.T @ errs.conj() / symbols.shape[0]
    return (omega + omega.conj().T) / 2.0


# ---------------------------------------------------------------------------
# joint precoding + quantization design


@dataclass
class JointDesignResult:
    codebook: ProductCodebook
    precoders: np.ndarray
    omegas: np.ndarray
    trace: np.ndarray
    omega_trace: list
    frequencies: list
    converged: bool
    warnings: list = field(default_factory=list)


def _ptpq_partition_digits(ensemble, precoders, codebook):
    """Per-RU minimum-distance assignments for every (channel, symbol)."""
    n_h, n_s = ensemble.num_channels, ensemble.num_symbols
    m_ru = ensemble.num_antennas
    digits = np.empty((n_h, n_s, m_ru), dtype=np.int64)
    for m in range(n_h):
        x = ensemble.symbols @ precoders[m].T
        for i, cb in enumerate(codebook.per_ru):
            digits[m, :, i] = ptpq_map_batch(x[:, i], cb)
    return digits


def joint_design(ensemble: TrainingEnsemble, alpha, design_cfg: DesignConfig,
                 dc_cfg: DcConfig, quantizer: str = "mq") -> JointDesignResult:
    """Alternate per-channel DC precoding, quantizer partition, codebook
    update, and quantization-noise re-estimation.

    Starts from zero noise covariances; precoders are recomputed from
    scratch every outer iteration for determinism. The loop is a heuristic
    (the distortion trace is reported but not guaranteed monotone) and
    stops on the relative-change rule.
    """
    if quantizer not in ("mq", "ptpq"):
        raise ValueError("quantizer must be 'mq' or 'ptpq'")
    n_h, n_s = ensemble.num_channels, ensemble.num_symbols
    m_ru, n_ue = ensemble.num_antennas, ensemble.num_users
    alpha = np.ones(n_ue) if alpha is None \
        else np.asarray(alpha, dtype=np.float64).ravel()
    bits = design_cfg.rate_bits if len(design_cfg.rate_bits) == m_ru \
        else (design_cfg.rate_bits[0],) * m_ru

    omegas = np.zeros((n_h, m_ru, m_ru), dtype=np.complex128)
    codebook = None
    precoders = None
    trace: list = []
    omega_trace: list = []
    warnings: list = []
    freqs = None
    prev_d = np.inf
    converged = False
    total = n_h * n_s

    for _ in range(design_cfg.max_outer_iters):
        precoders = [dc_precoder(ensemble.channels[m], omegas[m], dc_cfg).precoder
                     for m in range(n_h)]
        if codebook is None:
            x = precode_ensemble(ensemble, precoders)
            codebook = fixed_product_codebook(x, bits)

        if quantizer == "mq":
            digits, best = _mq_partition(ensemble, precoders, codebook, alpha)
            distortion = float(np.mean(best))
        else:
            digits = _ptpq_partition_digits(ensemble, precoders, codebook)
            distortion = _projected_distortion(ensemble, precoders, codebook,
                                               alpha, digits)
        counts = _marginal_counts(digits, codebook.sizes)
        freqs = [c / total for c in counts]

        if quantizer == "mq":
            codebook, _ = _mq_codebook_update(ensemble, precoders, codebook,
                                              alpha, digits)
        else:
            codebook = _ptpq_codebook_update(ensemble, precoders, codebook,
                                             design_cfg)

        trace.append(distortion)
        for m in range(n_h):
            omegas[m] = estimate_quant_noise_cov(
                ensemble.symbols, precoders[m], ensemble.channels[m],
                codebook, alpha,
                mapper=None if quantizer == "mq" else _ptpq_mapper)
            # keep the next DC problem strictly feasible
            omegas[m] = _clip_omega(omegas[m], dc_cfg.gamma)
        omega_trace.append(omegas.mean(axis=0))

        if distortion == 0.0:
            converged = True
            break
        if prev_d < np.inf and abs(prev_d - distortion) / distortion \
                <= design_cfg.epsilon:
            converged = True
            break
        prev_d = distortion
    if not converged:
        warnings.append("joint loop iteration cap reached")

    codebook = ProductCodebook(per_ru=[
        ScalarCodebook(levels=_snap_power(cb.levels, freqs[i], warnings))
        for i, cb in enumerate(codebook.per_ru)])
    return JointDesignResult(
        codebook=codebook, precoders=np.stack(precoders), omegas=omegas,
        trace=np.asarray(trace), omega_trace=omega_trace, frequencies=freqs,
        converged=converged, warnings=warnings)


def _ptpq_mapper(symbols, precoder, channel, codebook, alpha):
    x = symbols @ precoder.T
    return np.stack([ptpq_map_batch(x[:, i], cb)
                     for i, cb in enumerate(codebook.per_ru)], axis=1)


def _clip_omega(omega: np.ndarray, gamma: float) -> np.ndarray:
    """Scale the noise covariance so every antenna keeps a power margin."""
    loads = np.real(np.diag(omega))
    cap = 0.9 * gamma
    peak = float(np.max(loads))
    if peak > cap:
        omega = omega * (cap / peak)
    return omega


def _projected_distortion(ensemble, precoders, codebook, alpha, digits):
    total = 0.0
    for m in range(ensemble.num_channels):
        h = ensemble.channels[m]
        u = ensemble.symbols * np.einsum("mk,mk->k", h.conj(),
                                         precoders[m])[None, :]
        xhat = codebook.levels_at(digits[m])
        proj = xhat @ h.conj()
        total += float(np.sum(alpha[None, :] * np.abs(u - proj) ** 2))
    return total / (ensemble.num_channels * ensemble.num_symbols)


def _ptpq_codebook_update(ensemble, precoders, codebook,
                          design_cfg: DesignConfig) -> ProductCodebook:
    """One per-RU constrained Lloyd restart on the current precoded samples."""
    x = precode_ensemble(ensemble, precoders)
    books = []
    for i, cb in enumerate(codebook.per_ru):
        levels, _, _, _ = _scalar_lloyd(
            x[:, i], cb.rate_bits, design_cfg.epsilon,
            design_cfg.max_outer_iters, init_levels=cb.levels)
        books.append(ScalarCodebook(levels=levels))
    return ProductCodebook(per_ru=books)
