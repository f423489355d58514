"""Correlated Rayleigh channel generation from the one-ring scattering model.

A radio unit (RU) cluster is an M-antenna transmitter; each single-antenna
user k sees a channel vector h_k ~ CN(0, R_k). The spatial correlation
R_k(theta, delta) of a lambda/2-spaced uniform linear array follows the
one-ring model: entry (m, n) is the average of exp(-j*pi*(m-n)*sin(phi))
over arrival angles phi uniform in [theta - delta, theta + delta].

Complex Gaussian convention used throughout the package: a unit-variance
complex sample has variance 1/2 per real component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "OneRingParams",
    "TrainingEnsemble",
    "one_ring_correlation",
    "sample_channels",
    "sample_symbols",
    "make_training_ensemble",
]

# PSD tolerance on correlation-matrix eigenvalues
_EIG_TOL = 1e-10


@dataclass(frozen=True)
class OneRingParams:
    """Angle of arrival theta, angular spread delta (radians), antenna count."""

    theta: float
    delta: float
    num_antennas: int

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.delta)):
            raise ValueError("theta and delta must be finite")
        if self.delta <= 0:
            raise ValueError("angular spread delta must be > 0")
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")


def one_ring_correlation(params: OneRingParams) -> np.ndarray:
    """M x M one-ring correlation matrix for a lambda/2-spaced ULA.

    Entry (m, n) = (1/2*delta) * integral over [theta-delta, theta+delta] of
    exp(-j*pi*(m-n)*sin(phi)) d(phi), evaluated by adaptive quadrature with
    absolute tolerance 1e-10. The matrix is Toeplitz-Hermitian by
    construction (one quadrature per antenna offset, conjugate-mirrored) and
    has exactly unit diagonal.
    """
    theta, delta, m_ant = params.theta, params.delta, params.num_antennas
    lo, hi = theta - delta, theta + delta
    scale = 1.0 / (2.0 * delta)

    # r[d] for offset d = m - n >= 0; r[-d] = conj(r[d])
    r = np.empty(m_ant, dtype=np.complex128)
    r[0] = 1.0
    for d in range(1, m_ant):
        re, _ = integrate.quad(
            lambda phi, d=d: np.cos(np.pi * d * np.sin(phi)), lo, hi,
            epsabs=1e-10, limit=400)
        im, _ = integrate.quad(
            lambda phi, d=d: -np.sin(np.pi * d * np.sin(phi)), lo, hi,
            epsabs=1e-10, limit=400)
        r[d] = scale * (re + 1j * im)

    corr = np.empty((m_ant, m_ant), dtype=np.complex128)
    for m in range(m_ant):
        for n in range(m_ant):
            d = m - n
            corr[m, n] = r[d] if d >= 0 else np.conj(r[-d])
    return corr


def _psd_factor(corr: np.ndarray) -> np.ndarray:
    """Factor L with L L^H = corr, valid for rank-deficient matrices.

    Eigendecomposition with eigenvalues clipped at zero; a plain Cholesky
    would fail for the nearly rank-1 matrices produced by small angular
    spreads.
    """
    corr = np.asarray(corr, dtype=np.complex128)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError("correlation matrix must be square")
    herm_err = np.max(np.abs(corr - corr.conj().T))
    if herm_err > 1e-9:
        raise ValueError(f"correlation matrix not Hermitian (error {herm_err:g})")
    w, u = np.linalg.eigh((corr + corr.conj().T) / 2.0)
    scale = max(1.0, float(np.max(w)) if w.size else 1.0)
    if np.min(w) < -1e-8 * scale:
        raise ValueError(f"correlation matrix not PSD (min eigenvalue {np.min(w):g})")
    return u * np.sqrt(np.clip(w, 0.0, None))[None, :]


def sample_channels(correlations, count: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` channel matrices H of shape (M, N).

    Column k is h_k = L_k g with g standard circular complex Gaussian and
    L_k an eigendecomposition-based factor of the k-th correlation matrix.
    Deterministic given the generator state.
    """
    factors = [_psd_factor(c) for c in correlations]
    m_ant = factors[0].shape[0]
    if any(f.shape[0] != m_ant for f in factors):
        raise ValueError("all correlation matrices must share the antenna count")
    n_ue = len(factors)
    g = (rng.standard_normal((count, m_ant, n_ue))
         + 1j * rng.standard_normal((count, m_ant, n_ue))) / np.sqrt(2.0)
    out = np.empty((count, m_ant, n_ue), dtype=np.complex128)
    for k, lk in enumerate(factors):
        out[:, :, k] = g[:, :, k] @ lk.T
    return out


def sample_symbols(num_users: int, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    """I.i.d. unit-variance circular complex Gaussian symbols, (count, N)."""
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    return (rng.standard_normal((count, num_users))
            + 1j * rng.standard_normal((count, num_users))) / np.sqrt(2.0)


@dataclass
class TrainingEnsemble:
    """Training channels (N_h, M, N) and symbols (N_s, N) for codebook design."""

    channels: np.ndarray
    symbols: np.ndarray

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.complex128)
        self.symbols = np.asarray(self.symbols, dtype=np.complex128)
        if self.channels.ndim != 3:
            raise ValueError("channels must have shape (N_h, M, N)")
        if self.symbols.ndim != 2:
            raise ValueError("symbols must have shape (N_s, N)")
        if self.channels.shape[2] != self.symbols.shape[1]:
            raise ValueError("channel and symbol user counts differ")
        if self.num_channels < 1 or self.num_symbols < 1:
            raise ValueError("ensemble must be non-empty")
        if not (np.isfinite(self.channels).all() and np.isfinite(self.symbols).all()):
            raise ValueError("ensemble entries must be finite")

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.channels.shape[1]

    @property
    def num_users(self) -> int:
        return self.channels.shape[2]

    @property
    def num_symbols(self) -> int:
        return self.symbols.shape[0]


def make_training_ensemble(correlations, num_channels: int, num_symbols: int,
                           rng: np.random.Generator) -> TrainingEnsemble:
    """Independent training channels and symbols from one generator."""
    channels = sample_channels(correlations, num_channels, rng)
    symbols = sample_symbols(len(correlations), num_symbols, rng)
    return TrainingEnsemble(channels=channels, symbols=symbols)
