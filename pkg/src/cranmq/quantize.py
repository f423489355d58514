"""Symbol-by-symbol quantization mappings.

Point-to-point quantization (PtPQ) picks each RU's level by minimum
distance on that RU's signal alone. Multivariate quantization (MQ) picks
all RU levels jointly by exhaustive search over the product codebook,
minimizing the channel-projected weighted error

    sum_k alpha_k |h_k^H (w_k s_k - xhat)|^2,

so the quantization error is steered away from the spatial directions the
users actually see. Successive block MQ trades optimality for search cost
by fixing d RUs at a time on a truncated metric; entropy-penalized
variants add -lambda_i * log2 p(level) terms for variable-length coding.

All mapping functions are pure, return 0-based level indices, and count
every candidate they evaluate into an optional :class:`EvalCounter`
(exhaustive search is part of the contract, so the counts match the
closed-form product/sum expressions exactly).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .codebooks import ProductCodebook, ScalarCodebook

__all__ = [
    "EvalCounter",
    "LagrangeWeights",
    "ptpq_map",
    "ptpq_map_batch",
    "weighted_projection_distortion",
    "mq_map",
    "mq_map_batch",
    "successive_block_map",
    "successive_block_map_batch",
    "entropy_penalized_ptpq_map",
    "entropy_penalized_mq_map",
    "entropy_penalized_mq_map_batch",
    "joint_codeword_projections",
]

# joint searches beyond this many candidates are refused
JOINT_SIZE_GUARD = 1 << 32


@dataclass
class EvalCounter:
    """Counts candidate-metric evaluations performed by mapping calls."""

    candidate_evals: int = 0

    def add(self, n: int):
        self.candidate_evals += int(n)


@dataclass
class LagrangeWeights:
    """Per-RU entropy-penalty weights and level usage frequencies."""

    lambdas: np.ndarray
    level_frequencies: list

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.float64).ravel()
        if np.any(self.lambdas < 0):
            raise ValueError("lambda weights must be non-negative")
        if len(self.level_frequencies) != self.lambdas.size:
            raise ValueError("need one frequency vector per RU")
        freqs = []
        for p in self.level_frequencies:
            p = np.asarray(p, dtype=np.float64).ravel()
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("frequencies must be a probability vector")
            freqs.append(p)
        self.level_frequencies = freqs


# ---------------------------------------------------------------------------
# exhaustive-search kernels


# Candidate-outer loops: the (large) joint-codeword arrays stream through
# memory once while the per-sample running minima stay cache-resident, and
# the ascending candidate index with a strict `<` update gives the
# lowest-index tie-break for free.


@njit(cache=True)
def _argmin_joint_n1(ur, ui, ar, ai, alpha0, off):
    """Single-user argmin over all J joint candidates, lowest index on ties."""
    n_s = ur.shape[0]
    n_j = ar.shape[0]
    best = np.full(n_s, np.inf)
    bidx = np.zeros(n_s, np.int64)
    for j in range(n_j):
        arj = ar[j]
        aij = ai[j]
        oj = off[j]
        for s in range(n_s):
            dre = ur[s] - arj
            dim = ui[s] - aij
            d = alpha0 * (dre * dre + dim * dim) + oj
            if d < best[s]:
                best[s] = d
                bidx[s] = j
    return bidx, best


@njit(cache=True)
def _argmin_joint_gen(ur, ui, ar, ai, alpha, off):
    """Multi-user argmin over all J joint candidates, lowest index on ties.

    ur/ui are transposed to (N, n_s) so the inner sample loops are unit
    stride.
    """
    n_u, n_s = ur.shape
    n_j = ar.shape[1]
    best = np.full(n_s, np.inf)
    bidx = np.zeros(n_s, np.int64)
    acc = np.empty(n_s)
    for j in range(n_j):
        oj = off[j]
        for s in range(n_s):
            acc[s] = oj
        for k in range(n_u):
            ark = ar[k, j]
            aik = ai[k, j]
            alk = alpha[k]
            for s in range(n_s):
                dre = ur[k, s] - ark
                dim = ui[k, s] - aik
                acc[s] += alk * (dre * dre + dim * dim)
        for s in range(n_s):
            if acc[s] < best[s]:
                best[s] = acc[s]
                bidx[s] = j
    return bidx, best


def _argmin_joint(u: np.ndarray, a: np.ndarray, alpha: np.ndarray,
                  offset: np.ndarray | None = None):
    """Dispatch the exhaustive joint argmin; returns (flat indices, metrics)."""
    n_j = a.shape[1]
    if offset is None:
        offset = np.zeros(n_j)
    offset = np.ascontiguousarray(offset, dtype=np.float64)
    if u.shape[1] == 1:
        return _argmin_joint_n1(
            np.ascontiguousarray(u[:, 0].real), np.ascontiguousarray(u[:, 0].imag),
            np.ascontiguousarray(a[0].real), np.ascontiguousarray(a[0].imag),
            float(alpha[0]), offset)
    return _argmin_joint_gen(
        np.ascontiguousarray(u.T.real), np.ascontiguousarray(u.T.imag),
        np.ascontiguousarray(a.real), np.ascontiguousarray(a.imag),
        np.ascontiguousarray(alpha, dtype=np.float64), offset)


# ---------------------------------------------------------------------------
# shared geometry helpers


def joint_codeword_projections(channel_rows: np.ndarray, scalar_codebooks) -> np.ndarray:
    """Per-user channel projections of every joint codeword.

    Returns a (N, J) array with entry (k, j) = sum_i conj(h_k[i]) * level_i[j_i]
    where j runs over the Cartesian product of the given codebooks in C order
    (first RU slowest), i.e. flat index order = lexicographic index order.
    """
    channel_rows = np.asarray(channel_rows, dtype=np.complex128)
    n_u = channel_rows.shape[1]
    a = np.zeros((n_u, 1), dtype=np.complex128)
    for i, cb in enumerate(scalar_codebooks):
        contrib = channel_rows[i, :].conj()[:, None] * cb.levels[None, :]
        a = (a[:, :, None] + contrib[:, None, :]).reshape(n_u, -1)
    return a


def _precoded_targets(symbols: np.ndarray, precoder: np.ndarray,
                      channel: np.ndarray) -> np.ndarray:
    """u[n, k] = h_k^H w_k s_k(n) for a batch of symbol vectors."""
    hw = np.einsum("mk,mk->k", channel.conj(), precoder)
    return symbols * hw[None, :]


def _check_dims(symbols, precoder, channel):
    if channel.ndim != 2 or precoder.shape != channel.shape:
        raise ValueError("channel and precoder must both be (M, N)")
    if symbols.shape[-1] != channel.shape[1]:
        raise ValueError("symbol vector length must equal the user count")


def _default_alpha(n_users: int, alpha) -> np.ndarray:
    if alpha is None:
        return np.ones(n_users)
    alpha = np.asarray(alpha, dtype=np.float64).ravel()
    if alpha.size != n_users:
        raise ValueError("need one distortion weight per user")
    if np.any(alpha <= 0):
        raise ValueError("distortion weights must be positive")
    return alpha


def _guard_joint_size(n_joint: int):
    if n_joint > JOINT_SIZE_GUARD:
        raise ValueError(
            f"joint codebook has {n_joint} candidates, beyond the "
            f"{JOINT_SIZE_GUARD} exhaustive-search guard")


# ---------------------------------------------------------------------------
# point-to-point quantization


def ptpq_map(x: complex, codebook: ScalarCodebook,
             counter: EvalCounter | None = None) -> int:
    """Minimum-distance level index for one sample; lowest index on ties."""
    d = np.abs(complex(x) - codebook.levels) ** 2
    if counter is not None:
        counter.add(codebook.size)
    return int(np.argmin(d))


def ptpq_map_batch(xs: np.ndarray, codebook: ScalarCodebook,
                   counter: EvalCounter | None = None) -> np.ndarray:
    """Minimum-distance level indices for a batch of scalar samples."""
    xs = np.asarray(xs, dtype=np.complex128).ravel()
    d = np.abs(xs[:, None] - codebook.levels[None, :]) ** 2
    if counter is not None:
        counter.add(xs.size * codebook.size)
    return np.argmin(d, axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# channel-projected metric and joint mappings


def weighted_projection_distortion(channel: np.ndarray, precoder: np.ndarray,
                                   symbols: np.ndarray, xhat: np.ndarray,
                                   alpha=None) -> float:
    """sum_k alpha_k |h_k^H (w_k s_k - xhat)|^2 for one symbol vector."""
    channel = np.asarray(channel, dtype=np.complex128)
    precoder = np.asarray(precoder, dtype=np.complex128)
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    xhat = np.asarray(xhat, dtype=np.complex128).ravel()
    _check_dims(symbols, precoder, channel)
    if xhat.size != channel.shape[0]:
        raise ValueError("xhat length must equal the RU count")
    alpha = _default_alpha(channel.shape[1], alpha)
    err = precoder * symbols[None, :] - xhat[:, None]
    proj = np.einsum("mk,mk->k", channel.conj(), err)
    return float(np.sum(alpha * np.abs(proj) ** 2))


def mq_map_batch(symbols: np.ndarray, precoder: np.ndarray, channel: np.ndarray,
                 codebook: ProductCodebook, alpha=None,
                 counter: EvalCounter | None = None, offset=None):
    """Joint mapping of a batch of symbol vectors.

    Returns (indices, metrics): 0-based per-RU index vectors (n, M) chosen by
    exhaustive search over all prod(2**B_i) joint codewords, and the achieved
    metric per sample. Ties go to the lexicographically lowest index vector.
    """
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.complex128))
    channel = np.asarray(channel, dtype=np.complex128)
    precoder = np.asarray(precoder, dtype=np.complex128)
    _check_dims(symbols, precoder, channel)
    if codebook.num_rus != channel.shape[0]:
        raise ValueError("codebook RU count must match the channel")
    _guard_joint_size(codebook.joint_size)
    alpha = _default_alpha(channel.shape[1], alpha)

    a = joint_codeword_projections(channel, codebook.per_ru)
    u = _precoded_targets(symbols, precoder, channel)
    flat, metrics = _argmin_joint(u, a, alpha, offset)
    if counter is not None:
        counter.add(symbols.shape[0] * codebook.joint_size)
    digits = np.stack(np.unravel_index(flat, codebook.sizes), axis=1)
    return digits.astype(np.int64), metrics


def mq_map(symbols, precoder, channel, codebook: ProductCodebook, alpha=None,
           counter: EvalCounter | None = None) -> np.ndarray:
    """Joint index vector (M,) for one symbol vector."""
    digits, _ = mq_map_batch(symbols, precoder, channel, codebook, alpha, counter)
    return digits[0]


def successive_block_map_batch(symbols, precoder, channel,
                               codebook: ProductCodebook, alpha=None,
                               block_size: int = 1,
                               counter: EvalCounter | None = None,
                               offset_per_block=None):
    """Greedy block-by-block joint mapping for a batch of symbol vectors.

    RUs are processed in blocks of ``block_size``; each block minimizes the
    metric truncated to the antenna rows seen so far, with earlier blocks'
    levels held fixed. ``block_size == M`` reproduces ``mq_map_batch``
    index-for-index.
    """
    symbols = np.atleast_2d(np.asarray(symbols, dtype=np.complex128))
    channel = np.asarray(channel, dtype=np.complex128)
    precoder = np.asarray(precoder, dtype=np.complex128)
    _check_dims(symbols, precoder, channel)
    m_ru, n_u = channel.shape
    d = int(block_size)
    if d < 1 or m_ru % d != 0:
        raise ValueError("block size must divide the RU count")
    alpha = _default_alpha(n_u, alpha)

    n_s = symbols.shape[0]
    digits = np.empty((n_s, m_ru), dtype=np.int64)
    prefix = np.zeros((n_s, n_u), dtype=np.complex128)
    for b in range(m_ru // d):
        e0, e1 = b * d, (b + 1) * d
        sub = codebook.per_ru[e0:e1]
        sizes = tuple(cb.size for cb in sub)
        n_block = int(np.prod(sizes))
        _guard_joint_size(n_block)
        v = _precoded_targets(symbols, precoder[:e1], channel[:e1]) - prefix
        a = joint_codeword_projections(channel[e0:e1], sub)
        off = None if offset_per_block is None else offset_per_block[b]
        flat, _ = _argmin_joint(v, a, alpha, off)
        if counter is not None:
            counter.add(n_s * n_block)
        sub_digits = np.stack(np.unravel_index(flat, sizes), axis=1)
        digits[:, e0:e1] = sub_digits
        if e1 < m_ru:
            for i in range(e0, e1):
                chosen = codebook.per_ru[i].levels[digits[:, i]]
                prefix += np.conj(channel[i, :])[None, :] * chosen[:, None]
    return digits


def successive_block_map(symbols, precoder, channel, codebook: ProductCodebook,
                         alpha=None, block_size: int = 1,
                         counter: EvalCounter | None = None) -> np.ndarray:
    """Greedy block index vector (M,) for one symbol vector."""
    digits = successive_block_map_batch(symbols, precoder, channel, codebook,
                                        alpha, block_size, counter)
    return digits[0]


# ---------------------------------------------------------------------------
# entropy-penalized mappings


def _level_penalty(frequencies: np.ndarray, lam: float) -> np.ndarray:
    """-lambda * log2 p per level; unused levels (p = 0) become unusable."""
    p = np.asarray(frequencies, dtype=np.float64).ravel()
    if lam == 0.0:
        return np.zeros(p.size)
    pen = np.full(p.size, np.inf)
    pos = p > 0
    pen[pos] = -lam * np.log2(p[pos])
    return pen


def entropy_penalized_ptpq_map(x: complex, codebook: ScalarCodebook,
                               frequencies, lam: float,
                               counter: EvalCounter | None = None) -> int:
    """argmin_j |x - level_j|^2 - lambda*log2 p_j, lowest index on ties."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    cost = np.abs(complex(x) - codebook.levels) ** 2 + _level_penalty(frequencies, lam)
    if counter is not None:
        counter.add(codebook.size)
    return int(np.argmin(cost))


def _joint_penalty_offset(codebook: ProductCodebook,
                          lagrange: LagrangeWeights) -> np.ndarray:
    """Separable penalty over the joint grid, C order matching the search."""
    off = np.zeros(1)
    for cb, lam, p in zip(codebook.per_ru, lagrange.lambdas,
                          lagrange.level_frequencies):
        if p.size != cb.size:
            raise ValueError("frequency vector length must match the codebook")
        pen = _level_penalty(p, float(lam))
        off = (off[:, None] + pen[None, :]).ravel()
    return off


def entropy_penalized_mq_map_batch(symbols, precoder, channel,
                                   codebook: ProductCodebook, alpha,
                                   lagrange: LagrangeWeights,
                                   counter: EvalCounter | None = None):
    """Joint mapping with additive per-RU entropy penalties (batch)."""
    off = _joint_penalty_offset(codebook, lagrange)
    return mq_map_batch(symbols, precoder, channel, codebook, alpha,
                        counter, offset=off)


def entropy_penalized_mq_map(symbols, precoder, channel,
                             codebook: ProductCodebook, alpha,
                             lagrange: LagrangeWeights,
                             counter: EvalCounter | None = None) -> np.ndarray:
    """Entropy-penalized joint index vector (M,) for one symbol vector."""
    digits, _ = entropy_penalized_mq_map_batch(symbols, precoder, channel,
                                               codebook, alpha, lagrange, counter)
    return digits[0]
