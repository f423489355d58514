"""Offline quantizer codebook optimization.

All designs are training-based alternations between a minimum-distortion
partition and a power-constrained quadratic codebook update, run over an
ensemble of channels and symbols so the resulting codebooks depend only on
long-term channel statistics:

* per-RU scalar design on the precoded samples (PtPQ),
* joint product-codebook design under the channel-projected metric (MQ),
* entropy-constrained versions of both, wrapping the inner alternation in
  a bisection on the Lagrange weight(s) until the output entropy lands in
  [B - tau, B].

Per-RU PtPQ codebooks are designed over the whole channel ensemble (not a
single precoder) so fixed- and joint-metric designs see the same long-term
statistics; the plain per-precoder variant is the special case of a
one-channel ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import TrainingEnsemble
from .codebooks import ProductCodebook, ScalarCodebook, uniform_grid_codebook
from .quantize import (
    LagrangeWeights,
    _argmin_joint,
    _joint_penalty_offset,
    _level_penalty,
    _precoded_targets,
    joint_codeword_projections,
)
from .solvers import QuadraticProgram, solve_power_constrained_quadratic

__all__ = [
    "DesignConfig",
    "PtpqDesignResult",
    "MqDesignResult",
    "EntropyPtpqDesignResult",
    "EntropyMqDesignResult",
    "PartitionStats",
    "design_ptpq",
    "design_mq",
    "design_ptpq_entropy_constrained",
    "design_mq_entropy_constrained",
    "empirical_entropy",
    "partition_stats",
    "precode_ensemble",
]

BISECTION_CAP = 60


@dataclass
class DesignConfig:
    """Stopping thresholds and rate budgets for the design loops."""

    rate_bits: tuple
    epsilon: float = 1e-3
    tau: float = 0.05
    expanded_rate_bits: tuple | None = None
    lambda_bounds: tuple = (0.0, 1.5)
    max_outer_iters: int = 100

    def __post_init__(self):
        self.rate_bits = tuple(int(b) for b in np.atleast_1d(self.rate_bits))
        if any(b < 1 for b in self.rate_bits):
            raise ValueError("rate bits must be >= 1")
        if self.epsilon < 0 or self.tau < 0:
            raise ValueError("epsilon and tau must be non-negative")
        if self.expanded_rate_bits is not None:
            self.expanded_rate_bits = tuple(
                int(b) for b in np.atleast_1d(self.expanded_rate_bits))
            if len(self.expanded_rate_bits) != len(self.rate_bits):
                raise ValueError("need one expanded rate per RU")
            if any(bp < b for bp, b in zip(self.expanded_rate_bits, self.rate_bits)):
                raise ValueError("expanded rates must be >= the rate budget")
        lo, hi = self.lambda_bounds
        if lo < 0 or hi < lo:
            raise ValueError("invalid lambda bounds")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")

    def expanded_or_rate_bits(self) -> tuple:
        if self.expanded_rate_bits is not None:
            return self.expanded_rate_bits
        return tuple(b + 1 for b in self.rate_bits)


@dataclass
class PtpqDesignResult:
    codebooks: list
    traces: list
    frequencies: list
    converged: bool
    warnings: list = field(default_factory=list)


@dataclass
class MqDesignResult:
    codebook: ProductCodebook
    trace: np.ndarray
    frequencies: list
    converged: bool
    warnings: list = field(default_factory=list)


@dataclass
class EntropyPtpqDesignResult:
    codebooks: list
    traces: list
    frequencies: list
    entropies: np.ndarray
    lambdas: np.ndarray
    in_window: bool
    warnings: list = field(default_factory=list)

    def lagrange_weights(self) -> LagrangeWeights:
        return LagrangeWeights(lambdas=self.lambdas,
                               level_frequencies=self.frequencies)


@dataclass
class EntropyMqDesignResult:
    codebook: ProductCodebook
    traces: list
    frequencies: list
    entropies: np.ndarray
    lambdas: np.ndarray
    in_window: bool
    warnings: list = field(default_factory=list)
    mapping_frequencies: list | None = None

    def lagrange_weights(self) -> LagrangeWeights:
        """Weights of the deployed mapping; reproduces the partition whose
        entropies are reported."""
        freqs = self.mapping_frequencies or self.frequencies
        return LagrangeWeights(lambdas=self.lambdas, level_frequencies=freqs)


@dataclass
class PartitionStats:
    """Aggregated cell occupancy of a joint partition over the ensemble."""

    joint_counts: dict
    marginals: list
    total: int


def empirical_entropy(frequencies) -> float:
    """Entropy in bits of a probability vector, with 0*log(0) = 0."""
    p = np.asarray(frequencies, dtype=np.float64).ravel()
    if np.any(p < 0):
        raise ValueError("negative frequency")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("frequencies must sum to 1")
    pos = p[p > 0]
    return float(-np.sum(pos * np.log2(pos)))


def precode_ensemble(ensemble: TrainingEnsemble, precoders) -> np.ndarray:
    """Stacked precoded samples (N_h * N_s, M) for all channel/symbol pairs."""
    n_h, m_ru = ensemble.num_channels, ensemble.num_antennas
    n_s = ensemble.num_symbols
    out = np.empty((n_h * n_s, m_ru), dtype=np.complex128)
    for m in range(n_h):
        out[m * n_s:(m + 1) * n_s] = ensemble.symbols @ precoders[m].T
    return out


def _resolve_precoders(ensemble: TrainingEnsemble, precoder_rule):
    if callable(precoder_rule):
        return [precoder_rule(ensemble.channels[m])
                for m in range(ensemble.num_channels)]
    precoders = list(precoder_rule)
    if len(precoders) != ensemble.num_channels:
        raise ValueError("need one precoder per training channel")
    return precoders


# ---------------------------------------------------------------------------
# scalar (per-RU) Lloyd iteration


def _scalar_update(samples, assignments, levels, enforce_power=True):
    """Power-constrained centroid update for one RU's codebook."""
    n_levels = levels.size
    counts = np.bincount(assignments, minlength=n_levels).astype(float)
    sums = np.zeros(n_levels, dtype=np.complex128)
    np.add.at(sums, assignments, samples)
    used = counts > 0
    if enforce_power:
        qp = QuadraticProgram(hessian=np.diag(counts).astype(complex),
                              linear=sums,
                              groups=[np.arange(n_levels)],
                              weights=[counts / counts.sum()])
        new_levels, _ = solve_power_constrained_quadratic(qp)
        new_levels = np.where(used, new_levels, levels)
    else:
        new_levels = levels.copy()
        new_levels[used] = sums[used] / counts[used]
    return new_levels, counts


def _scalar_lloyd(samples, bits, epsilon, max_iters, lam=0.0,
                  init_levels=None, warnings=None):
    """Lloyd alternation on scalar samples; entropy-penalized when lam > 0.

    Returns (levels, frequencies, trace, converged). The trace records the
    per-iteration objective: plain distortion for lam = 0, distortion plus
    lam * entropy otherwise (the quantity the alternation actually
    descends).
    """
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    n = samples.size
    if init_levels is None:
        levels = uniform_grid_codebook(samples, bits).levels
    else:
        levels = np.asarray(init_levels, dtype=np.complex128).copy()
    n_levels = levels.size
    freqs = np.full(n_levels, 1.0 / n_levels)
    trace = []
    converged = False
    prev_obj = np.inf
    prev_levels = levels.copy()
    prev_freqs = freqs.copy()
    for _ in range(max_iters):
        if lam > 0.0:
            penalty = _level_penalty(_design_penalty_model(freqs, n), lam)
            cost = (np.abs(samples[:, None] - levels[None, :]) ** 2
                    + penalty[None, :])
        else:
            cost = np.abs(samples[:, None] - levels[None, :]) ** 2
        assignments = np.argmin(cost, axis=1)

        if lam == 0.0:
            # re-seed empty cells at the worst-covered sample
            for _ in range(n_levels):
                counts = np.bincount(assignments, minlength=n_levels)
                empty = np.flatnonzero(counts == 0)
                if empty.size == 0:
                    break
                dist = np.abs(samples - levels[assignments]) ** 2
                worst = int(np.argmax(dist))
                if dist[worst] <= 0.0:
                    break
                levels[empty[0]] = samples[worst]
                cost = np.abs(samples[:, None] - levels[None, :]) ** 2
                assignments = np.argmin(cost, axis=1)

        counts = np.bincount(assignments, minlength=n_levels).astype(float)
        freqs = counts / n
        distortion = float(np.mean(np.abs(samples - levels[assignments]) ** 2))
        objective = distortion
        if lam > 0.0:
            objective = distortion + lam * empirical_entropy(freqs)

        if trace and objective > trace[-1] + 1e-9 * max(1.0, trace[-1]):
            # constrained update under shifted frequencies; keep best-so-far
            levels = prev_levels
            freqs = prev_freqs
            if warnings is not None:
                warnings.append("objective increase; reverted to best iterate")
            converged = True
            break
        trace.append(objective)
        if objective == 0.0:
            converged = True
            break
        if prev_obj < np.inf and (prev_obj - objective) / objective <= epsilon:
            converged = True
            break
        prev_obj = objective
        prev_levels = levels.copy()
        prev_freqs = freqs.copy()
        levels, _ = _scalar_update(samples, assignments, levels)
        if lam > 0.0 and np.any(freqs == 0.0):
            # re-seed dead levels onto the worst-covered samples; they stay
            # selectable through the floored penalty model
            dist = np.abs(samples - levels[assignments]) ** 2
            order = np.argsort(dist)[::-1]
            for rank, j in enumerate(np.flatnonzero(freqs == 0.0)):
                if rank >= order.size or dist[order[rank]] <= 0.0:
                    break
                levels[j] = samples[order[rank]]
    levels = _snap_power(levels, freqs, warnings)
    return levels, freqs, np.asarray(trace), converged


def _snap_power(levels, freqs, warnings=None):
    """Final feasibility snap: usage-weighted level power must not exceed 1.

    The constrained updates already enforce this against the frequencies
    they were solved with; a terminal partition can drift the frequencies,
    so the returned codebook is rescaled onto the power sphere if needed.
    """
    power = float(np.sum(freqs * np.abs(levels) ** 2))
    if power > 1.0 + 1e-12:
        levels = levels / np.sqrt(power)
        if warnings is not None:
            warnings.append(f"terminal power snap applied (power {power:.6g})")
    return levels


def _design_penalty_model(freqs: np.ndarray, n_samples: int) -> np.ndarray:
    """Frequency model used inside the design-time entropy penalty.

    Unused levels get a floor of half a sample so they stay selectable and
    can be revived by the re-seed rule (a hard p = 0 makes level death
    permanent and the achievable-entropy curve jump over narrow windows).
    The model is normalized, so the penalized objective keeps its descent
    property; reported frequencies stay the true empirical ones.
    """
    floored = np.maximum(freqs, 0.5 / n_samples)
    return floored / floored.sum()


def design_ptpq(ensemble: TrainingEnsemble, precoder_rule,
                config: DesignConfig) -> PtpqDesignResult:
    """Per-RU power-constrained Lloyd design on the precoded ensemble."""
    precoders = _resolve_precoders(ensemble, precoder_rule)
    x = precode_ensemble(ensemble, precoders)
    m_ru = ensemble.num_antennas
    bits = config.rate_bits if len(config.rate_bits) == m_ru \
        else (config.rate_bits[0],) * m_ru
    warnings: list = []
    books, traces, freqs, ok = [], [], [], True
    for i in range(m_ru):
        levels, f, trace, converged = _scalar_lloyd(
            x[:, i], bits[i], config.epsilon, config.max_outer_iters,
            warnings=warnings)
        books.append(ScalarCodebook(levels=levels))
        traces.append(trace)
        freqs.append(f)
        ok = ok and converged
    if not ok:
        warnings.append("Lloyd iteration cap reached; returning best-so-far")
    return PtpqDesignResult(codebooks=books, traces=traces, frequencies=freqs,
                            converged=ok, warnings=warnings)


# ---------------------------------------------------------------------------
# joint (MQ) design


def _mq_partition(ensemble, precoders, codebook, alpha, lagrange=None):
    """Joint partition of every (channel, symbol) pair.

    Returns (digits (N_h, N_s, M), best metric (N_h, N_s)). The metric
    includes the entropy penalty when a LagrangeWeights is given.
    """
    n_h, n_s = ensemble.num_channels, ensemble.num_symbols
    m_ru = ensemble.num_antennas
    offset = None
    if lagrange is not None:
        offset = _joint_penalty_offset(codebook, lagrange)
    digits = np.empty((n_h, n_s, m_ru), dtype=np.int64)
    best = np.empty((n_h, n_s))
    sizes = codebook.sizes
    for m in range(n_h):
        channel = ensemble.channels[m]
        a = joint_codeword_projections(channel, codebook.per_ru)
        u = _precoded_targets(ensemble.symbols, precoders[m], channel)
        flat, metric = _argmin_joint(u, a, alpha, offset)
        digits[m] = np.stack(np.unravel_index(flat, sizes), axis=1)
        best[m] = metric
    return digits, best


def _marginal_counts(digits, sizes):
    counts = []
    for i, size in enumerate(sizes):
        counts.append(np.bincount(digits[..., i].ravel(),
                                  minlength=size).astype(float))
    return counts


def _mq_codebook_update(ensemble, precoders, codebook, alpha, digits):
    """Joint quadratic update of all levels under per-RU power constraints."""
    sizes = codebook.sizes
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    t = int(offsets[-1])
    a_mat = np.zeros((t, t), dtype=np.complex128)
    b_vec = np.zeros(t, dtype=np.complex128)
    m_ru = ensemble.num_antennas
    for m in range(ensemble.num_channels):
        h = ensemble.channels[m]
        # per-sample objective |y_k - h_k^H T xhat|^2 gives the Hessian
        # sum_k a_k (T^T h_k)(T^T h_k)^H and linear term sum_k a_k T^T h_k y_k
        g = (h * alpha[None, :]) @ h.conj().T
        u = _precoded_targets(ensemble.symbols, precoders[m], h)
        y = (u * alpha[None, :]) @ h.T
        d = digits[m]
        var_idx = [offsets[i] + d[:, i] for i in range(m_ru)]
        for i in range(m_ru):
            np.add.at(b_vec, var_idx[i], y[:, i])
            for i2 in range(m_ru):
                np.add.at(a_mat, (var_idx[i], var_idx[i2]), g[i, i2])
    a_mat = (a_mat + a_mat.conj().T) / 2.0

    total = ensemble.num_channels * ensemble.num_symbols
    counts = _marginal_counts(digits, sizes)
    groups = [np.arange(offsets[i], offsets[i + 1]) for i in range(m_ru)]
    weights = [c / total for c in counts]
    qp = QuadraticProgram(hessian=a_mat, linear=b_vec, groups=groups,
                          weights=weights)
    x, info = solve_power_constrained_quadratic(qp)
    books = []
    for i in range(m_ru):
        new_levels = x[offsets[i]:offsets[i + 1]].copy()
        dead = counts[i] == 0
        if np.any(dead):
            new_levels[dead] = codebook.per_ru[i].levels[dead]
        books.append(ScalarCodebook(levels=new_levels))
    return ProductCodebook(per_ru=books), info


def _relocate_dead_levels(ensemble, precoders, codebook, freqs, best):
    """Move marginally unused levels onto worst-covered precoded samples.

    Used by the entropy-penalized design, where the floored penalty model
    keeps relocated levels selectable on the next partition.
    """
    if not any(np.any(f == 0.0) for f in freqs):
        return codebook
    n_s = ensemble.num_symbols
    order = np.argsort(best.ravel())[::-1]
    books = [cb.levels.copy() for cb in codebook.per_ru]
    rank = 0
    for i, f in enumerate(freqs):
        for j in np.flatnonzero(f == 0.0):
            if rank >= order.size or best.ravel()[order[rank]] <= 0.0:
                break
            m, n = divmod(int(order[rank]), n_s)
            precoded = precoders[m] @ ensemble.symbols[n]
            books[i][j] = precoded[i]
            rank += 1
    return ProductCodebook(per_ru=[ScalarCodebook(levels=lv) for lv in books])


def _reseed_mq_empty_levels(ensemble, precoders, codebook, alpha,
                            digits, best):
    """Re-seed marginally unused levels at the worst-covered sample.

    Returns (codebook, digits, best, reseeded?). Each round moves every
    currently dead level onto the precoded component of a distinct
    high-distortion sample, then re-partitions.
    """
    n_s = ensemble.num_symbols
    sizes = codebook.sizes
    for _ in range(3):
        counts = _marginal_counts(digits, sizes)
        empties = [(i, j) for i, c in enumerate(counts)
                   for j in np.flatnonzero(c == 0)]
        if not empties:
            return codebook, digits, best, False
        order = np.argsort(best.ravel())[::-1]
        books = [cb.levels.copy() for cb in codebook.per_ru]
        for rank, (i, j) in enumerate(empties):
            if rank >= order.size or best.ravel()[order[rank]] <= 0.0:
                break
            m, n = divmod(int(order[rank]), n_s)
            precoded = precoders[m] @ ensemble.symbols[n]
            books[i][j] = precoded[i]
        codebook = ProductCodebook(
            per_ru=[ScalarCodebook(levels=lv) for lv in books])
        digits, best = _mq_partition(ensemble, precoders, codebook, alpha)
    return codebook, digits, best, True


def design_mq(ensemble: TrainingEnsemble, precoder_rule, alpha,
              config: DesignConfig, init_codebook: ProductCodebook | None = None,
              lagrange: LagrangeWeights | None = None) -> MqDesignResult:
    """Joint product-codebook design under the channel-projected metric.

    Alternates the exhaustive joint partition over every (channel, symbol)
    pair with the power-constrained quadratic update of all levels, until
    the relative objective drop falls below epsilon. The codebook depends
    only on the training ensemble (long-term statistics), never on a single
    realization.
    """
    precoders = _resolve_precoders(ensemble, precoder_rule)
    m_ru = ensemble.num_antennas
    alpha = np.ones(ensemble.num_users) if alpha is None \
        else np.asarray(alpha, dtype=np.float64).ravel()
    bits = config.rate_bits if len(config.rate_bits) == m_ru \
        else (config.rate_bits[0],) * m_ru
    if init_codebook is None:
        x = precode_ensemble(ensemble, precoders)
        codebook = ProductCodebook(per_ru=[
            uniform_grid_codebook(x[:, i], bits[i]) for i in range(m_ru)])
    else:
        codebook = init_codebook

    warnings: list = []
    trace: list = []
    freqs = None
    prev_obj = np.inf
    prev_codebook = codebook
    prev_freqs = None
    converged = False
    total = ensemble.num_channels * ensemble.num_symbols
    entropy_weight = None
    if lagrange is not None:
        entropy_weight = np.asarray(lagrange.lambdas, dtype=float)

    for _ in range(config.max_outer_iters):
        digits, best = _mq_partition(ensemble, precoders, codebook, alpha,
                                     lagrange)
        if lagrange is None:
            codebook, digits, best, reseeded = _reseed_mq_empty_levels(
                ensemble, precoders, codebook, alpha, digits, best)
        counts = _marginal_counts(digits, codebook.sizes)
        freqs = [c / total for c in counts]

        if lagrange is None:
            objective = float(np.mean(best))
        else:
            # `best` already contains the penalty paid under the *previous*
            # frequency model; the descent objective uses the refreshed ones
            distortion = _partition_distortion(ensemble, precoders, codebook,
                                               alpha, digits)
            objective = distortion + float(sum(
                w * empirical_entropy(f)
                for w, f in zip(entropy_weight, freqs)))
            lagrange = LagrangeWeights(
                lambdas=entropy_weight,
                level_frequencies=[_design_penalty_model(f, total)
                                   for f in freqs])

        if trace and objective > trace[-1] + 1e-9 * max(1.0, trace[-1]):
            codebook = prev_codebook
            if prev_freqs is not None:
                freqs = prev_freqs
            warnings.append("objective increase; reverted to best iterate")
            converged = True
            break
        trace.append(objective)
        if objective == 0.0:
            converged = True
            break
        if prev_obj < np.inf and (prev_obj - objective) / objective <= config.epsilon:
            converged = True
            break
        prev_obj = objective
        prev_codebook = codebook
        prev_freqs = freqs
        codebook, _ = _mq_codebook_update(ensemble, precoders, codebook,
                                          alpha, digits)
        if lagrange is not None:
            codebook = _relocate_dead_levels(ensemble, precoders, codebook,
                                             freqs, best)
    if not converged:
        warnings.append("Lloyd iteration cap reached; returning best-so-far")
    codebook = ProductCodebook(per_ru=[
        ScalarCodebook(levels=_snap_power(cb.levels, freqs[i], warnings))
        for i, cb in enumerate(codebook.per_ru)])
    return MqDesignResult(codebook=codebook, trace=np.asarray(trace),
                          frequencies=freqs, converged=converged,
                          warnings=warnings)


def _partition_distortion(ensemble, precoders, codebook, alpha, digits):
    """Plain channel-projected distortion of a given partition."""
    total = 0.0
    for m in range(ensemble.num_channels):
        h = ensemble.channels[m]
        u = _precoded_targets(ensemble.symbols, precoders[m], h)
        xhat = codebook.levels_at(digits[m])
        proj = xhat @ h.conj()
        total += float(np.sum(alpha[None, :] * np.abs(u - proj) ** 2))
    return total / (ensemble.num_channels * ensemble.num_symbols)


# ---------------------------------------------------------------------------
# entropy-constrained designs


def _half_interval_update(entropy, target_bits, lam, lo, hi, bounds):
    """One Lagrange-weight move of the half-interval search.

    Entropy above the budget moves the lower bound up to the tested weight
    (more penalty needed); entropy below the window moves the upper bound
    down; the next test point is the midpoint. An exhausted bracket that
    still misses the window is re-opened around the current weight: the
    achieved entropy drifts with the warm-started codebook (and, for the
    joint design, with the other RUs' weights), so the critical weight can
    move outside the original bracket.
    """
    if hi - lo <= 1e-7 * max(1.0, hi):
        span = max(1e-3, 0.25 * lam)
        if entropy > target_bits:
            lo, hi = lam, min(bounds[1], lam + span)
        else:
            lo, hi = max(bounds[0], lam - span), lam
    elif entropy > target_bits:
        lo = lam
    else:
        hi = lam
    return lo, hi, (lo + hi) / 2.0


def design_ptpq_entropy_constrained(ensemble: TrainingEnsemble, precoder_rule,
                                    config: DesignConfig) -> EntropyPtpqDesignResult:
    """Entropy-constrained scalar design: penalized Lloyd inside a bisection
    on lambda until each RU's output entropy lies in [B - tau, B]."""
    precoders = _resolve_precoders(ensemble, precoder_rule)
    x = precode_ensemble(ensemble, precoders)
    m_ru = ensemble.num_antennas
    bits = config.rate_bits if len(config.rate_bits) == m_ru \
        else (config.rate_bits[0],) * m_ru
    big_bits = config.expanded_or_rate_bits()
    warnings: list = []
    books, freqs, entropies, lambdas, traces = [], [], [], [], []
    in_window = True
    for i in range(m_ru):
        lo, hi = config.lambda_bounds
        lam = lo
        target = float(bits[i])
        best = None
        hit = False
        init = None
        for _ in range(BISECTION_CAP):
            levels, f, trace, _ = _scalar_lloyd(
                x[:, i], big_bits[i], config.epsilon, config.max_outer_iters,
                lam=lam, init_levels=init, warnings=warnings)
            init = levels  # warm-start the next weight trial
            h_now = empirical_entropy(f)
            traces.append(trace)
            gap = 0.0 if target - config.tau <= h_now <= target else \
                min(abs(h_now - target), abs(h_now - (target - config.tau)))
            if best is None or gap < best[0]:
                best = (gap, levels, f, h_now, lam)
            if target - config.tau <= h_now <= target:
                hit = True
                break
            lo, hi, lam = _half_interval_update(h_now, target, lam, lo, hi,
                                                config.lambda_bounds)
        if not hit:
            warnings.append(
                f"RU {i}: entropy window not reached; nearest "
                f"H={best[3]:.4f} at lambda={best[4]:.4f}")
            in_window = False
        _, levels, f, h_now, lam = best
        books.append(ScalarCodebook(levels=levels))
        freqs.append(f)
        entropies.append(h_now)
        lambdas.append(lam)
    return EntropyPtpqDesignResult(
        codebooks=books, traces=traces, frequencies=freqs,
        entropies=np.asarray(entropies), lambdas=np.asarray(lambdas),
        in_window=in_window, warnings=warnings)


def _halton(count: int, dims: int) -> np.ndarray:
    """Deterministic low-discrepancy points in [0, 1]^dims."""
    primes = [2, 3, 5, 7, 11, 13, 17, 19]
    out = np.empty((count, dims))
    for d in range(dims):
        base = primes[d % len(primes)]
        for n in range(count):
            f, r, i = 1.0, 0.0, n + 1
            while i > 0:
                f /= base
                r += f * (i % base)
                i //= base
            out[n, d] = r
    return out


def _mapping_fixed_point(ensemble, precoders, codebook, alpha, lambdas,
                         freqs0, passes=5):
    """Iterate partition/frequency refresh at a frozen codebook.

    Uses the runtime penalty semantics (unused levels are unusable), so the
    returned entropies describe exactly what the deployed mapping achieves
    on the training set. Deterministic given (codebook, lambdas, freqs0).
    """
    total = ensemble.num_channels * ensemble.num_symbols
    freqs = [np.asarray(f, dtype=float).copy() for f in freqs0]
    digits = None
    for _ in range(passes):
        lagrange = LagrangeWeights(lambdas=np.asarray(lambdas, dtype=float),
                                   level_frequencies=freqs)
        digits, _ = _mq_partition(ensemble, precoders, codebook, alpha,
                                  lagrange)
        new = [c / total for c in _marginal_counts(digits, codebook.sizes)]
        drift = max(np.max(np.abs(a - b)) for a, b in zip(new, freqs))
        freqs = new
        if drift == 0.0:
            break
    entropies = np.array([empirical_entropy(f) for f in freqs])
    return entropies, freqs, digits


def design_mq_entropy_constrained(ensemble: TrainingEnsemble, precoder_rule,
                                  alpha, config: DesignConfig) -> EntropyMqDesignResult:
    """Entropy-constrained joint design.

    A coarse phase runs the penalized LBG under a shared half-interval
    search of the per-RU Lagrange weights; a refinement phase freezes the
    best codebook and steers the weights on mapping-only passes (whose
    achieved entropies respond smoothly and deterministically) until every
    marginal entropy lies in [B_i - tau, B_i].
    """
    precoders = _resolve_precoders(ensemble, precoder_rule)
    m_ru = ensemble.num_antennas
    alpha = np.ones(ensemble.num_users) if alpha is None \
        else np.asarray(alpha, dtype=np.float64).ravel()
    bits = config.rate_bits if len(config.rate_bits) == m_ru \
        else (config.rate_bits[0],) * m_ru
    big_bits = config.expanded_or_rate_bits()
    big_config = DesignConfig(rate_bits=big_bits, epsilon=config.epsilon,
                              tau=config.tau,
                              max_outer_iters=config.max_outer_iters)
    x = precode_ensemble(ensemble, precoders)
    fresh = ProductCodebook(per_ru=[
        uniform_grid_codebook(x[:, i], big_bits[i]) for i in range(m_ru)])

    targets = np.asarray(bits, dtype=float)
    warnings: list = []
    traces: list = []

    def window_gap(ent):
        inside = (targets - config.tau <= ent) & (ent <= targets)
        return float(np.max(np.where(
            inside, 0.0, np.minimum(np.abs(ent - targets),
                                    np.abs(ent - (targets - config.tau))))))

    lo = np.full(m_ru, config.lambda_bounds[0])
    hi = np.full(m_ru, config.lambda_bounds[1])
    lam = lo.copy()
    candidates = []  # (gap, order, result, entropies, lambdas)
    coarse_evals = max(8, BISECTION_CAP // 3)
    current_init = fresh
    hit = False
    for order in range(coarse_evals):
        uniform = [np.full(cb.size, 1.0 / cb.size) for cb in current_init.per_ru]
        lagrange = LagrangeWeights(lambdas=lam.copy(),
                                   level_frequencies=uniform)
        result = design_mq(ensemble, precoders, alpha, big_config,
                           init_codebook=current_init, lagrange=lagrange)
        traces.append(result.trace)
        entropies = np.array([empirical_entropy(f) for f in result.frequencies])
        gap = window_gap(entropies)
        candidates.append((gap, order, result, entropies, lam.copy()))
        if gap == 0.0:
            hit = True
            break
        # poisoned warm states (entropy far off) restart from the grid
        current_init = result.codebook if gap < 0.3 else fresh
        inside = (targets - config.tau <= entropies) & (entropies <= targets)
        for i in range(m_ru):
            if not inside[i]:
                lo[i], hi[i], lam[i] = _half_interval_update(
                    entropies[i], targets[i], lam[i], lo[i], hi[i],
                    config.lambda_bounds)

    candidates.sort(key=lambda c: (c[0], c[1]))

    def refine(frozen, freqs_init, lam_init):
        """Per-RU weight bisection on mapping-only passes at a frozen book."""
        lo = np.full(m_ru, config.lambda_bounds[0])
        hi = np.full(m_ru, config.lambda_bounds[1])
        lam_r = np.asarray(lam_init, dtype=float).copy()
        ent, fr, _ = _mapping_fixed_point(
            ensemble, precoders, frozen, alpha, lam_r, freqs_init)
        best_fine = (np.inf, ent, fr, lam_r.copy())
        for _ in range(2 * BISECTION_CAP):
            inside = (targets - config.tau <= ent) & (ent <= targets)
            if inside.all():
                return True, ent, fr, lam_r
            for i in range(m_ru):
                if not inside[i]:
                    lo[i], hi[i], lam_r[i] = _half_interval_update(
                        ent[i], targets[i], lam_r[i], lo[i], hi[i],
                        config.lambda_bounds)
            ent, fr, _ = _mapping_fixed_point(
                ensemble, precoders, frozen, alpha, lam_r, fr)
            gap = float(np.max(np.where(
                (targets - config.tau <= ent) & (ent <= targets),
                0.0, np.minimum(np.abs(ent - targets),
                                np.abs(ent - (targets - config.tau))))))
            if gap < best_fine[0]:
                best_fine = (gap, ent, [f.copy() for f in fr], lam_r.copy())
        _, ent, fr, lam_r = best_fine
        return False, ent, fr, lam_r

    def single_pass(frozen, q_model, lam_v):
        """Entropies of one partition at frozen codebook and penalty model.

        With both frozen, the achieved entropies respond to the weights in
        single-sample steps, and the deployed mapping (same model, same
        weights) reproduces this exact partition.
        """
        lagrange = LagrangeWeights(lambdas=np.asarray(lam_v, dtype=float),
                                   level_frequencies=q_model)
        digits, _ = _mq_partition(ensemble, precoders, frozen, alpha, lagrange)
        total = ensemble.num_channels * ensemble.num_symbols
        freqs_sp = [c / total for c in _marginal_counts(digits, frozen.sizes)]
        return np.array([empirical_entropy(f) for f in freqs_sp]), freqs_sp

    def window_distance_sum(ent):
        inside = (targets - config.tau <= ent) & (ent <= targets)
        return float(np.sum(np.where(
            inside, 0.0, np.minimum(np.abs(ent - targets),
                                    np.abs(ent - (targets - config.tau))))))

    def compass(frozen, q_model, lam_init, step0=0.02):
        """Derivative-free polish of the weight vector on single-pass
        entropies; handles the cross-coupling between RUs that defeats
        per-coordinate brackets. Minimizes the summed window distance
        (any single RU's progress counts) over coordinate and diagonal
        moves."""
        lam_c = np.asarray(lam_init, dtype=float).copy()
        ent, fr = single_pass(frozen, q_model, lam_c)
        g_best = window_distance_sum(ent)
        best_state = (ent, fr, lam_c.copy())
        directions = [d for d in
                      (np.array(d) for d in np.ndindex(*(3,) * m_ru))
                      if np.any(d != 1)]
        step = step0
        for _ in range(160):
            if g_best == 0.0:
                return True, *best_state
            improved = False
            for d in directions:
                trial = best_state[2] + (d - 1.0) * step
                trial = np.minimum(np.maximum(trial, config.lambda_bounds[0]),
                                   config.lambda_bounds[1])
                if np.array_equal(trial, best_state[2]):
                    continue
                ent, fr = single_pass(frozen, q_model, trial)
                g = window_distance_sum(ent)
                if g < g_best - 1e-12:
                    g_best = g
                    best_state = (ent, fr, trial)
                    improved = True
                    break
            if not improved:
                step /= 2.0
                if step < 1e-6:
                    break
        return g_best == 0.0, *best_state

    # landing stage: steer the mapping weights on frozen candidate
    # codebooks until the single-pass entropies sit in the window; distinct
    # coarse candidates arise at different weight pairs, so one of them
    # usually spans the window even under strong cross-coupling. The plain
    # design is the final candidate: it always starts above the budget.
    pool = [(cand[0], cand[2].codebook, cand[2].frequencies, cand[4])
            for cand in candidates[:5]]
    plain = design_mq(ensemble, precoders, alpha, big_config,
                      init_codebook=fresh)
    traces.append(plain.trace)
    pool.append((window_gap(np.array([empirical_entropy(f)
                                      for f in plain.frequencies])),
                 plain.codebook, plain.frequencies, np.zeros(m_ru)))
    hit = False
    best_state = None  # (gap, codebook, q_model, lam, entropies, freqs)
    for entry_gap, frozen, fr0, lam0 in pool:
        lam_r = np.asarray(lam0, dtype=float)
        q_model = fr0
        if entry_gap > 0.1:
            _, _, q_model, lam_r = refine(frozen, fr0, lam_r)
        # the frequency model is itself a design state; if steering the
        # weights under the current model cannot reach the window, retry
        # under fixed-point models anchored across the weight space
        anchors = [(q_model, lam_r)]
        anchor_span = min(0.3, config.lambda_bounds[1])
        for lam_h in _halton(6, m_ru) * anchor_span:
            _, q_alt, _ = _mapping_fixed_point(
                ensemble, precoders, frozen, alpha, lam_h, fr0)
            anchors.append((q_alt, lam_h))
        for q_try, lam_try in anchors:
            got, ent_c, fr_c, lam_c = compass(frozen, q_try, lam_try)
            if not got:
                # scatter the weight vector over a low-discrepancy set and
                # polish from the best point; covers landscapes where the
                # local walk from lam_try stalls behind a barrier
                span = min(config.lambda_bounds[1],
                           2.0 * max(float(np.max(lam_try)), 0.1))
                pts = _halton(48, m_ru) * span
                g_sc, lam_sc = np.inf, lam_try
                for row in pts:
                    ent_s, _ = single_pass(frozen, q_try, row)
                    g = window_distance_sum(ent_s)
                    if g < g_sc:
                        g_sc, lam_sc = g, row
                got, ent_c, fr_c, lam_c = compass(frozen, q_try, lam_sc,
                                                  step0=0.01)
            gap_c = window_gap(ent_c)
            if best_state is None or gap_c < best_state[0]:
                best_state = (gap_c, frozen, q_try, lam_c, ent_c, fr_c)
            if got:
                hit = True
                break
        if hit:
            break
    _, codebook, q_model, lam, entropies, freqs = best_state
    if not hit:
        warnings.append(
            "entropy window not reached on all RUs; returning nearest "
            f"(H={np.round(entropies, 4)}, lambda={np.round(lam, 4)})")

    codebook = ProductCodebook(per_ru=[
        ScalarCodebook(levels=_snap_power(cb.levels, freqs[i], warnings))
        for i, cb in enumerate(codebook.per_ru)])
    return EntropyMqDesignResult(
        codebook=codebook, traces=traces, frequencies=freqs,
        entropies=entropies, lambdas=np.asarray(lam, dtype=float),
        in_window=hit, warnings=warnings,
        mapping_frequencies=[np.asarray(f, dtype=float) for f in q_model])


# ---------------------------------------------------------------------------
# diagnostics


def partition_stats(ensemble: TrainingEnsemble, precoder_rule,
                    codebook: ProductCodebook, alpha=None) -> PartitionStats:
    """Joint cell occupancy over the whole ensemble (testing aid)."""
    precoders = _resolve_precoders(ensemble, precoder_rule)
    alpha = np.ones(ensemble.num_users) if alpha is None \
        else np.asarray(alpha, dtype=np.float64).ravel()
    digits, _ = _mq_partition(ensemble, precoders, codebook, alpha)
    sizes = codebook.sizes
    flat = np.ravel_multi_index(
        tuple(digits[..., i].ravel() for i in range(codebook.num_rus)), sizes)
    values, counts = np.unique(flat, return_counts=True)
    joint = {int(v): int(c) for v, c in zip(values, counts)}
    marg = [c / (ensemble.num_channels * ensemble.num_symbols)
            for c in _marginal_counts(digits, sizes)]
    return PartitionStats(joint_counts=joint, marginals=marg,
                          total=ensemble.num_channels * ensemble.num_symbols)
