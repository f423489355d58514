"""Quantization codebook containers and the fixed uniform-grid baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarCodebook",
    "ProductCodebook",
    "uniform_grid_codebook",
    "fixed_product_codebook",
]


@dataclass
class ScalarCodebook:
    """One fronthaul link's quantization levels: 2**rate_bits complex points.

    The per-RU power constraint (usage-weighted level power <= 1) is a
    property of how the codebook is used; it is enforced by the design
    routines and checked there against training frequencies.
    """

    levels: np.ndarray

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.complex128).ravel()
        n = self.levels.size
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"codebook size must be a power of two >= 2, got {n}")
        if not np.isfinite(self.levels).all():
            raise ValueError("codebook levels must be finite")

    @property
    def size(self) -> int:
        return self.levels.size

    @property
    def rate_bits(self) -> int:
        return int(self.levels.size).bit_length() - 1


@dataclass
class ProductCodebook:
    """Per-RU scalar codebooks; the joint codebook is their Cartesian product."""

    per_ru: list

    def __post_init__(self):
        if len(self.per_ru) < 1:
            raise ValueError("need at least one RU codebook")
        self.per_ru = list(self.per_ru)

    @property
    def num_rus(self) -> int:
        return len(self.per_ru)

    @property
    def sizes(self) -> tuple:
        return tuple(cb.size for cb in self.per_ru)

    @property
    def rate_bits(self) -> tuple:
        return tuple(cb.rate_bits for cb in self.per_ru)

    @property
    def joint_size(self) -> int:
        n = 1
        for cb in self.per_ru:
            n *= cb.size
        return n

    def levels_at(self, indices) -> np.ndarray:
        """Joint codeword(s) for 0-based per-RU index vector(s).

        ``indices`` is (M,) or (batch, M); returns matching complex array.
        """
        idx = np.asarray(indices, dtype=np.int64)
        squeeze = idx.ndim == 1
        idx = np.atleast_2d(idx)
        if idx.shape[1] != self.num_rus:
            raise ValueError("index vector length must equal the RU count")
        out = np.empty(idx.shape, dtype=np.complex128)
        for i, cb in enumerate(self.per_ru):
            out[:, i] = cb.levels[idx[:, i]]
        return out[0] if squeeze else out


def uniform_grid_codebook(samples: np.ndarray, bits: int) -> ScalarCodebook:
    """Fixed baseline: 2**bits uniformly spaced levels over the sample range.

    The complex plane is covered by a 2**ceil(bits/2) x 2**floor(bits/2)
    rectangular grid of cell midpoints; the dynamic range per real/imaginary
    component comes from the training samples.
    """
    samples = np.asarray(samples).ravel()
    if samples.size == 0:
        raise ValueError("need training samples to set the dynamic range")
    if bits < 1:
        raise ValueError("bits must be >= 1")
    n_re = 1 << ((bits + 1) // 2)
    n_im = 1 << (bits // 2)

    def midpoints(lo, hi, n):
        if hi <= lo:
            hi = lo + 1e-12
        edges = np.linspace(lo, hi, n + 1)
        return (edges[:-1] + edges[1:]) / 2.0

    re = midpoints(samples.real.min(), samples.real.max(), n_re)
    im = midpoints(samples.imag.min(), samples.imag.max(), n_im)
    grid = re[:, None] + 1j * im[None, :]
    return ScalarCodebook(levels=grid.ravel())


def fixed_product_codebook(precoded_samples: np.ndarray, bits) -> ProductCodebook:
    """Per-RU uniform-grid codebooks from precoded training samples (n, M)."""
    precoded_samples = np.asarray(precoded_samples)
    if precoded_samples.ndim != 2:
        raise ValueError("precoded samples must have shape (n, M)")
    m_ru = precoded_samples.shape[1]
    bits = [int(b) for b in (bits if np.ndim(bits) else [bits] * m_ru)]
    if len(bits) != m_ru:
        raise ValueError("need one bit budget per RU")
    return ProductCodebook(per_ru=[
        uniform_grid_codebook(precoded_samples[:, i], bits[i]) for i in range(m_ru)
    ])
