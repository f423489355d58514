"""Multivariate fronthaul quantization for the downlink of a Cloud-RAN.

The central unit of a C-RAN precodes user symbols onto M radio units and
must ship each RU's complex baseband sample over a B_i-bit fronthaul link.
This package implements per-link quantization (PtPQ), joint multivariate
quantization (MQ) that shapes the quantization error in space, offline
codebook design, joint precoding/quantization optimization, reduced-
complexity and entropy-constrained variants, and link- and system-level
Monte-Carlo evaluation harnesses.
"""

from .channel import (
    OneRingParams,
    TrainingEnsemble,
    make_training_ensemble,
    one_ring_correlation,
    sample_channels,
    sample_symbols,
)
from .codebooks import (
    ProductCodebook,
    ScalarCodebook,
    fixed_product_codebook,
    uniform_grid_codebook,
)
from .quantize import (
    EvalCounter,
    LagrangeWeights,
    entropy_penalized_mq_map,
    entropy_penalized_ptpq_map,
    mq_map,
    mq_map_batch,
    ptpq_map,
    ptpq_map_batch,
    successive_block_map,
    successive_block_map_batch,
    weighted_projection_distortion,
)
from .rng import substream

__all__ = [
    "OneRingParams",
    "TrainingEnsemble",
    "make_training_ensemble",
    "one_ring_correlation",
    "sample_channels",
    "sample_symbols",
    "ProductCodebook",
    "ScalarCodebook",
    "fixed_product_codebook",
    "uniform_grid_codebook",
    "EvalCounter",
    "LagrangeWeights",
    "entropy_penalized_mq_map",
    "entropy_penalized_ptpq_map",
    "mq_map",
    "mq_map_batch",
    "ptpq_map",
    "ptpq_map_batch",
    "successive_block_map",
    "successive_block_map_batch",
    "weighted_projection_distortion",
    "substream",
]

__version__ = "0.1.0"
