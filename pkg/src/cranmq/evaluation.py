"""Monte-Carlo link-level evaluation: effective SNR, spectral efficiency,
and the sweep recipes.

The effective SNR of user k divides the beamforming gain by the channel-
projected quantization error power,

    SNR_k = P * mean |h_k^H w_k|^2
            / (1 + P * mean |h_k^H (w_k s_k - xhat)|^2),

with means over a (channel x symbol) evaluation ensemble drawn from seeds
disjoint from every design seed. Spectral efficiency is
sum_k log2(1 + SNR_k). A recipe sweeps one model axis (fronthaul bits,
power, users, RUs, or angular spread) and evaluates a list of schemes at
each point; confidence half-widths come from ten channel batches.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .channel import OneRingParams, TrainingEnsemble, one_ring_correlation, \
    sample_channels, sample_symbols
from .codebooks import ProductCodebook, fixed_product_codebook
from .config import ConfigError, ExperimentConfig
from .design import (
    DesignConfig,
    design_mq,
    design_mq_entropy_constrained,
    design_ptpq,
    design_ptpq_entropy_constrained,
    precode_ensemble,
)
from .precoding import DcConfig, dc_precoder, estimate_quant_noise_cov, \
    matched_beamformer, joint_design
from .quantize import (
    LagrangeWeights,
    _joint_penalty_offset,
    _level_penalty,
    mq_map_batch,
    ptpq_map_batch,
    successive_block_map_batch,
)
from .rng import substream

__all__ = [
    "SnrReport",
    "CurveTable",
    "effective_snr",
    "spectral_efficiency",
    "run_experiment",
]

_T_FACTOR_CACHE: dict = {}


def _t_factor(num_batches: int) -> float:
    if num_batches not in _T_FACTOR_CACHE:
        _T_FACTOR_CACHE[num_batches] = float(
            stats.t.ppf(0.975, num_batches - 1)) if num_batches > 1 else 0.0
    return _T_FACTOR_CACHE[num_batches]


@dataclass
class SnrReport:
    """Per-user effective SNR and its signal/interference components."""

    snr: np.ndarray
    signal_power: np.ndarray
    interference_power: np.ndarray
    num_channels: int
    num_symbols: int


def effective_snr(channels, symbols, precoders, quantizer_rule, power,
                  num_batches: int = 0):
    """Monte-Carlo effective SNR over a channel/symbol ensemble.

    ``precoders`` is either a callable H -> W or a per-channel sequence;
    ``quantizer_rule`` maps (symbols, W, H) to quantized signals (n, M).
    With ``num_batches`` > 0, also returns per-batch spectral efficiencies
    (contiguous channel batches) for half-width estimation.
    """
    channels = np.asarray(channels, dtype=np.complex128)
    n_h, _, n_ue = channels.shape
    sig = np.empty((n_h, n_ue))
    interf = np.empty((n_h, n_ue))
    for m in range(n_h):
        h = channels[m]
        w = precoders(h) if callable(precoders) else precoders[m]
        xhat = quantizer_rule(symbols, w, h)
        hw = np.einsum("mk,mk->k", h.conj(), w)
        u = symbols * hw[None, :]
        proj = xhat @ h.conj()
        sig[m] = np.abs(hw) ** 2
        interf[m] = np.mean(np.abs(u - proj) ** 2, axis=0)

    def snr_of(rows):
        s = sig[rows].mean(axis=0)
        q = interf[rows].mean(axis=0)
        return power * s / (1.0 + power * q), s, q

    snr, s_all, q_all = snr_of(slice(None))
    report = SnrReport(snr=snr, signal_power=power * s_all,
                       interference_power=power * q_all,
                       num_channels=n_h, num_symbols=symbols.shape[0])
    if num_batches <= 0:
        return report
    bounds = np.linspace(0, n_h, num_batches + 1).astype(int)
    batch_se = np.empty(num_batches)
    for b in range(num_batches):
        rows = slice(bounds[b], bounds[b + 1])
        bsnr, _, _ = snr_of(rows)
        batch_se[b] = float(np.sum(np.log2(1.0 + bsnr)))
    return report, batch_se


def spectral_efficiency(report: SnrReport) -> float:
    """sum_k log2(1 + SNR_k) in bits/s/Hz."""
    return float(np.sum(np.log2(1.0 + report.snr)))


# ---------------------------------------------------------------------------
# scheme machinery


@dataclass
class SchemeSpec:
    family: str           # ptpq | mq | reference
    variant: str          # fixed | optimized | entropy | joint | noquant
    block_size: int | None = None


def parse_scheme(name: str) -> SchemeSpec:
    if name == "reference-noquant":
        return SchemeSpec(family="reference", variant="noquant")
    if name.startswith("mq-successive-d"):
        d = int(name[len("mq-successive-d"):])
        return SchemeSpec(family="mq", variant="fixed", block_size=d)
    family, _, variant = name.partition("-")
    if family in ("ptpq", "mq") and variant in ("fixed", "optimized",
                                                "entropy", "joint"):
        return SchemeSpec(family=family, variant=variant)
    raise ConfigError(f"unknown scheme '{name}'")


def _ptpq_rule(codebooks):
    def rule(symbols, precoder, channel):
        x = symbols @ precoder.T
        xhat = np.empty_like(x)
        for i, cb in enumerate(codebooks):
            xhat[:, i] = cb.levels[ptpq_map_batch(x[:, i], cb)]
        return xhat
    return rule


def _ec_ptpq_rule(codebooks, lagrange: LagrangeWeights):
    penalties = [_level_penalty(p, float(lam)) for p, lam in
                 zip(lagrange.level_frequencies, lagrange.lambdas)]

    def rule(symbols, precoder, channel):
        x = symbols @ precoder.T
        xhat = np.empty_like(x)
        for i, cb in enumerate(codebooks):
            cost = np.abs(x[:, i, None] - cb.levels[None, :]) ** 2 \
                + penalties[i][None, :]
            xhat[:, i] = cb.levels[np.argmin(cost, axis=1)]
        return xhat
    return rule


def _mq_rule(codebook: ProductCodebook, alpha, offset=None):
    def rule(symbols, precoder, channel):
        digits, _ = mq_map_batch(symbols, precoder, channel, codebook, alpha,
                                 offset=offset)
        return codebook.levels_at(digits)
    return rule


def _successive_rule(codebook: ProductCodebook, alpha, block_size: int):
    def rule(symbols, precoder, channel):
        digits = successive_block_map_batch(symbols, precoder, channel,
                                            codebook, alpha, block_size)
        return codebook.levels_at(digits)
    return rule


def _noquant_rule(symbols, precoder, channel):
    return symbols @ precoder.T


# ---------------------------------------------------------------------------
# experiment recipes


_SWEEP_AXES = {
    "sweep-B": "bits",
    "sweep-P": "power_db",
    "sweep-N": "num_users",
    "sweep-M": "num_rus",
    "sweep-Delta": "delta",
}


@dataclass
class CurveTable:
    """Per-point, per-scheme spectral efficiencies with half-widths."""

    recipe: str
    sweep_name: str
    sweep_values: list
    schemes: list
    se: np.ndarray
    halfwidth: np.ndarray
    seed: int
    config_echo: dict

    def rows(self):
        for p, value in enumerate(self.sweep_values):
            for s, scheme in enumerate(self.schemes):
                yield (self.recipe, self.sweep_name, value, scheme,
                       float(self.se[p, s]), float(self.halfwidth[p, s]),
                       self.seed)

    def to_dict(self) -> dict:
        return {
            "recipe": self.recipe,
            "sweep_name": self.sweep_name,
            "sweep_values": list(self.sweep_values),
            "schemes": list(self.schemes),
            "spectral_efficiency": self.se.tolist(),
            "halfwidth": self.halfwidth.tolist(),
            "seed": self.seed,
            "config": self.config_echo,
        }

    def column(self, scheme: str) -> np.ndarray:
        return self.se[:, self.schemes.index(scheme)]


def _point_params(config: ExperimentConfig, value):
    params = {
        "bits": int(config.bits),
        "power_db": float(config.power_db),
        "num_users": int(config.num_users),
        "num_rus": int(config.num_rus),
        "delta": float(config.delta),
    }
    axis = _SWEEP_AXES[config.recipe]
    params[axis] = int(value) if axis in ("bits", "num_users", "num_rus") \
        else float(value)
    return params


def _design_config(config: ExperimentConfig, m_ru: int, bits: int) -> DesignConfig:
    return DesignConfig(rate_bits=(bits,) * m_ru,
                        epsilon=config.epsilon,
                        tau=config.tau,
                        expanded_rate_bits=(bits + 1,) * m_ru,
                        lambda_bounds=(config.lambda_lo, config.lambda_hi),
                        max_outer_iters=config.max_design_iters)


def _joint_eval_precoders(channels, codebook, alpha, dc_cfg, omega_symbols,
                          rounds, family):
    """Per-channel precoders for fresh channels under a trained codebook.

    Re-runs the joint inner loop online: precoder at zero noise, noise
    covariance from training symbols, precoder again.
    """
    mapper = None
    if family == "ptpq":
        def mapper(s, w, h, cb, a):
            x = s @ w.T
            return np.stack([ptpq_map_batch(x[:, i], b)
                             for i, b in enumerate(cb.per_ru)], axis=1)
    out = []
    for h in channels:
        omega = None
        w = dc_precoder(h, None, dc_cfg).precoder
        for _ in range(max(0, rounds - 1)):
            omega = estimate_quant_noise_cov(omega_symbols, w, h, codebook,
                                             alpha, mapper=mapper)
            loads = np.real(np.diag(omega))
            cap = 0.9 * dc_cfg.gamma
            if loads.max() > cap:
                omega = omega * (cap / loads.max())
            w = dc_precoder(h, omega, dc_cfg).precoder
        out.append(w)
    return out


def evaluate_point(config: ExperimentConfig, point_idx: int) -> dict:
    """Spectral efficiency and half-width of every scheme at one sweep point."""
    value = config.sweep[point_idx]
    params = _point_params(config, value)
    m_ru, n_ue = params["num_rus"], params["num_users"]
    bits = params["bits"]
    power = 10.0 ** (params["power_db"] / 10.0)
    alpha = None if config.alpha is None \
        else np.asarray(config.alpha, dtype=float)[:n_ue]

    corr = one_ring_correlation(OneRingParams(
        theta=config.theta, delta=params["delta"], num_antennas=m_ru))
    corrs = [corr] * n_ue
    design_ens = TrainingEnsemble(
        channels=sample_channels(corrs, config.design_channels,
                                 substream(config.seed, "design-h",
                                           config.recipe, point_idx)),
        symbols=sample_symbols(n_ue, config.design_symbols,
                               substream(config.seed, "design-s",
                                         config.recipe, point_idx)))
    eval_channels = sample_channels(corrs, config.eval_channels,
                                    substream(config.seed, "eval-h",
                                              config.recipe, point_idx))
    eval_symbols = sample_symbols(n_ue, config.eval_symbols,
                                  substream(config.seed, "eval-s",
                                            config.recipe, point_idx))
    omega_symbols = sample_symbols(n_ue, config.omega_symbols,
                                   substream(config.seed, "omega-s",
                                             config.recipe, point_idx))

    sep_dc = DcConfig(power=power, gamma=config.gamma, r_max=config.r_max)
    full_dc = DcConfig(power=power, gamma=1.0, r_max=config.r_max)
    if config.precoding == "matched":
        design_pre = [matched_beamformer(h, config.gamma)
                      for h in design_ens.channels]
        eval_pre = [matched_beamformer(h, config.gamma)
                    for h in eval_channels]
    else:
        design_pre = [dc_precoder(h, None, sep_dc).precoder
                      for h in design_ens.channels]
        eval_pre = [dc_precoder(h, None, sep_dc).precoder
                    for h in eval_channels]

    design_cfg = _design_config(config, m_ru, bits)
    cache: dict = {}

    def fixed_codebook() -> ProductCodebook:
        if "fixed" not in cache:
            x = precode_ensemble(design_ens, design_pre)
            cache["fixed"] = fixed_product_codebook(x, (bits,) * m_ru)
        return cache["fixed"]

    results = {}
    for scheme in config.schemes:
        spec = parse_scheme(scheme)
        precoders = eval_pre
        if spec.family == "reference":
            if "ref-pre" not in cache:
                cache["ref-pre"] = [dc_precoder(h, None, full_dc).precoder
                                    for h in eval_channels]
            precoders = cache["ref-pre"]
            rule = _noquant_rule
        elif spec.variant == "fixed":
            codebook = fixed_codebook()
            if spec.family == "ptpq":
                rule = _ptpq_rule(codebook.per_ru)
            elif spec.block_size is not None:
                rule = _successive_rule(codebook, alpha, spec.block_size)
            else:
                rule = _mq_rule(codebook, alpha)
        elif spec.variant == "optimized":
            key = (spec.family, "optimized")
            if key not in cache:
                if spec.family == "ptpq":
                    cache[key] = design_ptpq(design_ens, design_pre, design_cfg)
                else:
                    cache[key] = design_mq(design_ens, design_pre, alpha,
                                           design_cfg)
            res = cache[key]
            rule = _ptpq_rule(res.codebooks) if spec.family == "ptpq" \
                else _mq_rule(res.codebook, alpha)
        elif spec.variant == "entropy":
            key = (spec.family, "entropy")
            if key not in cache:
                if spec.family == "ptpq":
                    cache[key] = design_ptpq_entropy_constrained(
                        design_ens, design_pre, design_cfg)
                else:
                    cache[key] = design_mq_entropy_constrained(
                        design_ens, design_pre, alpha, design_cfg)
            res = cache[key]
            if spec.family == "ptpq":
                rule = _ec_ptpq_rule(res.codebooks, res.lagrange_weights())
            else:
                offset = _joint_penalty_offset(res.codebook,
                                               res.lagrange_weights())
                rule = _mq_rule(res.codebook, alpha, offset=offset)
        elif spec.variant == "joint":
            key = (spec.family, "joint")
            if key not in cache:
                jd = joint_design(design_ens, alpha, design_cfg, full_dc,
                                  quantizer=spec.family)
                pre = _joint_eval_precoders(
                    eval_channels, jd.codebook, alpha, full_dc,
                    omega_symbols, config.joint_eval_rounds, spec.family)
                cache[key] = (jd, pre)
            jd, precoders = cache[key]
            rule = _ptpq_rule(jd.codebook.per_ru) if spec.family == "ptpq" \
                else _mq_rule(jd.codebook, alpha)
        else:
            raise ConfigError(f"unhandled scheme '{scheme}'")

        report, batch_se = effective_snr(eval_channels, eval_symbols,
                                         precoders, rule, power,
                                         num_batches=config.num_batches)
        se = spectral_efficiency(report)
        hw = _t_factor(config.num_batches) \
            * float(np.std(batch_se, ddof=1)) / np.sqrt(config.num_batches)
        results[scheme] = (se, hw)
    return results


def run_experiment(config: ExperimentConfig) -> CurveTable:
    """Evaluate every scheme across the recipe's sweep points.

    Deterministic given (config, seed): every point derives its ensembles
    from named substreams, so results are identical for any worker count.
    """
    n_points = len(config.sweep)
    results = [None] * n_points
    if config.workers > 1 and n_points > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = {pool.submit(evaluate_point, config, p): p
                       for p in range(n_points)}
            for fut, p in futures.items():
                results[p] = fut.result()
    else:
        for p in range(n_points):
            results[p] = evaluate_point(config, p)

    se = np.empty((n_points, len(config.schemes)))
    hw = np.empty_like(se)
    for p in range(n_points):
        for s, scheme in enumerate(config.schemes):
            se[p, s], hw[p, s] = results[p][scheme]
    return CurveTable(recipe=config.recipe,
                      sweep_name=_SWEEP_AXES[config.recipe],
                      sweep_values=list(config.sweep),
                      schemes=list(config.schemes),
                      se=se, halfwidth=hw, seed=config.seed,
                      config_echo=asdict(config))
