"""SNR theory for conventional, counts-only and inter-photon pixels plus the Monte Carlo harness.

SNR is ``10 log10(flux^2 / MSE)`` in decibels.  Dark counts enter the SPAD
models as a flux bias ``dark_rate / q``; the conventional pixel uses the
standard shot, dark and read-noise model.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (
    ConventionalConfig,
    CurveKind,
    DomainError,
    EstimatorKind,
    IpSpadError,
    PixelConfig,
    SnrCurve,
)
from . import estimate as est
from .sim import SimSeed, simulate_conventional, simulate_stream

SNR_FLOOR_DB = -100.0
SNR_CAP_DB = 300.0


def _flux_array(flux) -> np.ndarray:
    flux = np.asarray(flux, dtype=float)
    if np.any(~(flux > 0)):
        raise DomainError("flux must be > 0")
    return flux


def _to_db(flux: np.ndarray, mse: np.ndarray):
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(flux**2 / mse)
    snr = np.clip(np.nan_to_num(snr, nan=SNR_FLOOR_DB, posinf=SNR_CAP_DB), SNR_FLOOR_DB, SNR_CAP_DB)
    return snr[()] if snr.ndim == 0 else snr


def shot_variance(flux, config: PixelConfig):
    q, tau, T = config.quantum_efficiency, config.dead_time, config.exposure_time
    return flux * (q * flux * tau + 1) / (q * T)


def count_quantization_variance(flux, config: PixelConfig):
    q, tau, T = config.quantum_efficiency, config.dead_time, config.exposure_time
    return (1 + q * flux * tau) ** 4 / (12 * q**2 * T**2)


def time_quantization_variance(flux, config: PixelConfig):
    q, tau, T = config.quantum_efficiency, config.dead_time, config.exposure_time
    a = q * flux * config.time_quantization
    return (1 + q * flux * tau + a) ** 2 * (1 + a) ** 2 / (12 * q**2 * T**2)


def dark_bias(config) -> float:
    return config.dark_rate / config.quantum_efficiency


def snr_theory_ipspad(flux, config: PixelConfig):
    flux = _flux_array(flux)
    mse = shot_variance(flux, config) + dark_bias(config) ** 2
    if config.time_quantization > 0:
        mse = mse + time_quantization_variance(flux, config)
    return _to_db(flux, mse)


def snr_theory_pfspad(flux, config: PixelConfig):
    flux = _flux_array(flux)
    mse = shot_variance(flux, config) + count_quantization_variance(flux, config) + dark_bias(config) ** 2
    return _to_db(flux, mse)


def snr_theory_conventional(flux, config: ConventionalConfig):
    flux = _flux_array(flux)
    q, T = config.quantum_efficiency, config.exposure_time
    mse = (q * flux * T + config.dark_rate * T + config.read_noise_sigma**2) / (q * T) ** 2
    snr = np.where(q * flux * T < config.full_well_capacity, _to_db(flux, mse), SNR_FLOOR_DB)
    return snr[()] if snr.ndim == 0 else snr


def theory_curve(flux_grid, config, kind: EstimatorKind) -> SnrCurve:
    flux_grid = np.asarray(flux_grid, dtype=float)
    if kind is EstimatorKind.PfSpadCounts:
        snr = snr_theory_pfspad(flux_grid, config)
    elif kind is EstimatorKind.ConventionalLinear:
        snr = snr_theory_conventional(flux_grid, config)
    else:
        snr = snr_theory_ipspad(flux_grid, config)
    return SnrCurve(flux_grid, snr, CurveKind.Theoretical, f"theory {kind.value} {config.digest()}")


# -- Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    flux_grid: tuple
    trials_per_point: int
    estimator_kind: EstimatorKind
    config: PixelConfig | ConventionalConfig
    master_seed: int = 0

    def __post_init__(self):
        grid = tuple(float(f) for f in self.flux_grid)
        object.__setattr__(self, "flux_grid", grid)
        if self.trials_per_point < 2:
            raise ValueError("trials_per_point must be >= 2")
        if not grid or min(grid) < 1e2 or max(grid) > 1e16:
            raise ValueError("flux grid must be non-empty and within [1e2, 1e16]")
        conventional = self.estimator_kind is EstimatorKind.ConventionalLinear
        if conventional != isinstance(self.config, ConventionalConfig):
            raise ValueError("conventional estimator requires a ConventionalConfig and vice versa")


def estimate_once(flux: float, spec: SweepSpec, seed: SimSeed) -> float:
    """Simulate one exposure and return the flux estimate."""
    kind = spec.estimator_kind
    cfg = spec.config
    if kind is EstimatorKind.ConventionalLinear:
        return est.conventional_estimate(simulate_conventional(flux, cfg, seed), cfg).flux
    stream = simulate_stream(flux, cfg, seed)
    q, tau, T = cfg.quantum_efficiency, cfg.dead_time, cfg.exposure_time
    if kind is EstimatorKind.IpSpadMle:
        return est.ipspad_mle(stream, q, tau).flux
    if kind is EstimatorKind.IpSpadFullMle:
        return est.ipspad_full_mle(stream, q, tau, T).flux
    if kind is EstimatorKind.PfSpadCounts:
        return est.pfspad_counts(stream.n_detections, q, tau, T).flux
    if kind is EstimatorKind.RiseTimeCorrectedMle:
        profile = est.RiseProfileSpec(q, cfg.rise_time)
        return est.risetime_corrected_mle(stream, profile, tau, T).flux
    if kind is EstimatorKind.FirstPhoton:
        if stream.n_detections == 0:
            raise est.InsufficientPhotons("no photon detected")
        return est.first_photon_estimate(stream.recorded[0], q).flux
    raise ValueError(f"unsupported estimator {kind}")


def snr_from_estimates(flux: float, estimates) -> float:
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size == 0:
        return SNR_FLOOR_DB
    with np.errstate(over="ignore", invalid="ignore"):
        mse = np.mean((flux - estimates) ** 2)
    return float(_to_db(np.float64(flux), np.float64(mse)))


def _sweep_point(args):
    index, flux, spec, estimator = args
    values = []
    excluded = 0
    for trial in range(spec.trials_per_point):
        seed = SimSeed(spec.master_seed, index, trial)
        try:
            values.append(estimator(flux, spec, seed))
        except IpSpadError:
            excluded += 1
    return snr_from_estimates(flux, values), excluded / spec.trials_per_point


def monte_carlo_snr(sweep: SweepSpec, threads: int = 1, estimator=estimate_once) -> SnrCurve:
    """Empirical SNR per grid flux from independent simulated exposures.

    Trials whose estimator raises a domain error (e.g. fewer than two photons)
    are dropped; the dropped fraction is kept in ``excluded_fraction``.
    ``estimator(flux, spec, seed)`` can be swapped out for testing.
    """
    jobs = [(i, f, sweep, estimator) for i, f in enumerate(sweep.flux_grid)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(job) for job in jobs]
    snr = np.array([r[0] for r in results])
    excluded = np.array([r[1] for r in results])
    label = f"montecarlo {sweep.estimator_kind.value} {sweep.config.digest()} seed={sweep.master_seed}"
    return SnrCurve(np.array(sweep.flux_grid), snr, CurveKind.MonteCarlo, label, excluded)


# -- first photon ------------------------------------------------------------


def first_photon_samples(flux: float, exposure: float, q: float, trials: int, seed: int = 0) -> np.ndarray:
    """First-photon times of fixed exposures that caught at least one photon."""
    rate = q * flux
    if not rate > 0:
        raise DomainError("flux must be > 0")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xF1])))
    accept = -math.expm1(-rate * exposure)
    kept: list[np.ndarray] = []
    total = 0
    while total < trials:
        batch = int(min(50_000_000, math.ceil((trials - total) / accept * 1.1) + 100))
        y = rng.standard_exponential(batch) / rate
        y = y[y <= exposure]
        kept.append(y)
        total += y.size
    return np.concatenate(kept)[:trials]


def first_photon_uniformity(
    flux: float,
    exposure: float,
    q: float,
    trials: int,
    seed: int = 0,
    require_low_flux: bool = True,
) -> float:
    """KS p-value of fixed-exposure first-photon times against ``U[0, T]``.

    The uniform limit holds for ``q*flux*T << 1``; with ``require_low_flux``
    inputs above 0.01 raise :class:`DomainError`.
    """
    if require_low_flux and q * flux * exposure > 0.01 * (1 + 1e-12):
        raise DomainError(f"q*flux*T = {q * flux * exposure:g} exceeds 0.01")
    samples = first_photon_samples(flux, exposure, q, trials, seed)
    return float(stats.kstest(samples, stats.uniform(loc=0, scale=exposure).cdf).pvalue)


def dynamic_range(curve: SnrCurve, threshold_db: float = 20.0) -> float:
    """Widest flux ratio of a contiguous run of grid points at or above ``threshold_db``."""
    above = curve.snr_db >= threshold_db
    best = 0.0
    start = None
    for i, ok in enumerate(np.append(above, False)):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            best = max(best, curve.flux_grid[i - 1] / curve.flux_grid[start])
            start = None
    return float(best)


def upper_flux_at(curve: SnrCurve, threshold_db: float = 20.0) -> float:
    """Largest grid flux with SNR at or above the threshold (0 if none)."""
    idx = np.nonzero(curve.snr_db >= threshold_db)[0]
    return float(curve.flux_grid[idx[-1]]) if idx.size else 0.0
