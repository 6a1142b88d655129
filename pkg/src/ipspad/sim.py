"""Exact simulation of a free-running single-photon pixel with dead-time.

After every dead-time (and at the start of the exposure) the pixel waits an
exponentially distributed time-of-darkness before the next avalanche; the
exposure ends the sequence.  Non-idealities layered on top of the ideal
process: Gaussian timestamp jitter, TDC quantization (recorded stamps only,
the dead-time clock runs on true times), dark counts, a dead-time that drifts
linearly with the number of detections and a linear gate rise-time ramp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConventionalConfig, PhotonStream, PixelConfig

# timing jitter of the reference hardware, ~200 ps
HARDWARE_JITTER_SIGMA = 200e-12


@dataclass(frozen=True)
class SimSeed:
    """Deterministic RNG substream for one pixel (and one trial of it)."""

    master_seed: int
    pixel_index: int = 0
    trial: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.pixel_index < 0 or self.trial < 0:
            raise ValueError("pixel_index and trial must be >= 0")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.master_seed, self.pixel_index, self.trial])

    def generators(self, n: int) -> list[np.random.Generator]:
        # Philox is counter-based; spawned keys make the substreams independent
        return [np.random.Generator(np.random.Philox(s)) for s in self.seed_sequence().spawn(n)]


def rise_profile(t, config: PixelConfig):
    """Quantum efficiency ``t`` seconds after a dead-time ends (linear ramp)."""
    q = config.quantum_efficiency
    t = np.asarray(t, dtype=float)
    if config.rise_time == 0:
        out = np.where(t >= 0, q, 0.0)
    else:
        out = np.clip(t / config.rise_time, 0.0, 1.0) * q
    return out[()] if out.ndim == 0 else out


def ramp_integral(x, q: float, rise_time: float):
    """Closed-form integral of the ramped efficiency from 0 to ``x``."""
    x = np.asarray(x, dtype=float)
    if rise_time == 0:
        out = q * x
    else:
        out = np.where(x < rise_time, q * x * x / (2 * rise_time), q * (x - rise_time / 2))
    return out[()] if out.ndim == 0 else out


def _darkness_times(rng: np.random.Generator, n: int, rate: float, rise_time: float) -> np.ndarray:
    e = rng.standard_exponential(n)
    if rise_time == 0:
        return e / rate
    # invert the cumulative hazard rate*int_0^y q(t)/q dt of the linear ramp
    knee = rate * rise_time / 2
    return np.where(e < knee, np.sqrt(2 * rise_time * e / rate), e / rate + rise_time / 2)


def expected_counts(flux, config: PixelConfig):
    """Renewal-theory mean number of detections in one exposure."""
    rate = config.quantum_efficiency * np.asarray(flux, dtype=float) + config.dark_rate
    return rate * (config.exposure_time + config.dead_time) / (1 + rate * config.dead_time)


def count_variance(flux, config: PixelConfig):
    rate = config.quantum_efficiency * np.asarray(flux, dtype=float) + config.dark_rate
    return rate * (config.exposure_time + config.dead_time) / (1 + rate * config.dead_time) ** 3


def drift_for_total_variation(fraction: float, detections: float, dead_time: float) -> float:
    """Per-detection drift giving a total dead-time change of ``fraction``."""
    return fraction * dead_time / detections


def _arrival_times(rng, rate: float, config: PixelConfig):
    T = config.exposure_time
    tau = config.dead_time
    drift = config.drift_coefficient
    cap = config.max_detections
    mean = rate * (T + tau) / (1 + rate * tau)
    size = int(min(cap + 1, math.ceil(mean + 6 * math.sqrt(mean) + 16)))
    y = _darkness_times(rng, size, rate, config.rise_time)
    while True:
        k = np.arange(y.size, dtype=float)
        # offsets as one product instead of a running sum keep X_N - X_1 - (N-1)tau accurate
        x = np.cumsum(y) + k * tau + drift * k * (k + 1) / 2
        n = int(np.searchsorted(x, T, side="left"))
        if n < y.size or y.size > cap:
            break
        extra = max(16, y.size)
        y = np.concatenate([y, _darkness_times(rng, extra, rate, config.rise_time)])
    n = min(n, cap)
    x = x[:n]
    dead = tau + drift * np.arange(1, n + 1, dtype=float)
    return x, dead


def record(true_times: np.ndarray, config: PixelConfig, rng: np.random.Generator):
    """Jitter then quantize true times the way the timing electronics would."""
    recorded = true_times
    reordered = False
    if config.jitter_sigma > 0 and true_times.size:
        recorded = true_times + rng.normal(0.0, config.jitter_sigma, true_times.size)
        if np.any(np.diff(recorded) < 0):
            recorded = np.sort(recorded)
            reordered = True
        recorded = np.clip(recorded, 0.0, np.nextafter(config.exposure_time, 0.0))
    if config.time_quantization > 0:
        recorded = np.floor(recorded / config.time_quantization) * config.time_quantization
    return recorded, reordered


def simulate_stream(flux: float, config: PixelConfig, seed: SimSeed) -> PhotonStream:
    """Simulate one exposure of a pixel under constant photon flux."""
    if not flux >= 0:
        raise ValueError(f"flux must be >= 0, got {flux}")
    rate = config.quantum_efficiency * flux + config.dark_rate
    arrivals_rng, jitter_rng = seed.generators(2)
    if rate == 0:
        x = np.empty(0)
        dead = np.empty(0)
    else:
        x, dead = _arrival_times(arrivals_rng, rate, config)
    recorded, reordered = record(x, config, jitter_rng)
    return PhotonStream(
        detections=x,
        recorded=recorded,
        exposure=config.exposure_time,
        config=config,
        effective_dead_times=dead,
        reordered=reordered,
    )


def simulate_conventional(flux: float, config: ConventionalConfig, seed: SimSeed) -> int:
    """Electron count of a conventional pixel: Poisson signal, Gaussian read noise, full-well clip."""
    if not flux >= 0:
        raise ValueError(f"flux must be >= 0, got {flux}")
    (rng,) = seed.generators(1)
    mean = (config.quantum_efficiency * flux + config.dark_rate) * config.exposure_time
    electrons = int(rng.poisson(min(mean, 1e15)))
    read = int(round(rng.normal(0.0, config.read_noise_sigma))) if config.read_noise_sigma > 0 else 0
    return int(min(max(electrons + read, 0), config.full_well_capacity))
