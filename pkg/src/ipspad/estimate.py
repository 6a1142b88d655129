"""Flux estimators for single-photon pixels and dead-time calibration."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import (
    ConventionalConfig,
    CountOutOfRange,
    EstimatorKind,
    FluxEstimate,
    InsufficientPhotons,
    InvalidTimestamp,
    PhotonStream,
    interphoton_times,
    max_detections,
)
from .sim import ramp_integral

EULER_GAMMA = 0.57721566490153286061

# denominator floor when timestamps are continuous
CONTINUOUS_FLOOR = 1e-15


class RiseShape(enum.Enum):
    Step = "step"
    LinearRamp = "linear"


@dataclass(frozen=True)
class RiseProfileSpec:
    quantum_efficiency: float
    rise_time: float = 0.0
    shape: RiseShape = RiseShape.LinearRamp

    def integral(self, x):
        """Integral of q(t) from 0 to ``x``."""
        if self.shape is RiseShape.Step:
            return self.quantum_efficiency * np.asarray(x, dtype=float)
        return ramp_integral(x, self.quantum_efficiency, self.rise_time)


def denominator_floor(time_quantization: float) -> float:
    return time_quantization / 2 if time_quantization > 0 else CONTINUOUS_FLOOR


def ipspad_mle(
    stream: PhotonStream, q: float, dead_time: float, floor: float | None = None
) -> FluxEstimate:
    """Inter-photon estimate from the first and last recorded timestamps.

    ``(N - 1) / (q * (R_N - R_1 - (N - 1) * dead_time))``.  The denominator is
    floored at half a TDC bin (or 1 fs for continuous stamps); ``clamped``
    reports when the floor was used.
    """
    n = stream.n_detections
    if n < 2:
        raise InsufficientPhotons(f"need at least 2 detections, got {n}")
    if floor is None:
        floor = denominator_floor(stream.config.time_quantization)
    r = stream.recorded
    darkness = (r[-1] - r[0]) - (n - 1) * dead_time
    clamped = bool(darkness < floor)
    darkness = max(darkness, floor)
    return FluxEstimate(
        flux=(n - 1) / (q * darkness),
        estimator_kind=EstimatorKind.IpSpadMle,
        n_detections=n,
        darkness_total=float(darkness),
        clamped=clamped,
    )


def darkness_times(stream: PhotonStream, dead_time: float) -> np.ndarray:
    """All times-of-darkness of the detected photons, the first wait included."""
    if stream.n_detections == 0:
        return np.empty(0)
    return np.concatenate([[max(stream.recorded[0], 0.0)], interphoton_times(stream, dead_time)])


def _armed_time(stream: PhotonStream, dead_time: float, exposure: float) -> float:
    n = stream.n_detections
    return max(float(np.sum(darkness_times(stream, dead_time))), exposure - n * dead_time)


def ipspad_full_mle(
    stream: PhotonStream, q: float, dead_time: float, exposure: float, floor: float | None = None
) -> FluxEstimate:
    """Exact maximum-likelihood estimate including the truncated final wait.

    ``N / (q * max(sum(Y), T - N * dead_time))`` where the sum runs over every
    time-of-darkness including the initial wait ``X_1``.
    """
    n = stream.n_detections
    if n < 1:
        raise InsufficientPhotons("need at least 1 detection")
    if floor is None:
        floor = denominator_floor(stream.config.time_quantization)
    armed = _armed_time(stream, dead_time, exposure)
    clamped = armed < floor
    armed = max(armed, floor)
    return FluxEstimate(
        flux=n / (q * armed),
        estimator_kind=EstimatorKind.IpSpadFullMle,
        n_detections=n,
        darkness_total=armed,
        clamped=clamped,
    )


def log_likelihood(flux, stream: PhotonStream, q: float, dead_time: float, exposure: float):
    """Log-likelihood of the flux given every time-of-darkness of a stream."""
    flux = np.asarray(flux, dtype=float)
    n = stream.n_detections
    armed = _armed_time(stream, dead_time, exposure)
    return -q * flux * armed + n * np.log(q * flux)


def grid_search_flux(
    stream: PhotonStream,
    q: float,
    dead_time: float,
    exposure: float,
    lo: float = 1e2,
    hi: float = 1e12,
    points: int = 100_000,
) -> tuple[float, float]:
    """Brute-force maximiser of :func:`log_likelihood` on a log grid.

    Returns ``(best_flux, log10_step)``.
    """
    grid = np.logspace(math.log10(lo), math.log10(hi), points)
    ll = log_likelihood(grid, stream, q, dead_time, exposure)
    return float(grid[int(np.argmax(ll))]), (math.log10(hi) - math.log10(lo)) / (points - 1)


def pfspad_counts(n: int, q: float, dead_time: float, exposure: float) -> FluxEstimate:
    """Counts-only estimate obtained by inverting the renewal mean count."""
    cap = max_detections(exposure, dead_time)
    if n < 0 or n > cap:
        raise CountOutOfRange(f"count {n} outside [0, {cap}]")
    armed = exposure + dead_time - n * dead_time
    if armed <= 0:
        return FluxEstimate(math.inf, EstimatorKind.PfSpadCounts, n, 0.0, saturated=True)
    return FluxEstimate(n / (q * armed), EstimatorKind.PfSpadCounts, n, armed)


def first_photon_estimate(y1: float, q: float) -> FluxEstimate:
    if not y1 > 0:
        raise InvalidTimestamp(f"first-photon wait must be > 0, got {y1}")
    return FluxEstimate(1.0 / (q * y1), EstimatorKind.FirstPhoton, 1, y1)


def log_timestamp_debias(log_estimate):
    """Remove the Euler-Mascheroni offset from a mean log waiting time.

    The mean of ``log(Y)`` for exponential waits is ``-log(rate) - gamma``;
    adding gamma leaves an unbiased estimate of ``-log(rate)``.
    """
    return np.asarray(log_estimate, dtype=float)[()] + EULER_GAMMA


def risetime_corrected_mle(
    stream: PhotonStream, profile: RiseProfileSpec, dead_time: float, exposure: float
) -> FluxEstimate:
    """Maximum-likelihood estimate with a time-varying efficiency after each dead-time."""
    n = stream.n_detections
    if n < 1:
        raise InsufficientPhotons("need at least 1 detection")
    if profile.shape is RiseShape.Step:
        # must agree bit-for-bit with the step-efficiency estimator
        full = ipspad_full_mle(stream, profile.quantum_efficiency, dead_time, exposure)
        return FluxEstimate(
            full.flux, EstimatorKind.RiseTimeCorrectedMle, n, full.darkness_total, full.clamped
        )
    y = darkness_times(stream, dead_time)
    remaining = max(0.0, exposure - float(np.sum(y)) - n * dead_time)
    weighted = float(profile.integral(remaining)) + float(np.sum(profile.integral(y)))
    floor = profile.quantum_efficiency * denominator_floor(stream.config.time_quantization)
    clamped = weighted < floor
    weighted = max(weighted, floor)
    return FluxEstimate(
        n / weighted, EstimatorKind.RiseTimeCorrectedMle, n, weighted / profile.quantum_efficiency, clamped
    )


def conventional_estimate(reading: int, config: ConventionalConfig) -> FluxEstimate:
    """Dark-subtracted linear estimate; a full well reads as infinite flux."""
    if reading >= config.full_well_capacity:
        return FluxEstimate(math.inf, EstimatorKind.ConventionalLinear, reading, config.exposure_time, saturated=True)
    signal = max(reading - config.dark_rate * config.exposure_time, 0.0)
    flux = signal / (config.quantum_efficiency * config.exposure_time)
    return FluxEstimate(flux, EstimatorKind.ConventionalLinear, reading, config.exposure_time)


# -- calibration and histograms --------------------------------------------


def _raw_intervals(streams: Iterable[PhotonStream]) -> np.ndarray:
    parts = [np.diff(s.recorded) for s in streams if s.n_detections >= 2]
    return np.concatenate(parts) if parts else np.empty(0)


def calibrate_dead_time(streams, bin_width: float) -> float:
    """Left edge of the first occupied bin of the raw inter-detection histogram."""
    if isinstance(streams, PhotonStream):
        streams = [streams]
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    intervals = _raw_intervals(streams)
    if intervals.size == 0:
        raise InsufficientPhotons("need at least 2 detections in one stream")
    return float(math.floor(intervals.min() / bin_width) * bin_width)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.overflow

    def to_csv(self) -> str:
        lines = ["bin_left,bin_right,count"]
        lines += [
            f"{lo!r},{hi!r},{int(c)}"
            for lo, hi, c in zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts)
        ]
        lines.append(f"{self.edges[-1]!r},inf,{self.overflow}")
        return "\n".join(lines) + "\n"


def interphoton_histogram(stream: PhotonStream, bin_width: float, max_time: float) -> Histogram:
    """Histogram of raw inter-detection intervals on ``[0, max_time)`` plus overflow."""
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    nbins = max(1, math.ceil(max_time / bin_width - 1e-9))
    edges = np.arange(nbins + 1) * bin_width
    intervals = _raw_intervals([stream])
    idx = np.floor(intervals / bin_width).astype(np.int64)
    inside = idx < nbins
    counts = np.bincount(idx[inside], minlength=nbins)
    return Histogram(edges=edges, counts=counts, overflow=int(np.count_nonzero(~inside)))
