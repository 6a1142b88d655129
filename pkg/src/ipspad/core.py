"""Domain types shared by the simulator, estimators and imaging pipeline.

All times are double-precision seconds and all fluxes are photons/second.
The value types are frozen dataclasses; array fields are stored as
read-only numpy arrays so instances can be handed to worker threads freely.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


class IpSpadError(ValueError):
    """Base class for domain errors raised by this package."""


class InsufficientPhotons(IpSpadError):
    pass


class CountOutOfRange(IpSpadError):
    pass


class InvalidTimestamp(IpSpadError):
    pass


class DomainError(IpSpadError):
    pass


class ParseError(IpSpadError):
    """Malformed input file. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NegativeValue(IpSpadError):
    pass


def max_detections(exposure_time: float, dead_time: float) -> int:
    """Integer ceiling of ``T / tau_d``.

    Ratios that are integral up to floating-point noise (1e-3 / 1e-7) are
    snapped to the integer instead of being pushed up by one.
    """
    ratio = exposure_time / dead_time
    nearest = round(ratio)
    if nearest > 0 and abs(ratio - nearest) <= 1e-9 * nearest:
        return int(nearest)
    return int(math.ceil(ratio))


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PixelConfig:
    """Physical and electronic parameters of one single-photon pixel."""

    quantum_efficiency: float
    dead_time: float
    exposure_time: float
    time_quantization: float = 0.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    rise_time: float = 0.0
    drift_coefficient: float = 0.0

    def __post_init__(self):
        q = self.quantum_efficiency
        if not (0.0 < q <= 1.0):
            raise ValueError(f"quantum_efficiency must be in (0, 1], got {q}")
        if not self.dead_time > 0:
            raise ValueError(f"dead_time must be > 0, got {self.dead_time}")
        if not self.exposure_time > self.dead_time:
            raise ValueError(
                f"exposure_time ({self.exposure_time}) must exceed dead_time ({self.dead_time})"
            )
        for name in ("time_quantization", "dark_rate", "jitter_sigma", "rise_time", "drift_coefficient"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def max_detections(self) -> int:
        return max_detections(self.exposure_time, self.dead_time)

    @property
    def is_ideal(self) -> bool:
        return (
            self.time_quantization == 0
            and self.jitter_sigma == 0
            and self.rise_time == 0
            and self.drift_coefficient == 0
        )

    def digest(self) -> str:
        return (
            f"q={self.quantum_efficiency:g} tau_d={self.dead_time:g} T={self.exposure_time:g} "
            f"delta={self.time_quantization:g} dark={self.dark_rate:g}"
        )


@dataclass(frozen=True)
class ConventionalConfig:
    """Affine-noise model of a conventional integrating pixel."""

    quantum_efficiency: float
    exposure_time: float
    full_well_capacity: int = 34000
    read_noise_sigma: float = 5.0
    dark_rate: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.quantum_efficiency <= 1.0):
            raise ValueError("quantum_efficiency must be in (0, 1]")
        if not self.exposure_time > 0:
            raise ValueError("exposure_time must be > 0")
        if int(self.full_well_capacity) != self.full_well_capacity or self.full_well_capacity < 1:
            raise ValueError("full_well_capacity must be an integer >= 1")
        if self.read_noise_sigma < 0 or self.dark_rate < 0:
            raise ValueError("read_noise_sigma and dark_rate must be >= 0")

    def digest(self) -> str:
        return (
            f"q={self.quantum_efficiency:g} T={self.exposure_time:g} "
            f"fwc={self.full_well_capacity} read={self.read_noise_sigma:g} dark={self.dark_rate:g}"
        )


@dataclass(frozen=True, eq=False)
class PhotonStream:
    """Detections of one exposure.

    ``detections`` are the true avalanche times, ``recorded`` what the timing
    electronics stored after jitter and quantization.  ``effective_dead_times[i]``
    is the dead-time that followed detection ``i``.  Streams read back from disk
    only know their recorded timestamps, so ``detections`` equals ``recorded``.
    """

    detections: np.ndarray
    recorded: np.ndarray
    exposure: float
    config: PixelConfig
    effective_dead_times: np.ndarray
    reordered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "detections", _frozen_array(self.detections))
        object.__setattr__(self, "recorded", _frozen_array(self.recorded))
        object.__setattr__(self, "effective_dead_times", _frozen_array(self.effective_dead_times))
        n = self.detections.size
        if self.recorded.size != n or self.effective_dead_times.size != n:
            raise ValueError("detections, recorded and effective_dead_times must have equal length")
        if n and (self.detections[0] < 0 or self.detections[-1] >= self.exposure):
            raise ValueError("detections must lie in [0, T)")
        if n > 1 and np.any(np.diff(self.recorded) < 0):
            raise ValueError("recorded timestamps must be non-decreasing")
        min_dead = float(self.effective_dead_times.min()) if n else self.config.dead_time
        cap = max_detections(self.exposure, min(min_dead, self.config.dead_time))
        if n > cap:
            raise ValueError(f"{n} detections exceed the cap of {cap}")

    def __len__(self) -> int:
        return int(self.detections.size)

    @property
    def n_detections(self) -> int:
        return int(self.detections.size)

    def __eq__(self, other):
        if not isinstance(other, PhotonStream):
            return NotImplemented
        return (
            self.exposure == other.exposure
            and self.config == other.config
            and self.reordered == other.reordered
            and np.array_equal(self.detections, other.detections)
            and np.array_equal(self.recorded, other.recorded)
            and np.array_equal(self.effective_dead_times, other.effective_dead_times)
        )

    __hash__ = None

    def respects_dead_time(self) -> bool:
        """True if consecutive true detections are at least one dead-time apart."""
        if self.n_detections < 2:
            return True
        gaps = np.diff(self.detections)
        return bool(np.all(gaps >= self.effective_dead_times[:-1]))

    def with_offset(self, offset: float) -> "PhotonStream":
        """Shift every timestamp (and the exposure end) by ``offset``."""
        return replace(
            self,
            detections=self.detections + offset,
            recorded=self.recorded + offset,
            exposure=self.exposure + offset,
        )


class EstimatorKind(enum.Enum):
    IpSpadMle = "ipspad"
    IpSpadFullMle = "full"
    PfSpadCounts = "counts"
    FirstPhoton = "first-photon"
    RiseTimeCorrectedMle = "rise-corrected"
    ConventionalLinear = "conventional"


@dataclass(frozen=True)
class FluxEstimate:
    flux: float
    estimator_kind: EstimatorKind
    n_detections: int
    darkness_total: float
    clamped: bool = False
    saturated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "flux", float(self.flux))
        if not self.flux >= 0:
            raise ValueError(f"flux must be >= 0, got {self.flux}")
        if math.isinf(self.flux) and self.estimator_kind not in (
            EstimatorKind.ConventionalLinear,
            EstimatorKind.PfSpadCounts,
        ):
            raise ValueError("infinite flux is reserved for saturated counting models")
        if self.n_detections < 0 or not self.darkness_total >= 0:
            raise ValueError("n_detections and darkness_total must be >= 0")


class CurveKind(enum.Enum):
    Theoretical = "theory"
    MonteCarlo = "montecarlo"


@dataclass(frozen=True, eq=False)
class SnrCurve:
    flux_grid: np.ndarray
    snr_db: np.ndarray
    kind: CurveKind
    label: str = ""
    excluded_fraction: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "flux_grid", _frozen_array(self.flux_grid))
        object.__setattr__(self, "snr_db", _frozen_array(self.snr_db))
        if self.excluded_fraction is not None:
            object.__setattr__(self, "excluded_fraction", _frozen_array(self.excluded_fraction))
        if self.flux_grid.size != self.snr_db.size:
            raise ValueError("flux_grid and snr_db must have equal length")
        if np.any(np.diff(self.flux_grid) <= 0):
            raise ValueError("flux_grid must be strictly increasing")

    def __eq__(self, other):
        if not isinstance(other, SnrCurve):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.label == other.label
            and np.array_equal(self.flux_grid, other.flux_grid)
            and np.array_equal(self.snr_db, other.snr_db)
        )

    __hash__ = None

    def to_csv(self, gnuplot: bool = False) -> str:
        """``flux,snr_db,kind,label`` rows, or whitespace columns for gnuplot."""
        if gnuplot:
            lines = [f"# {self.kind.value} {self.label}"]
            lines += [f"{f!r} {s!r}" for f, s in zip(self.flux_grid.tolist(), self.snr_db.tolist())]
        else:
            label = self.label.replace(",", ";")
            lines = ["flux,snr_db,kind,label"]
            lines += [
                f"{f!r},{s!r},{self.kind.value},{label}"
                for f, s in zip(self.flux_grid.tolist(), self.snr_db.tolist())
            ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SnrCurve":
        rows = [line.split(",", 3) for line in text.splitlines()[1:] if line.strip()]
        if not rows:
            raise ParseError("empty SNR curve", 0)
        return cls(
            flux_grid=np.array([float(r[0]) for r in rows]),
            snr_db=np.array([float(r[1]) for r in rows]),
            kind=CurveKind(rows[0][2]),
            label=rows[0][3],
        )


@dataclass(frozen=True, eq=False)
class FluxImage:
    """Linear flux image stored as a ``(height, width, channels)`` float array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W) or (H, W, 1|3) data, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("flux image values must be finite")
        if np.any(arr < 0):
            raise NegativeValue("flux image values must be >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, FluxImage):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    __hash__ = None


def interphoton_times(stream: PhotonStream, dead_time: float | None = None) -> np.ndarray:
    """Times-of-darkness ``R[i+1] - R[i] - dead_i`` between recorded stamps.

    ``dead_time`` overrides the stream's own effective dead-times (e.g. with a
    calibrated value).  Quantization can make a difference slightly negative;
    such values are clamped to zero.
    """
    if stream.n_detections < 2:
        return np.empty(0)
    dead = stream.effective_dead_times[:-1] if dead_time is None else dead_time
    return np.maximum(np.diff(stream.recorded) - dead, 0.0)


# -- plain-text stream files ------------------------------------------------

_HEADER_KEYS = {
    "T": "exposure_time",
    "q": "quantum_efficiency",
    "tau_d": "dead_time",
    "delta": "time_quantization",
    "dark_rate": "dark_rate",
    "jitter": "jitter_sigma",
    "rise_time": "rise_time",
    "drift": "drift_coefficient",
}


def format_stream(stream: PhotonStream) -> str:
    cfg = stream.config
    lines = [f"T={stream.exposure!r}"]
    for key, attr in _HEADER_KEYS.items():
        if key != "T":
            lines.append(f"{key}={getattr(cfg, attr)!r}")
    lines += [repr(t) for t in stream.recorded.tolist()]
    return "\n".join(lines) + "\n"


def parse_stream(text: str) -> PhotonStream:
    """Inverse of :func:`format_stream`.

    Only ``T``, ``q``, ``tau_d`` and ``delta`` are required header keys.
    """
    params: dict[str, float] = {}
    stamps: list[float] = []
    offset = 0
    for line in text.splitlines(keepends=True):
        body = line.strip()
        if body and not body.startswith("#"):
            try:
                if "=" in body:
                    if stamps:
                        raise ParseError("header line after timestamps", offset)
                    key, value = body.split("=", 1)
                    if key not in _HEADER_KEYS:
                        raise ParseError(f"unknown header key {key!r}", offset)
                    params[_HEADER_KEYS[key]] = float(value)
                else:
                    stamps.append(float(body))
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"bad number {body!r}", offset) from None
        offset += len(line.encode())
    for key in ("T", "q", "tau_d", "delta"):
        if _HEADER_KEYS[key] not in params:
            raise ParseError(f"missing header {key}=", 0)
    config = PixelConfig(**params)
    recorded = np.array(stamps, dtype=float)
    k = np.arange(1, recorded.size + 1)
    dead = config.dead_time + config.drift_coefficient * k
    return PhotonStream(
        detections=recorded,
        recorded=recorded,
        exposure=config.exposure_time,
        config=config,
        effective_dead_times=dead,
    )


def write_stream(stream: PhotonStream, path) -> None:
    Path(path).write_text(format_stream(stream))


def read_stream(path) -> PhotonStream:
    return parse_stream(Path(path).read_text())
