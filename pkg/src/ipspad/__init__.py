"""Simulation and flux estimation for passive inter-photon SPAD imaging."""

from .core import (
    ConventionalConfig,
    CountOutOfRange,
    CurveKind,
    DomainError,
    EstimatorKind,
    FluxEstimate,
    FluxImage,
    InsufficientPhotons,
    InvalidTimestamp,
    IpSpadError,
    NegativeValue,
    ParseError,
    PhotonStream,
    PixelConfig,
    SnrCurve,
    interphoton_times,
    read_stream,
    write_stream,
)
from .sim import SimSeed, rise_profile, simulate_conventional, simulate_stream

__version__ = "0.1.0"
