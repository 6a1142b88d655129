"""Per-pixel HDR image simulation plus PFM, CSV and PGM/PPM file handling."""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import EstimatorKind, FluxImage, IpSpadError, NegativeValue, ParseError, PixelConfig
from . import estimate as est
from .sim import SimSeed, simulate_stream

DEFAULT_RADIANCE_SCALE = 1e9


# -- file formats --------------------------------------------------------------


def read_pfm(path) -> FluxImage:
    raw = Path(path).read_bytes()
    header = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s", raw)
    if header is None:
        raise ParseError("invalid PFM header", 0)
    channels = 3 if header.group(1) == b"PF" else 1
    width, height = int(header.group(2)), int(header.group(3))
    try:
        scale = float(header.group(4))
    except ValueError:
        raise ParseError("invalid PFM scale", header.start(4)) from None
    if scale == 0:
        raise ParseError("PFM scale must be non-zero", header.start(4))
    dtype = np.dtype("<f4" if scale < 0 else ">f4")
    offset = header.end()
    count = width * height * channels
    if len(raw) - offset < count * 4:
        raise ParseError(f"expected {count} floats, file truncated", len(raw))
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError("non-finite pixel value", offset + 4 * int(bad[0]))
    neg = np.flatnonzero(values < 0)
    if neg.size:
        raise NegativeValue(f"negative pixel value at byte {offset + 4 * int(neg[0])}")
    # rows are stored bottom to top
    data = values.reshape(height, width, channels)[::-1].astype(np.float64)
    return FluxImage(data)


def write_pfm(image: FluxImage, path) -> None:
    ident = b"PF" if image.channels == 3 else b"Pf"
    header = ident + b"\n%d %d\n-1.0\n" % (image.width, image.height)
    body = np.ascontiguousarray(image.data[::-1], dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_csv_image(path, channels: int = 1) -> FluxImage:
    """Rows of comma-separated values, pixels interleaved when ``channels`` is 3."""
    rows = []
    offset = 0
    for line in Path(path).read_bytes().splitlines(keepends=True):
        text = line.decode().strip()
        if text:
            try:
                rows.append([float(v) for v in text.split(",")])
            except ValueError:
                raise ParseError(f"bad number in row {text!r}", offset) from None
            if len(rows[-1]) != len(rows[0]) or len(rows[-1]) % channels:
                raise ParseError("ragged CSV row", offset)
            if any(v < 0 for v in rows[-1]):
                raise NegativeValue(f"negative value in CSV at byte {offset}")
            if not all(math.isfinite(v) for v in rows[-1]):
                raise ParseError("non-finite value", offset)
        offset += len(line)
    if not rows:
        raise ParseError("empty CSV image", 0)
    arr = np.array(rows, dtype=float)
    return FluxImage(arr.reshape(arr.shape[0], -1, channels))


def write_csv_image(image: FluxImage, path) -> None:
    flat = image.data.reshape(image.height, -1)
    Path(path).write_text("".join(",".join(repr(v) for v in row) + "\n" for row in flat.tolist()))


def load_flux_image(path, fmt: str | None = None, scale: float = 1.0, channels: int = 1) -> FluxImage:
    """Read a PFM or CSV image and multiply it by ``scale`` (photons/s per unit)."""
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt == "pfm":
        image = read_pfm(path)
    elif fmt == "csv":
        image = read_csv_image(path, channels)
    else:
        raise ValueError(f"unknown image format {fmt!r}")
    if scale != 1.0:
        image = FluxImage(image.data * scale)
    return image


def tonemap(image: FluxImage, gamma: float = 2.2) -> np.ndarray:
    """Log-normalise to [0, 1] between the smallest positive and largest value, then gamma."""
    data = image.data
    positive = data[data > 0]
    if positive.size == 0:
        return np.zeros(data.shape, dtype=np.uint8)
    lo, hi = float(positive.min()), float(positive.max())
    if hi == lo:
        norm = np.where(data > 0, 1.0, 0.0)
    else:
        with np.errstate(divide="ignore"):
            norm = (np.log(data) - math.log(lo)) / (math.log(hi) - math.log(lo))
    norm = np.clip(np.nan_to_num(norm, neginf=0.0), 0.0, 1.0)
    return np.round(255 * norm ** (1.0 / gamma)).astype(np.uint8)


def write_pnm(pixels: np.ndarray, path) -> None:
    """Binary PGM (P5) for one channel or PPM (P6) for three."""
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    height, width, channels = pixels.shape
    magic = b"P6" if channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (width, height)
    Path(path).write_bytes(header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def tonemap_to_pgm(image: FluxImage, path, gamma: float = 2.2) -> None:
    write_pnm(tonemap(image, gamma), path)


def read_pnm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = re.match(rb"(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if header is None:
        raise ParseError("invalid PGM/PPM header", 0)
    channels = 3 if header.group(1) == b"P6" else 1
    width, height = int(header.group(2)), int(header.group(3))
    data = np.frombuffer(raw, dtype=np.uint8, count=width * height * channels, offset=header.end())
    return data.reshape(height, width, channels)


# -- simulation ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Reconstruction:
    image: FluxImage
    failure_mask: np.ndarray
    n_detections: np.ndarray


def estimate_pixel(flux: float, config: PixelConfig, kind: EstimatorKind, seed: SimSeed) -> tuple[float, int]:
    stream = simulate_stream(flux, config, seed)
    q, tau, T = config.quantum_efficiency, config.dead_time, config.exposure_time
    if kind is EstimatorKind.IpSpadMle:
        value = est.ipspad_mle(stream, q, tau).flux
    elif kind is EstimatorKind.IpSpadFullMle:
        value = est.ipspad_full_mle(stream, q, tau, T).flux
    elif kind is EstimatorKind.PfSpadCounts:
        value = est.pfspad_counts(stream.n_detections, q, tau, T).flux
    elif kind is EstimatorKind.RiseTimeCorrectedMle:
        value = est.risetime_corrected_mle(stream, est.RiseProfileSpec(q, config.rise_time), tau, T).flux
    else:
        raise ValueError(f"estimator {kind} is not a fixed-exposure estimator")
    return value, stream.n_detections


def _pixel_job(args):
    index, flux, config, kind, master_seed = args
    try:
        value, n = estimate_pixel(flux, config, kind, SimSeed(master_seed, index))
    except IpSpadError:
        return 0.0, True, 0
    if not math.isfinite(value):
        return 0.0, True, 0
    return value, False, n


def simulate_image(
    truth: FluxImage,
    config: PixelConfig,
    estimator_kind: EstimatorKind = EstimatorKind.IpSpadMle,
    master_seed: int = 0,
    threads: int = 1,
) -> Reconstruction:
    """Simulate every pixel and channel independently and estimate its flux.

    Pixels whose estimator fails (too few photons) are set to 0 and flagged
    in ``failure_mask``.  The seed of each value is derived from its flat
    index, so the result does not depend on ``threads``.
    """
    flat = truth.data.reshape(-1)
    jobs = [(i, float(f), config, estimator_kind, master_seed) for i, f in enumerate(flat)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_pixel_job, jobs, chunksize=64))
    else:
        results = [_pixel_job(job) for job in jobs]
    shape = truth.data.shape
    values = np.array([r[0] for r in results]).reshape(shape)
    mask = np.array([r[1] for r in results]).reshape(shape)
    counts = np.array([r[2] for r in results]).reshape(shape)
    return Reconstruction(FluxImage(values), mask, counts)


def simulate_image_first_photon(
    truth: FluxImage, q: float, master_seed: int = 0, photons: int = 1
) -> Reconstruction:
    """Variable-exposure reconstruction from the first ``photons`` waits of every pixel.

    Each pixel waits for its photons; the mean log wait is debiased and
    exponentiated, so for one photon the value is ``exp(-gamma) / (q * Y1)``,
    whose log is unbiased.  Pixels with zero flux never see a photon and are
    masked.
    """
    flat = truth.data.reshape(-1)
    out = np.zeros(flat.size)
    mask = np.zeros(flat.size, dtype=bool)
    for i, flux in enumerate(flat):
        rate = q * flux
        if rate <= 0:
            mask[i] = True
            continue
        (rng,) = SimSeed(master_seed, i).generators(1)
        waits = rng.standard_exponential(photons) / rate
        if photons == 1:
            est.first_photon_estimate(float(waits[0]), q)  # validates the wait
        out[i] = math.exp(-est.log_timestamp_debias(np.mean(np.log(waits)))) / q
    shape = truth.data.shape
    return Reconstruction(FluxImage(out.reshape(shape)), mask.reshape(shape), np.where(mask, 0, photons).reshape(shape))
