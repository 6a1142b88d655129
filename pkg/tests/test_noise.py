import math

import numpy as np
import pytest
from scipy import optimize

from ipspad.core import ConventionalConfig, CurveKind, DomainError, EstimatorKind, PixelConfig, SnrCurve
from ipspad.estimate import InsufficientPhotons
from ipspad.noise import (
    SNR_CAP_DB,
    SNR_FLOOR_DB,
    SweepSpec,
    count_quantization_variance,
    dynamic_range,
    first_photon_samples,
    first_photon_uniformity,
    monte_carlo_snr,
    snr_theory_conventional,
    snr_theory_ipspad,
    snr_theory_pfspad,
    theory_curve,
    time_quantization_variance,
    upper_flux_at,
)
from ipspad.sim import expected_counts

FIG4 = PixelConfig(0.4, 100e-9, 1e-3)
FINE = np.logspace(2, 16, 4001)


def crossing(fn, lo, hi, level=20.0):
    return optimize.brentq(lambda lf: fn(10**lf) - level, math.log10(lo), math.log10(hi), xtol=1e-12)


def test_plateau_is_ratio_of_exposure_to_dead_time():
    assert snr_theory_ipspad(1e16, FIG4) == pytest.approx(40.0, abs=1e-3)
    cfg = PixelConfig(0.4, 150e-9, 5e-3)
    assert snr_theory_ipspad(1e18, cfg) == pytest.approx(10 * math.log10(5e-3 / 150e-9), abs=1e-3)


@pytest.mark.parametrize("flux", [1e3, 1e4, 1e5])
def test_shot_noise_line(flux):
    # q*flux*tau <= 4e-3 here
    assert snr_theory_ipspad(flux, FIG4) == pytest.approx(10 * math.log10(0.4 * flux * 1e-3), abs=0.02)


def test_theory_rejects_nonpositive_flux():
    for fn, cfg in [
        (snr_theory_ipspad, FIG4),
        (snr_theory_pfspad, FIG4),
        (snr_theory_conventional, ConventionalConfig(1.0, 5e-3)),
    ]:
        with pytest.raises(DomainError):
            fn(0.0, cfg)
        with pytest.raises(DomainError):
            fn(np.array([1e5, -1.0]), cfg)


def test_dark_bias_sets_low_flux_floor():
    cfg = PixelConfig(0.4, 100e-9, 1e-3, dark_rate=400.0)
    # bias of 1000 photons/s equals the flux: SNR <= 0 dB
    assert snr_theory_ipspad(1e3, cfg) < 0
    assert snr_theory_ipspad(1e9, cfg) == pytest.approx(snr_theory_ipspad(1e9, FIG4), abs=1e-6)


def test_pfspad_matches_ipspad_at_low_flux():
    cfg = PixelConfig(0.4, 100e-9, 1e-3, time_quantization=100e-12)
    flux = np.logspace(4, 7, 31)
    assert np.max(np.abs(snr_theory_pfspad(flux, cfg) - snr_theory_ipspad(flux, cfg))) < 0.1


def test_timing_twenty_db_bound_beats_counts_by_two_decades():
    cfg = PixelConfig(0.4, 100e-9, 1e-3, time_quantization=100e-12)
    ip = 10 ** crossing(lambda f: snr_theory_ipspad(f, cfg), 1e9, 1e16)
    pf = 10 ** crossing(lambda f: snr_theory_pfspad(f, cfg), 1e8, 1e13)
    assert ip / pf >= 100
    # grid-based readout agrees with the root-find
    assert upper_flux_at(theory_curve(FINE, cfg, EstimatorKind.IpSpadMle)) == pytest.approx(ip, rel=0.01)


def test_count_quantization_slope_in_soft_saturation():
    # count-quantization MSE grows as flux^4 while the signal grows as flux^2,
    # so the SNR slope tends to -20 dB per decade of flux
    flux = np.array([1e13, 1e14])
    snr = snr_theory_pfspad(flux, FIG4)
    assert (snr[1] - snr[0]) == pytest.approx(-20.0, abs=0.05)


def test_time_quantization_at_delta_equal_dead_time():
    cfg = PixelConfig(0.4, 100e-9, 1e-3, time_quantization=100e-9)
    flux = np.logspace(4, 12, 81)
    ratio = time_quantization_variance(flux, cfg) / count_quantization_variance(flux, cfg)
    a = 0.4 * flux * 100e-9
    assert np.allclose(ratio, ((1 + 2 * a) / (1 + a)) ** 2, rtol=1e-12)
    # equal within 1% while q*flux*tau <= 0.005, never more than a factor 4 apart
    assert np.all(np.abs(ratio[a <= 0.005] - 1) < 0.01)
    assert np.all(ratio <= 4)
    gap = np.abs(snr_theory_ipspad(flux, cfg) - snr_theory_pfspad(flux, cfg))
    assert np.max(gap) <= 10 * math.log10(4) + 1e-9


@pytest.mark.parametrize("kind", [EstimatorKind.IpSpadMle, EstimatorKind.PfSpadCounts])
def test_theory_curves_single_peaked(kind):
    cfg = PixelConfig(0.4, 100e-9, 1e-3, time_quantization=100e-12)
    snr = theory_curve(np.logspace(2, 16, 500), cfg, kind).snr_db
    d = np.diff(snr)
    peak = int(np.argmax(snr))
    assert np.all(d[:peak] > 0) and np.all(d[peak:] < 0)
    # concave near the peak: second differences negative there
    assert np.all(np.diff(d)[max(peak - 20, 0) : peak + 20] < 0)


def test_conventional_examples():
    cfg = ConventionalConfig(1.0, 5e-3, read_noise_sigma=0.0, dark_rate=0.0)
    for flux in [1e3, 1e5, 1e6]:
        assert snr_theory_conventional(flux, cfg) == pytest.approx(10 * math.log10(flux * 5e-3))
    assert snr_theory_conventional(34000 / 5e-3, cfg) == SNR_FLOOR_DB
    assert snr_theory_conventional(34000 / 5e-3 * 0.999, cfg) > 40


def test_conventional_dynamic_range_pinned():
    cfg = ConventionalConfig(1.0, 5e-3, full_well_capacity=34000, read_noise_sigma=5.0, dark_rate=10.0)
    # closed form for the 20 dB point: s^2 = 100 (s + dark*T + sigma^2), s = q*flux*T
    c = 100 * (10.0 * 5e-3 + 25.0)
    s = (100 + math.sqrt(100**2 + 4 * c)) / 2
    low = s / 5e-3
    assert 10 ** crossing(lambda f: snr_theory_conventional(f, cfg), 1e3, 1e6) == pytest.approx(low, rel=1e-9)
    closed = (34000 / 5e-3) / low
    assert closed == pytest.approx(281.6, abs=0.1)
    grid = np.logspace(3, 8, 20001)
    step = grid[1] / grid[0]
    measured = dynamic_range(theory_curve(grid, cfg, EstimatorKind.ConventionalLinear))
    assert closed / step**2 <= measured <= closed


def test_ipspad_dynamic_range_exceeds_ten_million():
    cfg = PixelConfig(0.4, 150e-9, 5e-3, time_quantization=200e-12, dark_rate=10.0)
    assert dynamic_range(theory_curve(FINE, cfg, EstimatorKind.IpSpadMle)) >= 1e7


def test_dynamic_range_examples():
    grid = np.logspace(3, 9, 7)
    assert dynamic_range(SnrCurve(grid, np.full(7, 30.0), CurveKind.Theoretical)) == pytest.approx(1e6)
    assert dynamic_range(SnrCurve(grid, np.full(7, 10.0), CurveKind.Theoretical)) == 0.0
    # widest contiguous run wins
    snr = np.array([25, 25, 10, 25, 25, 25, 10.0])
    assert dynamic_range(SnrCurve(grid, snr, CurveKind.Theoretical)) == pytest.approx(100.0)


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec((1e5,), 1, EstimatorKind.IpSpadMle, FIG4)
    with pytest.raises(ValueError):
        SweepSpec((10.0,), 10, EstimatorKind.IpSpadMle, FIG4)
    with pytest.raises(ValueError):
        SweepSpec((1e17,), 10, EstimatorKind.IpSpadMle, FIG4)
    with pytest.raises(ValueError):
        SweepSpec((1e5,), 10, EstimatorKind.ConventionalLinear, FIG4)


def test_identity_estimator_hits_cap():
    spec = SweepSpec((1e4, 1e8), 5, EstimatorKind.IpSpadMle, FIG4)
    curve = monte_carlo_snr(spec, estimator=lambda flux, spec, seed: flux)
    assert np.all(curve.snr_db == SNR_CAP_DB)
    assert np.all(curve.excluded_fraction == 0)


def test_all_excluded_point_is_floor():
    def failing(flux, spec, seed):
        raise InsufficientPhotons("none")

    curve = monte_carlo_snr(SweepSpec((1e6,), 4, EstimatorKind.IpSpadMle, FIG4), estimator=failing)
    assert curve.snr_db[0] == SNR_FLOOR_DB
    assert curve.excluded_fraction[0] == 1.0


def test_low_flux_trials_are_excluded_not_zeroed():
    curve = monte_carlo_snr(SweepSpec((1e3,), 50, EstimatorKind.IpSpadMle, FIG4, master_seed=3))
    # E[N] = 0.4 so most exposures have fewer than two photons
    assert curve.excluded_fraction[0] > 0.8


def test_monte_carlo_deterministic_across_threads():
    spec = SweepSpec(tuple(np.logspace(5, 11, 7)), 4, EstimatorKind.IpSpadMle, FIG4, master_seed=11)
    a = monte_carlo_snr(spec).to_csv()
    b = monte_carlo_snr(spec).to_csv()
    c = monte_carlo_snr(spec, threads=4).to_csv()
    assert a == b == c
    other = SweepSpec(spec.flux_grid, 4, EstimatorKind.IpSpadMle, FIG4, master_seed=12)
    assert monte_carlo_snr(other).to_csv() != a


def test_monte_carlo_agrees_with_theory_given_enough_trials():
    # with 300 trials the sampling spread of the SNR is about 0.35 dB
    flux = np.logspace(5, 9, 17)
    n_mean = np.array([expected_counts(f, FIG4) for f in flux])
    flux = flux[(n_mean >= 30) & (n_mean <= 0.9 * FIG4.max_detections)]
    spec = SweepSpec(tuple(flux), 300, EstimatorKind.IpSpadMle, FIG4, master_seed=2)
    curve = monte_carlo_snr(spec, threads=4)
    assert flux.size >= 10
    assert np.max(np.abs(curve.snr_db - snr_theory_ipspad(flux, FIG4))) < 1.5


def test_monte_carlo_plateau_near_forty_db():
    flux = np.logspace(10, 13, 4)
    curve = monte_carlo_snr(SweepSpec(tuple(flux), 20, EstimatorKind.IpSpadMle, FIG4, master_seed=5))
    assert np.mean(curve.snr_db) == pytest.approx(40.0, abs=1.0)


def test_timing_beats_counts_by_ten_db_with_quantization():
    cfg = PixelConfig(0.4, 100e-9, 1e-3, time_quantization=200e-12)
    flux = (1e11, 1e12, 1e13)
    ip = monte_carlo_snr(SweepSpec(flux, 10, EstimatorKind.IpSpadMle, cfg, master_seed=4))
    pf = monte_carlo_snr(SweepSpec(flux, 10, EstimatorKind.PfSpadCounts, cfg, master_seed=4))
    assert np.max(ip.snr_db - pf.snr_db) > 10


def test_conventional_monte_carlo_tracks_theory():
    cfg = ConventionalConfig(1.0, 5e-3, dark_rate=10.0)
    flux = (1e5, 1e6)
    curve = monte_carlo_snr(SweepSpec(flux, 400, EstimatorKind.ConventionalLinear, cfg, master_seed=1))
    assert np.allclose(curve.snr_db, snr_theory_conventional(np.array(flux), cfg), atol=0.6)


def test_first_photon_uniform_at_low_flux():
    assert first_photon_uniformity(1e4 / 0.4, 1e-6, 0.4, 10_000, seed=1) > 0.01


def test_first_photon_low_flux_premise_enforced():
    with pytest.raises(DomainError):
        first_photon_uniformity(5 / 0.4e-3, 1e-3, 0.4, 10_000)


def test_first_photon_uniformity_rejected_at_high_flux():
    p = first_photon_uniformity(5 / 0.4e-3, 1e-3, 0.4, 10_000, seed=2, require_low_flux=False)
    assert p < 0.01


def test_first_photon_samples_scale_with_exposure():
    # same q*flux*T: samples divided by T coincide
    a = first_photon_samples(2.5e4, 1e-3, 0.4, 5000, seed=3) / 1e-3
    b = first_photon_samples(2.5e2, 1e-1, 0.4, 5000, seed=3) / 1e-1
    assert np.allclose(a, b, rtol=1e-12, atol=0)
    assert np.all((a >= 0) & (a <= 1))
