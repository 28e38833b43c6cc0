"""
Ground-truth ionizing radiation: Poisson arrivals, deposited energies and
per-detector detection outcomes.

Times are integer nanoseconds, energies keV.
"""
from __future__ import annotations

import math
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .config import DetectorSpec, EnergySpectrum
from .errors import ConfigError, DomainError
from .models import RadiationEvent, RadiationEvents
from .utils import RngLike, as_rng, derive_rng


def sample_arrivals(rate_hz: float, duration_s: float, seed: RngLike) -> NDArray[np.int64]:
    """Homogeneous Poisson process on [0, duration): sorted arrival times in ns."""
    if rate_hz < 0:
        raise DomainError(f"rate must be >= 0, got {rate_hz}")
    if duration_s <= 0:
        raise DomainError(f"duration must be > 0, got {duration_s}")
    rng = as_rng(seed, "arrivals")
    n = int(rng.poisson(rate_hz * duration_s))
    times = np.sort(rng.uniform(0.0, duration_s, size=n))
    return np.floor(times * 1e9).astype(np.int64)


# Spectrum families

def lognormal_parameters(s: EnergySpectrum) -> Tuple[float, float]:
    """(log-median, log-σ) pinned to the spectrum's median and mean."""
    return math.log(s.median), math.sqrt(2.0 * math.log(s.mean / s.median))


def _lognormal_sample(s: EnergySpectrum, rng: np.random.Generator, size: int) -> NDArray[np.float64]:
    mu, sigma = lognormal_parameters(s)
    if sigma == 0.0:
        return np.full(size, s.median)
    lo = stats.norm.cdf((math.log(s.lower_cut) - mu) / sigma)
    hi = stats.norm.cdf((math.log(s.upper_cut) - mu) / sigma)
    u = rng.uniform(lo, hi, size=size)
    out = np.exp(mu + sigma * stats.norm.ppf(u))
    return np.clip(out, s.lower_cut, s.upper_cut)


def _lognormal_conditional_mean(s: EnergySpectrum, threshold: float) -> float:
    mu, sigma = lognormal_parameters(s)
    if sigma == 0.0:
        return s.median
    a = (math.log(threshold) - mu) / sigma
    b = (math.log(s.upper_cut) - mu) / sigma
    mass = stats.norm.cdf(b) - stats.norm.cdf(a)
    if mass <= 0.0:
        return threshold
    weighted = stats.norm.cdf(b - sigma) - stats.norm.cdf(a - sigma)
    return math.exp(mu + 0.5 * sigma * sigma) * weighted / mass


def _lognormal_fraction_above(s: EnergySpectrum, threshold: float) -> float:
    mu, sigma = lognormal_parameters(s)
    if sigma == 0.0:
        return 1.0 if threshold <= s.median else 0.0
    lo, th, hi = stats.norm.cdf((np.log([s.lower_cut, max(threshold, s.lower_cut), s.upper_cut]) - mu) / sigma)
    total = hi - lo
    above = hi - th
    return float(above / total) if total > 0 else 0.0


def _lognormal_quantiles(s: EnergySpectrum, threshold: float, n: int) -> NDArray[np.float64]:
    mu, sigma = lognormal_parameters(s)
    if sigma == 0.0:
        return np.full(n, s.median)
    lo, hi = stats.norm.cdf((np.log([max(threshold, s.lower_cut), s.upper_cut]) - mu) / sigma)
    u = lo + (np.arange(n) + 0.5) / n * (hi - lo)
    return np.clip(np.exp(mu + sigma * stats.norm.ppf(u)), s.lower_cut, s.upper_cut)


SpectrumSampler = Callable[[EnergySpectrum, np.random.Generator, int], NDArray[np.float64]]
SpectrumMean = Callable[[EnergySpectrum, float], float]
SpectrumQuantiles = Callable[[EnergySpectrum, float, int], NDArray[np.float64]]
SpectrumFamily = Tuple[SpectrumSampler, SpectrumMean, SpectrumMean, SpectrumQuantiles]

SPECTRUM_FAMILIES: Dict[str, SpectrumFamily] = {
    "lognormal": (_lognormal_sample, _lognormal_conditional_mean, _lognormal_fraction_above, _lognormal_quantiles),
}


def _family(s: EnergySpectrum) -> SpectrumFamily:
    try:
        return SPECTRUM_FAMILIES[s.family]
    except KeyError:
        raise ConfigError("spectrum.family", f"unknown family '{s.family}'") from None


def sample_deposit_energy(
    s: EnergySpectrum, seed: RngLike, size: Optional[int] = None
) -> Union[float, NDArray[np.float64]]:
    """Deposited energy draw(s) in keV; a scalar when ``size`` is None."""
    sampler = _family(s)[0]
    rng = as_rng(seed, "energy")
    out = sampler(s, rng, 1 if size is None else size)
    return float(out[0]) if size is None else out


def conditional_mean_above(s: EnergySpectrum, threshold: float) -> float:
    """E[E | E ≥ threshold] over the truncated spectrum, in keV."""
    if not s.lower_cut <= threshold <= s.upper_cut:
        raise DomainError(
            f"threshold {threshold} keV outside the spectrum bounds [{s.lower_cut}, {s.upper_cut}]"
        )
    if threshold >= s.upper_cut:
        return s.upper_cut
    mean_above = _family(s)[1]
    return mean_above(s, threshold)


def fraction_above(s: EnergySpectrum, threshold: float) -> float:
    """P(E ≥ threshold) under the truncated spectrum."""
    if threshold <= s.lower_cut:
        return 1.0
    if threshold >= s.upper_cut:
        return 0.0
    above = _family(s)[2]
    return above(s, threshold)


def deposit_quantiles(s: EnergySpectrum, threshold: float = 0.0, n: int = 1000) -> NDArray[np.float64]:
    """``n`` equal-mass energies (keV) of the spectrum above ``threshold``: its mid-quantiles."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if threshold >= s.upper_cut:
        raise DomainError(f"threshold {threshold} keV is at or above the spectrum cut {s.upper_cut}")
    return _family(s)[3](s, threshold, n)


def sample_events(
    rate_hz: float, duration_s: float, spectrum: EnergySpectrum, seed: int
) -> RadiationEvents:
    times = sample_arrivals(rate_hz, duration_s, derive_rng(seed, "arrivals"))
    energies = sample_deposit_energy(spectrum, derive_rng(seed, "energies"), size=times.size)
    return RadiationEvents(times, np.asarray(energies))


# Detection

def _energy_key(energy_kev: float) -> int:
    return int(round(energy_kev * 1e3))  # eV


def detect_outcome(e: RadiationEvent, d: DetectorSpec, seed: int) -> bool:
    """Bernoulli(efficiency) above threshold, fixed per (event, detector, seed)."""
    if e.energy_kev < d.threshold:
        return False
    if d.efficiency >= 1.0:
        return True
    if d.efficiency <= 0.0:
        return False
    rng = derive_rng(seed, "detect", d.name, int(e.time_ns), _energy_key(e.energy_kev))
    return bool(rng.random() < d.efficiency)


def detect_outcomes(events: RadiationEvents, d: DetectorSpec, seed: int) -> NDArray[np.bool_]:
    return np.fromiter((detect_outcome(ev, d, seed) for ev in events), dtype=bool, count=len(events))
