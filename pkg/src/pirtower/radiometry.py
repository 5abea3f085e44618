"""Incident power from a Lambertian source and the pyroelectric sensor response.

The sensor is the causal filter ``h(t) = k1 exp(-k2 t) - k3 exp(-k4 t)``.  On the
sample grid the convolution integral is taken with the rectangle rule, i.e. the
taps are ``dt * h(n dt)``; a power impulse of area one (``w[0] = 1/dt``)
therefore reproduces the samples of ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

STEFAN_BOLTZMANN = 5.670374419e-8  # W m^-2 K^-4

SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class RadiometryParams:
    tau: float = 1.0
    eta: float = 1.0
    filter_fraction: float = 1.0
    aperture_area: float = 1e-4
    t_obj: float = 306.0
    t_b: float = 295.0
    sigma: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        for name in ("tau", "eta", "filter_fraction"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if not self.aperture_area > 0:
            raise ValueError("aperture_area must be positive")
        if not (self.t_obj > 0 and self.t_b > 0):
            raise ValueError("temperatures must be positive kelvin")


@dataclass(frozen=True)
class SensorResponseParams:
    k1: float = 1000.0
    k2: float = 10 * np.pi
    k3: float = 39.04403013964522
    k4: float = 0.2 * np.pi
    gain: float = 1.0
    clip_low: float = 0.0
    clip_high: float = 3.3
    dc_offset: float = 1.65
    noise_std: float = 0.01
    agc_target_fraction: Optional[float] = 0.7

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3, self.k4) <= 0:
            raise ValueError("impulse-response constants must be positive")
        if self.k2 == self.k4:
            raise ValueError("k2 and k4 must differ")
        if not self.clip_low < self.dc_offset < self.clip_high:
            raise ValueError("need clip_low < dc_offset < clip_high")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.agc_target_fraction is not None and not 0 < self.agc_target_fraction <= 1:
            raise ValueError("agc_target_fraction must lie in (0, 1]")

    @property
    def headroom(self) -> float:
        """Largest excursion from the DC offset that stays inside the clip rails."""
        return min(self.clip_high - self.dc_offset, self.dc_offset - self.clip_low)


def net_power(p: RadiometryParams, a_proj, range_m):
    """Net radiant power reaching the detector, in watts (array-friendly)."""
    a_proj = np.asarray(a_proj, dtype=float)
    range_m = np.asarray(range_m, dtype=float)
    if np.any(range_m <= 0):
        raise ValueError("range must be positive")
    if np.any(a_proj < 0):
        raise ValueError("projected area must be non-negative")
    contrast = p.t_obj ** 4 - p.t_b ** 4
    out = (p.tau * p.eta * p.filter_fraction * p.aperture_area * a_proj * p.sigma * contrast
           / (np.pi * range_m ** 2))
    return out if out.ndim else float(out)


def impulse_response(p: SensorResponseParams, t):
    t = np.asarray(t, dtype=float)
    out = p.k1 * np.exp(-p.k2 * t) - p.k3 * np.exp(-p.k4 * t)
    return out if out.ndim else float(out)


def impulse_taps(p: SensorResponseParams, sample_rate: float, rel_tol: float = 1e-9) -> np.ndarray:
    """``dt * h(n dt)`` up to the last sample with ``|h| >= rel_tol * max|h|``."""
    dt = 1.0 / sample_rate
    # evaluate until both exponentials are far below rel_tol of their own amplitude
    n_max = int(np.ceil(np.log(1e3 / rel_tol) / (min(p.k2, p.k4) * dt))) + 2
    h = impulse_response(p, np.arange(n_max) * dt)
    peak = np.abs(h).max()
    keep = np.nonzero(np.abs(h) >= rel_tol * peak)[0]
    return dt * h[: keep[-1] + 1]


def frequency_response(p: SensorResponseParams, freq_hz, sample_rate: float):
    """Closed-form transfer function of the sampled filter at ``freq_hz``.

    Geometric-series sum of the untruncated taps:
    ``dt * (k1 / (1 - a z^-1) - k3 / (1 - b z^-1))`` with ``a = exp(-k2 dt)``,
    ``b = exp(-k4 dt)``, ``z = exp(j 2 pi f dt)``.
    """
    dt = 1.0 / sample_rate
    zinv = np.exp(-2j * np.pi * np.asarray(freq_hz, dtype=float) * dt)
    a, b = np.exp(-p.k2 * dt), np.exp(-p.k4 * dt)
    return dt * (p.k1 / (1 - a * zinv) - p.k3 / (1 - b * zinv))


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def filter_power(w, p: SensorResponseParams, sample_rate: float) -> np.ndarray:
    """Noise-free, unit-gain sensor output (no offset, no clipping)."""
    w = np.asarray(w, dtype=float)
    taps = impulse_taps(p, sample_rate)
    return np.convolve(w, taps)[: len(w)]


def amplify(clean, p: SensorResponseParams, seed: SeedLike = None) -> np.ndarray:
    """Amplifier stage: ``clean * gain + dc_offset + N(0, noise_std)``, clipped to the rails."""
    v = p.gain * np.asarray(clean, dtype=float) + p.dc_offset
    if p.noise_std > 0:
        v = v + _rng(seed).normal(0.0, p.noise_std, size=v.shape)
    return np.clip(v, p.clip_low, p.clip_high)


def sense(w, p: SensorResponseParams, sample_rate: float, seed: SeedLike = None) -> np.ndarray:
    """Sensor voltage for a sampled power sequence ``w`` (watts).

    Convolution with ``h``, then ``* gain + dc_offset + N(0, noise_std)``, then
    clipping to the rails.  Deterministic for a given seed.
    """
    return amplify(filter_power(w, p, sample_rate), p, seed)


def agc_gain(clean_peak: float, p: SensorResponseParams) -> float:
    """Static gain that brings a clean excursion of ``clean_peak`` to the AGC target."""
    if p.agc_target_fraction is None or not clean_peak > 0:
        return p.gain
    return p.agc_target_fraction * p.headroom / clean_peak


def with_gain(p: SensorResponseParams, gain: float) -> SensorResponseParams:
    return replace(p, gain=float(gain))
