"""Fourier-domain recovery: power spectra, peak SNR and linewidth."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .protocol import AveragedSignal, PhotonRecord

WINDOWS = ("rect", "hann")


@dataclass
class Spectrum:
    freqs: np.ndarray  # Hz
    power: np.ndarray
    t_rec: float
    window: str = "rect"
    pad: int = 1

    @property
    def amplitude(self):
        return np.sqrt(self.power)

    @property
    def resolution(self):
        return 1.0 / self.t_rec

    @property
    def bin_width(self):
        return self.freqs[1] - self.freqs[0]


@dataclass
class PeakReport:
    frequency: float
    snr: float
    fwhm: float
    noise_floor: float
    peak_power: float
    index: int

    def to_dict(self):
        return {k: (float(v) if k != "index" else int(v)) for k, v in self.__dict__.items()}


def _as_series(signal, period):
    if isinstance(signal, AveragedSignal):
        return np.asarray(signal.mean, dtype=float), signal.config.period
    if isinstance(signal, PhotonRecord):
        return np.asarray(signal.counts, dtype=float), signal.config.period
    if period is None:
        raise ValueError("period is required for raw arrays")
    return np.asarray(signal, dtype=float), float(period)


def power_spectrum(signal, window="rect", pad=1, period=None):
    """One-sided power spectrum of the mean-subtracted, windowed series.

    Normalized so that the sum over bins equals the time-domain variance for the
    rectangular window (any ``pad``).  Frequencies are m / (pad * n * T_L) in Hz.
    """
    x, T = _as_series(signal, period)
    n = x.size
    if n < 8:
        raise ValueError("need at least 8 samples for a spectrum")
    if window not in WINDOWS:
        raise ValueError(f"window must be one of {WINDOWS}")
    pad = int(pad)
    x = x - x.mean()
    w = np.ones(n) if window == "rect" else np.hanning(n)
    m = pad * n
    X = np.fft.rfft(x * w, m)
    p = np.abs(X) ** 2 / (m * np.sum(w * w))
    p[1:] *= 2.0
    if m % 2 == 0:
        p[-1] /= 2.0
    return Spectrum(np.fft.rfftfreq(m, T), p, n * T, window, pad)


def noise_floor(spectrum, exclude=None):
    """Robust rms amplitude of the noise bins.

    Uses the median amplitude: for Rayleigh-distributed noise amplitudes the
    rms equals median / sqrt(ln 2).  ``exclude`` is a boolean mask of bins to skip.
    """
    amp = spectrum.amplitude[1:]
    if exclude is not None:
        amp = amp[~exclude[1:]]
    if amp.size == 0:
        raise ValueError("no bins left for the noise estimate")
    return float(np.median(amp) / math.sqrt(math.log(2.0)))


def _parabolic(p, k):
    if 0 < k < p.size - 1:
        a, b, c = p[k - 1], p[k], p[k + 1]
        den = a - 2 * b + c
        if den != 0:
            return 0.5 * (a - c) / den
    return 0.0


def _fwhm(freqs, p, k):
    half = 0.5 * p[k]
    i = k
    while i > 0 and p[i] > half:
        i -= 1
    j = k
    while j < p.size - 1 and p[j] > half:
        j += 1
    if p[i] > half or p[j] > half:
        return math.nan
    lo = freqs[i] + (half - p[i]) * (freqs[i + 1] - freqs[i]) / (p[i + 1] - p[i])
    hi = freqs[j - 1] + (p[j - 1] - half) * (freqs[j] - freqs[j - 1]) / (p[j - 1] - p[j])
    return float(hi - lo)


def _report(spectrum, k, floor):
    p = spectrum.power
    off = _parabolic(p, k)
    return PeakReport(frequency=float(spectrum.freqs[k] + off * spectrum.bin_width),
                      snr=float(math.sqrt(p[k]) / floor) if floor > 0 else math.inf,
                      fwhm=_fwhm(spectrum.freqs, p, k), noise_floor=floor,
                      peak_power=float(p[k]), index=int(k))


def peak_metrics(spectrum, window):
    """Largest peak inside ``window`` = (f_lo, f_hi) in Hz.

    SNR is peak amplitude over the noise floor estimated from bins outside the window.
    """
    f_lo, f_hi = window
    inside = (spectrum.freqs >= f_lo) & (spectrum.freqs <= f_hi)
    inside[0] = False
    if not np.any(inside):
        raise ValueError("search window contains no spectral bins")
    idx = np.nonzero(inside)[0]
    k = int(idx[np.argmax(spectrum.power[idx])])
    return _report(spectrum, k, noise_floor(spectrum, exclude=inside))


def detect(spectrum, threshold, min_separation=None):
    """All local maxima with SNR >= threshold, strongest first.

    Peaks closer than ``min_separation`` Hz (default three resolution bins) to a
    stronger detection are treated as its leakage and dropped.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    p = spectrum.power
    floor = noise_floor(spectrum)
    sep = 3.0 * spectrum.resolution if min_separation is None else min_separation
    k = np.arange(1, p.size - 1)
    is_max = (p[k] > p[k - 1]) & (p[k] >= p[k + 1])
    cand = k[is_max & (np.sqrt(p[k]) >= threshold * floor)]
    cand = cand[np.argsort(-p[cand], kind="stable")]
    kept = []
    for c in cand:
        if all(abs(spectrum.freqs[c] - spectrum.freqs[q]) >= sep for q in kept):
            kept.append(int(c))
    return [_report(spectrum, c, floor) for c in kept]


def band_amplitude(spectrum, window, exclude=None):
    """Mean spectral amplitude over ``window`` (Hz), optionally skipping ``exclude`` = (lo, hi)."""
    f = spectrum.freqs
    sel = (f >= window[0]) & (f <= window[1])
    if exclude is not None:
        sel &= ~((f >= exclude[0]) & (f <= exclude[1]))
    sel[0] = False
    return float(np.mean(spectrum.amplitude[sel]))
