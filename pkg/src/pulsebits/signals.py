"""Deterministic signal processing: normalization, filtering, spectra, heart rate.

All functions are pure and operate on :class:`~pulsebits.types.PulseTrace`.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import signal as sps

from .types import BandConfig, FILTERED, PulseTrace, Spectrum

# Loss/evaluation pass band and the slightly wider SNR band. Both are kept
# as distinct named constants on purpose; do not unify them.
EVAL_BAND = BandConfig(0.75, 2.5)
SNR_BAND = BandConfig(0.7, 2.5)

WELCH_MAX_SEGMENT = 256


def _next_pow2(n: int) -> int:
    return 1 if n <= 1 else 2 ** int(np.ceil(np.log2(n)))


def zscore(trace: PulseTrace) -> PulseTrace:
    """Normalize to zero mean and unit population std; constant input maps to zeros."""
    x = trace.samples
    mu = x.mean()
    sd = x.std()
    if sd == 0.0:
        out = np.zeros_like(x)
    else:
        out = (x - mu) / sd
    return PulseTrace(out, trace.fs, trace.kind, trace.bits)


def bandpass(trace: PulseTrace, band: BandConfig = EVAL_BAND, order: int = 2) -> PulseTrace:
    """Zero-phase Butterworth band-pass (forward-backward filtering)."""
    band.validate_for(trace.fs)
    if band.lo <= 0:
        raise ValueError("band lo must be positive")
    b, a = sps.butter(order, [band.lo, band.hi], btype="bandpass", fs=trace.fs)
    padlen = 3 * max(len(b), len(a))
    if len(trace) <= padlen:
        raise ValueError(
            f"trace too short for zero-phase filtering: {len(trace)} <= padlen {padlen}"
        )
    out = sps.filtfilt(b, a, trace.samples)
    return PulseTrace(out, trace.fs, FILTERED, trace.bits)


def psd_welch(trace: PulseTrace, nfft: int | None = None) -> Spectrum:
    """Welch power spectral density.

    Segment length is min(T, 256) with 50% overlap and a Hann window, so a
    short trace degenerates to a single windowed periodogram. ``nfft``
    defaults to the next power of two >= 4x the segment length.
    """
    T = len(trace)
    if T < 64:
        raise ValueError(f"need at least 64 samples for a PSD, got {T}")
    nperseg = min(T, WELCH_MAX_SEGMENT)
    if nfft is None:
        nfft = _next_pow2(4 * nperseg)
    freqs, power = sps.welch(
        trace.samples,
        fs=trace.fs,
        window="hann",
        nperseg=nperseg,
        noverlap=nperseg // 2,
        nfft=nfft,
        detrend="constant",
    )
    return Spectrum(freqs, power)


def hr_from_trace(trace: PulseTrace, band: BandConfig = EVAL_BAND) -> float:
    """Heart rate in bpm: 60x the in-band dominant frequency of the Welch PSD."""
    if len(trace) < 160:
        raise ValueError(f"need at least 160 samples for HR estimation, got {len(trace)}")
    band.validate_for(trace.fs)
    spec = psd_welch(trace)
    mask = spec.band_mask(band.lo, band.hi)
    if not mask.any():
        raise ValueError("no spectral bins inside the HR band")
    if spec.power[mask].max() <= 0.0:
        raise ValueError("no dominant peak: trace has no in-band spectral power")
    return 60.0 * spec.peak_freq(band.lo, band.hi)


def snr_db(trace: PulseTrace, band: BandConfig = SNR_BAND) -> float:
    """In-band vs out-of-band spectral power ratio in dB, after z-scoring."""
    normed = zscore(trace)
    spec = psd_welch(normed)
    mask = spec.band_mask(band.lo, band.hi)
    total = np.trapezoid(spec.power, spec.freqs)
    inband = np.trapezoid(np.where(mask, spec.power, 0.0), spec.freqs)
    outband = total - inband
    if outband <= 0.0:
        warnings.warn("zero out-of-band power; SNR is unbounded", RuntimeWarning)
        return float("inf")
    if inband <= 0.0:
        return float("-inf")
    return float(10.0 * np.log10(inband / outband))


def resample_trace(trace: PulseTrace, fs_out: float) -> PulseTrace:
    """Linear-interpolation resampling onto a uniform grid at ``fs_out``."""
    if fs_out <= 0:
        raise ValueError("fs_out must be positive")
    if abs(fs_out - trace.fs) < 1e-9:
        return trace
    t_in = np.arange(len(trace)) / trace.fs
    n_out = max(2, int(round(t_in[-1] * fs_out)) + 1)
    t_out = np.arange(n_out) / fs_out
    t_out = t_out[t_out <= t_in[-1] + 1e-12]
    out = np.interp(t_out, t_in, trace.samples)
    return PulseTrace(out, fs_out, trace.kind, trace.bits)
