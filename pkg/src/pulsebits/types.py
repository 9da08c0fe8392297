"""Shared domain types for pulse traces, spectra, and video clips."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAW = "raw"
FILTERED = "filtered"
PSEUDO = "pseudo"
ESTIMATE = "estimate"

_KINDS = (RAW, FILTERED, PSEUDO, ESTIMATE)


@dataclass
class PulseTrace:
    """A finite real-valued time series with its sampling rate.

    ``kind`` distinguishes ground truth ("raw"), band-passed ("filtered"),
    quantized pseudo labels ("pseudo", with ``bits`` set) and model output
    ("estimate").
    """

    samples: np.ndarray
    fs: float
    kind: str = RAW
    bits: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"trace must be 1-D, got shape {self.samples.shape}")
        if self.samples.size < 2:
            raise ValueError("trace needs at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            bad = int(np.flatnonzero(~np.isfinite(self.samples))[0])
            raise ValueError(f"non-finite sample at index {bad}")
        if self.fs <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        if self.kind == PSEUDO and (self.bits is None or self.bits < 1):
            raise ValueError("pseudo trace requires bits >= 1")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class Spectrum:
    """One-sided power spectral density on a strictly increasing frequency grid."""

    freqs: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.freqs.shape != self.power.shape or self.freqs.ndim != 1:
            raise ValueError("freqs and power must be 1-D of equal length")
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("freqs must be strictly increasing")
        if np.any(self.power < 0):
            raise ValueError("power must be non-negative")

    def band_mask(self, lo: float, hi: float) -> np.ndarray:
        return (self.freqs >= lo) & (self.freqs <= hi)

    def peak_freq(self, lo: float, hi: float) -> float:
        mask = self.band_mask(lo, hi)
        if not mask.any():
            raise ValueError(f"no spectral bins inside ({lo}, {hi}) Hz")
        sub = np.flatnonzero(mask)
        return float(self.freqs[sub[np.argmax(self.power[sub])]])


@dataclass(frozen=True)
class BandConfig:
    """Pass band in Hz; must stay below the Nyquist rate of any trace it filters."""

    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError(f"need 0 < lo < hi, got ({self.lo}, {self.hi})")

    def validate_for(self, fs: float) -> None:
        if self.hi >= fs / 2:
            raise ValueError(
                f"band hi {self.hi} Hz must be below Nyquist {fs / 2} Hz"
            )


@dataclass
class RgbTrace:
    """Per-frame mean red/green/blue intensities of a clip."""

    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    fs: float

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.g = np.asarray(self.g, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if not (self.r.shape == self.g.shape == self.b.shape) or self.r.ndim != 1:
            raise ValueError("r/g/b must be 1-D arrays of equal length")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    def __len__(self) -> int:
        return self.r.size


@dataclass
class ClipTensor:
    """A video clip shaped (channels, frames, height, width) with its frame rate."""

    pixels: np.ndarray
    fs: float

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 4:
            raise ValueError(f"clip must be 4-D (C,T,H,W), got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("clip contains non-finite pixels")
        if self.fs <= 0:
            raise ValueError("fs must be positive")

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def frames(self) -> int:
        return self.pixels.shape[1]
