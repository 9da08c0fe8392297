"""Training-free reference estimators: green channel, chrominance, and
plane-orthogonal-to-skin projections of RGB traces."""
from __future__ import annotations

import numpy as np

from .signals import EVAL_BAND, bandpass, zscore
from .types import BandConfig, ClipTensor, ESTIMATE, PulseTrace, RgbTrace

POS_WINDOW_SECONDS = 1.6


def extract_rgb(clip: ClipTensor) -> RgbTrace:
    """Spatial mean of each channel per frame."""
    if clip.channels != 3:
        raise ValueError(f"expected 3 channels, got {clip.channels}")
    means = clip.pixels.mean(axis=(2, 3)).astype(np.float64)
    return RgbTrace(r=means[0], g=means[1], b=means[2], fs=clip.fs)


def _is_numerical_dust(x: np.ndarray, reference_scale: float) -> bool:
    # filtfilt of a (near-)constant leaves ~1e-13 residue that z-scoring
    # would amplify into a fake full-scale signal
    return x.std() <= 1e-9 * max(reference_scale, 1e-30)


def _finalize(samples: np.ndarray, fs: float, band: BandConfig) -> PulseTrace:
    trace = PulseTrace(samples, fs, ESTIMATE)
    filtered = bandpass(trace, band)
    if _is_numerical_dust(filtered.samples, abs(samples.mean()) + samples.std()):
        return PulseTrace(np.zeros_like(filtered.samples), fs, ESTIMATE)
    out = zscore(filtered)
    return PulseTrace(out.samples, fs, ESTIMATE)


def green_method(rgb: RgbTrace, band: BandConfig = EVAL_BAND) -> PulseTrace:
    """Band-passed, z-scored green channel."""
    return _finalize(rgb.g, rgb.fs, band)


def chrom_alpha(xf: np.ndarray, yf: np.ndarray) -> float:
    """Mixing ratio sigma(X_f) / sigma(Y_f) of the filtered chrominance signals."""
    sy = yf.std()
    return float(xf.std() / sy) if sy > 0 else 0.0


def chrom_method(rgb: RgbTrace, band: BandConfig = EVAL_BAND) -> PulseTrace:
    """Chrominance combination X = 3R - 2G, Y = 1.5R + G - 1.5B on unit-mean
    channels, mixed with the band-limited std ratio alpha = sigma(X)/sigma(Y)."""
    for name, ch in (("r", rgb.r), ("g", rgb.g), ("b", rgb.b)):
        if abs(ch.mean()) < 1e-12:
            raise ValueError(f"channel {name} has zero mean; cannot normalize")
    rn = rgb.r / rgb.r.mean()
    gn = rgb.g / rgb.g.mean()
    bn = rgb.b / rgb.b.mean()
    x = 3.0 * rn - 2.0 * gn
    y = 1.5 * rn + gn - 1.5 * bn
    xf = bandpass(PulseTrace(x, rgb.fs), band).samples
    yf = bandpass(PulseTrace(y, rgb.fs), band).samples
    s = xf - chrom_alpha(xf, yf) * yf
    if _is_numerical_dust(s, xf.std() + yf.std()):
        return PulseTrace(np.zeros_like(s), rgb.fs, ESTIMATE)
    return PulseTrace(zscore(PulseTrace(s, rgb.fs)).samples, rgb.fs, ESTIMATE)


def pos_method(rgb: RgbTrace, band: BandConfig = EVAL_BAND) -> PulseTrace:
    """Sliding-window plane-orthogonal-to-skin projection with overlap-add.

    Channels are normalized by their window means; the projections are
    S1 = G - B and S2 = G + B - 2R, combined as S1 + (sigma(S1)/sigma(S2)) S2.
    """
    n = len(rgb)
    win = int(round(POS_WINDOW_SECONDS * rgb.fs))
    if n < win:
        raise ValueError(f"trace of {n} frames shorter than one {win}-frame window")
    c = np.stack([rgb.r, rgb.g, rgb.b])  # (3, T)
    h = np.zeros(n)
    for start in range(0, n - win + 1):
        seg = c[:, start:start + win]
        mean = seg.mean(axis=1, keepdims=True)
        if np.any(mean == 0):
            continue
        cn = seg / mean
        s1 = cn[1] - cn[2]
        s2 = cn[1] + cn[2] - 2.0 * cn[0]
        sd2 = s2.std()
        p = s1 + (s1.std() / sd2) * s2 if sd2 > 0 else s1
        h[start:start + win] += p - p.mean()
    if h.std() == 0:
        return PulseTrace(np.zeros_like(h), rgb.fs, ESTIMATE)
    return _finalize(h, rgb.fs, band)
