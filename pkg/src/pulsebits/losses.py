"""Differentiable training losses shared by both stages.

Inputs may be numpy arrays or torch tensors; tensors keep their autograd
graph. Batched inputs (..., T) are reduced by averaging over leading dims.
"""
from __future__ import annotations

import numpy as np
import torch

from .types import BandConfig
from .signals import EVAL_BAND


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def neg_pearson(a, b) -> torch.Tensor:
    """1 - Pearson correlation; 0 for perfectly correlated pairs, 2 for anti-correlated."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < 2:
        raise ValueError("need at least 2 samples")
    ac = a - a.mean(dim=-1, keepdim=True)
    bc = b - b.mean(dim=-1, keepdim=True)
    va = (ac * ac).sum(dim=-1)
    vb = (bc * bc).sum(dim=-1)
    if bool((va == 0).any()) or bool((vb == 0).any()):
        raise ValueError("constant input has undefined correlation")
    rho = (ac * bc).sum(dim=-1) / torch.sqrt(va * vb)
    return (1.0 - rho).mean()


def band_bin_range(n_samples: int, fs: float, band: BandConfig = EVAL_BAND) -> tuple[int, int]:
    """Inclusive [first, last] rfft bin indices falling inside the band."""
    n_bins = n_samples // 2 + 1
    freqs = np.arange(n_bins) * fs / n_samples
    idx = np.flatnonzero((freqs >= band.lo) & (freqs <= band.hi))
    if idx.size < 3:
        raise ValueError(
            f"only {idx.size} spectral bins inside ({band.lo}, {band.hi}) Hz; "
            "increase the trace length"
        )
    return int(idx[0]), int(idx[-1])


def periodogram_power(x) -> torch.Tensor:
    """Full-length single-window periodogram |rfft|^2 (differentiable)."""
    x = _as_tensor(x)
    spec = torch.fft.rfft(x, dim=-1)
    return spec.real**2 + spec.imag**2


def spectral_target_bin(target, fs: float, band: BandConfig = EVAL_BAND) -> int:
    """Global rfft bin index of the in-band power maximum of ``target``."""
    target = _as_tensor(target)
    if target.dim() != 1:
        raise ValueError("target must be a single trace")
    lo, hi = band_bin_range(target.shape[-1], fs, band)
    power = periodogram_power(target.detach())
    return lo + int(torch.argmax(power[lo : hi + 1]))


def spectral_ce(pred, target, fs: float, band: BandConfig = EVAL_BAND) -> torch.Tensor:
    """Cross-entropy between pred's in-band spectral distribution and target's peak bin.

    The in-band periodogram of ``pred`` is normalized to unit sum and used as
    softmax logits over frequency-bin classes; the class label is the in-band
    argmax bin of ``target``. Minimal when both dominant frequencies agree.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    T = pred.shape[-1]
    if T < 64:
        raise ValueError(f"need at least 64 samples, got {T}")
    lo, hi = band_bin_range(T, fs, band)

    power = periodogram_power(pred)[..., lo : hi + 1]
    logits = power / (power.sum(dim=-1, keepdim=True) + 1e-12)
    log_probs = torch.log_softmax(logits, dim=-1)

    tgt_power = periodogram_power(target.detach())[..., lo : hi + 1]
    tgt_bin = torch.argmax(tgt_power, dim=-1)
    ce = -torch.gather(log_probs, -1, tgt_bin.unsqueeze(-1)).squeeze(-1)
    return ce.mean()


def commitment(z, quantized) -> torch.Tensor:
    """Squared L2 distance pulling encoder outputs toward their (detached) codes."""
    z = _as_tensor(z)
    q = _as_tensor(quantized).detach()
    if z.shape != q.shape:
        raise ValueError(f"shape mismatch {tuple(z.shape)} vs {tuple(q.shape)}")
    return ((z - q) ** 2).sum(dim=-1).mean()


def distance_ce(logits, codes, target_indices) -> torch.Tensor:
    """Distance-based cross-entropy over codebook entries.

    Class scores are the negative absolute distances between the scalar
    logits and each code, so nearby codes receive mass proportional to
    amplitude proximity rather than being treated as unrelated classes.
    """
    logits = _as_tensor(logits)
    codes = _as_tensor(codes).to(logits.dtype)
    idx = torch.as_tensor(np.asarray(target_indices), dtype=torch.long)
    if idx.shape != logits.shape:
        raise ValueError(f"indices shape {tuple(idx.shape)} != logits {tuple(logits.shape)}")
    scores = -torch.abs(logits.unsqueeze(-1) - codes)
    log_probs = torch.log_softmax(scores, dim=-1)
    ce = -torch.gather(log_probs, -1, idx.unsqueeze(-1)).squeeze(-1)
    return ce.mean()
