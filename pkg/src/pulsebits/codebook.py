"""Scalar codebooks: nearest-code assignment, EMA updates, uniform counterpart."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .signals import EVAL_BAND, hr_from_trace
from .types import BandConfig, PulseTrace

CHECKPOINT_VERSION = 1


@dataclass
class Codebook:
    """An ordered set of 2^bits learnable scalar codes with EMA accumulators."""

    bits: int
    codes: np.ndarray
    ema_count: np.ndarray = field(default=None)  # type: ignore[assignment]
    ema_sum: np.ndarray = field(default=None)  # type: ignore[assignment]
    decay: float = 0.99
    eps: float = 1e-5

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        self.codes = np.asarray(self.codes, dtype=np.float64).copy()
        k = 2**self.bits
        if self.codes.shape != (k,):
            raise ValueError(f"expected {k} codes for {self.bits}-bit book, got {self.codes.shape}")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("codes must be finite")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        # Fresh accumulators behave as if each code had seen one sample equal
        # to itself, which keeps unassigned codes stable from the start.
        if self.ema_count is None:
            self.ema_count = np.ones(k, dtype=np.float64)
        else:
            self.ema_count = np.asarray(self.ema_count, dtype=np.float64).copy()
        if self.ema_sum is None:
            self.ema_sum = self.codes.copy()
        else:
            self.ema_sum = np.asarray(self.ema_sum, dtype=np.float64).copy()
        if self.ema_count.shape != (k,) or self.ema_sum.shape != (k,):
            raise ValueError("EMA accumulator shapes must match the codebook size")
        if np.any(self.ema_count < 0):
            raise ValueError("ema_count must be non-negative")

    @property
    def size(self) -> int:
        return self.codes.size

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.codes.tobytes())
        h.update(self.ema_count.tobytes())
        h.update(self.ema_sum.tobytes())
        return h.hexdigest()[:16]

    @classmethod
    def from_quantiles(cls, samples: np.ndarray, bits: int, decay: float = 0.99,
                       eps: float = 1e-5) -> "Codebook":
        """Initialize codes at evenly spaced quantiles of a sample pool."""
        samples = np.asarray(samples, dtype=np.float64).ravel()
        if samples.size == 0:
            raise ValueError("empty sample pool")
        k = 2**bits
        q = (np.arange(k) + 0.5) / k
        codes = np.quantile(samples, q)
        return cls(bits=bits, codes=codes, decay=decay, eps=eps)


@dataclass
class Assignment:
    """Nearest-code indices (0-based) and the resulting quantized sequence."""

    indices: np.ndarray
    quantized: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.quantized = np.asarray(self.quantized, dtype=np.float64)
        if self.indices.shape != self.quantized.shape:
            raise ValueError("indices and quantized must share a shape")


def assign_codes(z: np.ndarray, cb: Codebook) -> Assignment:
    """Map each sample to its nearest code; ties break to the smaller index."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite values cannot be quantized")
    dist = np.abs(z[..., None] - cb.codes)
    indices = np.argmin(dist, axis=-1)
    return Assignment(indices=indices, quantized=cb.codes[indices])


def ema_update(cb: Codebook, z: np.ndarray, assign: Assignment) -> Codebook:
    """Exponential-moving-average code refresh with Laplace-smoothed counts.

    Mutates ``cb`` in place (single writer) and returns it.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    idx = assign.indices.ravel()
    if z.shape != idx.shape:
        raise ValueError("assignment does not match the sample batch")
    k = cb.size
    n_k = np.bincount(idx, minlength=k).astype(np.float64)
    s_k = np.bincount(idx, weights=z, minlength=k)
    g = cb.decay
    cb.ema_count = g * cb.ema_count + (1.0 - g) * n_k
    cb.ema_sum = g * cb.ema_sum + (1.0 - g) * s_k
    total = cb.ema_count.sum()
    if total > 0:
        smoothed = (cb.ema_count + cb.eps) / (total + k * cb.eps) * total
        cb.codes = cb.ema_sum / smoothed
    return cb


def uniform_quantize(y: np.ndarray, bits: int, lo: float = -3.0, hi: float = 3.0) -> Assignment:
    """Non-learnable quantization onto 2^bits equal-width bins over [lo, hi].

    Inputs are clamped to the range; the code value of each bin is its center.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if not lo < hi:
        raise ValueError("need lo < hi")
    y = np.clip(np.asarray(y, dtype=np.float64), lo, hi)
    k = 2**bits
    width = (hi - lo) / k
    indices = np.minimum((np.floor((y - lo) / width)).astype(np.int64), k - 1)
    centers = lo + (np.arange(k) + 0.5) * width
    return Assignment(indices=indices, quantized=centers[indices])


def uniform_codebook(bits: int, lo: float = -3.0, hi: float = 3.0) -> Codebook:
    """The bin-center codebook matching :func:`uniform_quantize`."""
    k = 2**bits
    width = (hi - lo) / k
    centers = lo + (np.arange(k) + 0.5) * width
    return Codebook(bits=bits, codes=centers)


def utilization(assign_batch: Iterable[Assignment], cb: Codebook) -> np.ndarray:
    """Fraction of timesteps assigned to each code over a batch; sums to 1."""
    batch = list(assign_batch)
    if not batch:
        raise ValueError("empty assignment batch")
    counts = np.zeros(cb.size, dtype=np.float64)
    total = 0
    for a in batch:
        counts += np.bincount(a.indices.ravel(), minlength=cb.size)
        total += a.indices.size
    return counts / total


def label_fidelity_mae(pseudo: Sequence[PulseTrace], truth: Sequence[PulseTrace],
                       band: BandConfig = EVAL_BAND) -> float:
    """Mean absolute HR difference (bpm) between paired pseudo and truth traces."""
    if len(pseudo) != len(truth):
        raise ValueError(f"unpaired sets: {len(pseudo)} pseudo vs {len(truth)} truth")
    if not pseudo:
        raise ValueError("empty trace sets")
    errs = [abs(hr_from_trace(p, band) - hr_from_trace(t, band)) for p, t in zip(pseudo, truth)]
    return float(np.mean(errs))


def save_codebook(cb: Codebook, path: str | Path) -> None:
    """Write codes and EMA accumulators as little-endian float64 + JSON sidecar."""
    path = Path(path)
    payload = np.concatenate([cb.codes, cb.ema_count, cb.ema_sum]).astype("<f8")
    path.write_bytes(payload.tobytes())
    sidecar = {
        "bits": cb.bits,
        "decay": cb.decay,
        "eps": cb.eps,
        "version": CHECKPOINT_VERSION,
        "layout": ["codes", "ema_count", "ema_sum"],
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"missing codebook sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported codebook version {meta.get('version')} at {path}")
    k = 2 ** int(meta["bits"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size != 3 * k:
        raise ValueError(f"corrupt codebook payload at {path}: {raw.size} != {3 * k} values")
    return Codebook(
        bits=int(meta["bits"]),
        codes=raw[:k],
        ema_count=raw[k : 2 * k],
        ema_sum=raw[2 * k :],
        decay=float(meta["decay"]),
        eps=float(meta["eps"]),
    )
