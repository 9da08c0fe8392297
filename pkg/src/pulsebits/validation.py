"""Input validation helpers shared by the estimators and the CLI."""
from __future__ import annotations

import hashlib

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Missing or inconsistent data (CLI exit code 3)."""


class NumericalError(RuntimeError):
    """Training or evaluation diverged (CLI exit code 4)."""


def check_trace_matrix(X, min_len: int = 2) -> np.ndarray:
    """Coerce to a finite float64 (n_traces, T) matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a (n_traces, T) matrix, got shape {X.shape}")
    if X.shape[1] < min_len:
        raise ValueError(f"traces of length {X.shape[1]} are shorter than {min_len}")
    if not np.all(np.isfinite(X)):
        raise ValueError("traces contain non-finite values")
    return X


def check_clip_batch(X) -> np.ndarray:
    """Coerce to a finite float32 (n_clips, 3, T, H, W) batch."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5:
        raise ValueError(f"expected (n_clips, C, T, H, W), got shape {X.shape}")
    if X.shape[1] != 3:
        raise ValueError(f"expected 3 channels, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("clips contain non-finite values")
    return X


def derive_seed(master: int, tag: str) -> int:
    """Stable per-component seed from a master seed and a component tag."""
    digest = hashlib.sha256(f"{master}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31 - 1)
