"""Differentiable building blocks: dilated convolutions, bidirectional
selective state-space sequence mixing, soft codebook reconstruction,
learnable positional encodings and parameter checkpointing.

Sequence tensors are channel-last: (batch, time, channels).
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

PARAM_CONTAINER_VERSION = 1


class DilatedConvBlock(nn.Module):
    """Stack of same-length 1D dilated convolutions on a scalar sequence.

    GELU follows every layer except the last. With the default five layers
    of kernel 5 and dilations 1,2,4,8,16 the receptive field is 125 frames.
    """

    def __init__(self, kernel: int = 5, dilations: tuple[int, ...] = (1, 2, 4, 8, 16)):
        super().__init__()
        self.kernel = kernel
        self.dilations = tuple(dilations)
        self.convs = nn.ModuleList(
            nn.Conv1d(1, 1, kernel, dilation=d, padding=d * (kernel - 1) // 2)
            for d in self.dilations
        )
        # identity-dominant start: a deep single-channel stack under plain
        # fan-in init attenuates the signal ~sqrt(3) per layer, leaving the
        # quantizer tracking noise
        with torch.no_grad():
            for conv in self.convs:
                conv.weight *= 0.25
                conv.weight[0, 0, kernel // 2] += 1.0
                conv.bias.zero_()

    @property
    def receptive_field(self) -> int:
        return 1 + sum((self.kernel - 1) * d for d in self.dilations)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != 1:
            raise ValueError(f"expected (B, T, 1), got {tuple(x.shape)}")
        h = x.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = F.gelu(h)
        return h.transpose(1, 2)


class SequenceNorm(nn.Module):
    """Normalization over the time axis with per-channel affine parameters.

    Channel-wise layer norm degenerates to a constant at model dimension 1,
    so the post-mixing norm standardizes each channel across time instead.
    ``init_weight`` < 1 gates a residual branch to a small contribution at
    the start (the normalization otherwise rescales any branch output back
    to unit variance, drowning the skip path at init).
    """

    def __init__(self, channels: int, eps: float = 1e-5, init_weight: float = 1.0):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.full((channels,), float(init_weight)))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, unbiased=False, keepdim=True)
        return (x - mu) / torch.sqrt(var + self.eps) * self.weight + self.bias


class SelectiveScan(nn.Module):
    """One direction of a selective state-space mixer.

    Per token the step size, input and output couplings (delta, B, C) are
    linear functions of the token; delta passes through softplus. The
    diagonal state matrix starts at -(1..state) and the recurrence is
    h_t = exp(delta_t * A) * h_{t-1} + (delta_t * B_t) x_t with readout
    y_t = <C_t, h_t> + D x_t, gated by a parallel SiLU branch.
    """

    def __init__(self, d: int, state: int = 16, kernel: int = 5, expand: int = 2):
        super().__init__()
        self.d = d
        self.state = state
        self.kernel = kernel
        inner = expand * d
        self.inner = inner
        self.dt_rank = max(1, math.ceil(d / 16))

        self.in_proj = nn.Linear(d, inner, bias=False)
        self.gate_proj = nn.Linear(d, inner, bias=False)
        self.conv = nn.Conv1d(inner, inner, kernel, groups=inner, bias=True)
        self.x_proj = nn.Linear(inner, self.dt_rank + 2 * state, bias=False)
        self.dt_proj = nn.Linear(self.dt_rank, inner, bias=True)
        self.out_proj = nn.Linear(inner, d, bias=False)

        a = torch.arange(1, state + 1, dtype=torch.float32).repeat(inner, 1)
        self.A_log = nn.Parameter(torch.log(a))
        self.D = nn.Parameter(torch.ones(inner))
        self._init_dt()

    def _init_dt(self, dt_min: float = 1e-3, dt_max: float = 0.1):
        # bias so that softplus(dt) starts inside [dt_min, dt_max]
        with torch.no_grad():
            std = self.dt_rank**-0.5
            self.dt_proj.weight.uniform_(-std, std)
            u = torch.rand(self.inner)
            dt = torch.exp(u * (math.log(dt_max) - math.log(dt_min)) + math.log(dt_min))
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B_, T, _ = x.shape
        u = self.in_proj(x).transpose(1, 2)
        u = self.conv(F.pad(u, (self.kernel - 1, 0)))  # causal: left pad only
        u = F.silu(u.transpose(1, 2))  # (B, T, inner)

        if not torch.isfinite(u).all():
            raise FloatingPointError("non-finite activations in selective scan input")

        proj = self.x_proj(u)
        dt, b_tok, c_tok = torch.split(proj, [self.dt_rank, self.state, self.state], dim=-1)
        delta = F.softplus(self.dt_proj(dt))  # (B, T, inner)
        A = -torch.exp(self.A_log)  # (inner, state)

        decay = torch.exp(delta.unsqueeze(-1) * A)  # (B, T, inner, state)
        drive = (delta * u).unsqueeze(-1) * b_tok.unsqueeze(2)  # (B, T, inner, state)

        h = torch.zeros(B_, self.inner, self.state, dtype=x.dtype, device=x.device)
        outs = []
        for t in range(T):
            h = decay[:, t] * h + drive[:, t]
            outs.append((h * c_tok[:, t].unsqueeze(1)).sum(-1))
        y = torch.stack(outs, dim=1) + self.D * u
        y = y * F.silu(self.gate_proj(x))
        return self.out_proj(y)


class BiMamba(nn.Module):
    """Bidirectional selective state-space block with post-norm and residual.

    Separate forward and time-reversed branches are summed, normalized over
    time, and added back to the input. ``tie_directions`` shares one branch
    for both directions (used by the symmetry tests).
    """

    def __init__(self, d: int, state: int = 16, kernel: int = 5, expand: int = 2,
                 tie_directions: bool = False, gate_init: float = 0.1):
        super().__init__()
        self.d = d
        self.fwd = SelectiveScan(d, state, kernel, expand)
        self.bwd = self.fwd if tie_directions else SelectiveScan(d, state, kernel, expand)
        self.norm = SequenceNorm(d, init_weight=gate_init)

    def mix(self, x: torch.Tensor) -> torch.Tensor:
        """Pre-residual path: normalized sum of both scan directions."""
        rev = torch.flip(x, dims=[1])
        inner = self.fwd(x) + torch.flip(self.bwd(rev), dims=[1])
        return self.norm(inner)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[-1] != self.d:
            raise ValueError(f"expected (B, T, {self.d}), got {tuple(x.shape)}")
        return x + self.mix(x)


def soft_reconstruct(logits: torch.Tensor, codes: torch.Tensor,
                     temperature: float = 1.0) -> torch.Tensor:
    """Differentiable decode: softmax over negative code distances times codes.

    Output lies in [min(codes), max(codes)] elementwise (convex combination).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    codes = codes.to(logits.dtype)
    dist = torch.abs(logits.unsqueeze(-1) - codes)
    probs = torch.softmax(-dist / temperature, dim=-1)
    return probs @ codes


class PositionalEncoding(nn.Module):
    """Learnable additive positional table for sequences of a fixed length."""

    def __init__(self, length: int, d: int, init_std: float = 0.02):
        super().__init__()
        self.table = nn.Parameter(torch.randn(length, d) * init_std)

    def forward(self, length: int) -> torch.Tensor:
        if length != self.table.shape[0]:
            raise ValueError(
                f"positional table holds {self.table.shape[0]} steps, got sequence of {length}"
            )
        return self.table


def param_count(module) -> int:
    """Total number of trainable scalar parameters."""
    if isinstance(module, nn.Module):
        params = (p for p in module.parameters() if p.requires_grad)
    else:
        params = iter(module)
    return sum(p.numel() for p in params)


def _checkpoint_paths(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix != ".npz":
        path = Path(str(path) + ".npz")
    return path, Path(str(path) + ".json")


def save_params(module: nn.Module, path: str | Path, manifest: dict | None = None) -> None:
    """Named-array checkpoint: float32 arrays in an npz plus a JSON manifest."""
    npz_path, meta_path = _checkpoint_paths(path)
    arrays = {
        name: tensor.detach().cpu().numpy().astype("<f4")
        for name, tensor in module.state_dict().items()
    }
    np.savez(npz_path, **arrays)
    meta = dict(manifest or {})
    meta["version"] = PARAM_CONTAINER_VERSION
    meta["arrays"] = {name: list(a.shape) for name, a in arrays.items()}
    meta_path.write_text(json.dumps(meta, indent=2))


def load_params(module: nn.Module, path: str | Path) -> dict:
    """Restore a checkpoint written by :func:`save_params`; returns its manifest."""
    npz_path, meta_path = _checkpoint_paths(path)
    if not meta_path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("version") != PARAM_CONTAINER_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    with np.load(npz_path) as data:
        state = {}
        ref = module.state_dict()
        for name, tensor in ref.items():
            if name not in data:
                raise KeyError(f"checkpoint missing array {name}")
            state[name] = torch.as_tensor(np.asarray(data[name]), dtype=tensor.dtype)
    module.load_state_dict(state)
    return meta
