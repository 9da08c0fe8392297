"""Finite-difference gradient oracles shared by block tests and acceptance."""
import numpy as np
import torch


def fd_gradient(fn, x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Coordinate-wise central differences of a scalar function of x."""
    g = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = g.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn().item()
        flat[i] = orig - eps
        lo = fn().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def directional_fd(fn, tensors, direction, eps: float = 1e-5) -> float:
    """Central difference of fn along a unit direction in joint tensor space."""
    with torch.no_grad():
        for t, d in zip(tensors, direction):
            t += eps * d
        hi = fn().item()
        for t, d in zip(tensors, direction):
            t -= 2 * eps * d
        lo = fn().item()
        for t, d in zip(tensors, direction):
            t += eps * d
    return (hi - lo) / (2 * eps)


def check_gradients(fn, tensors, n_directions: int = 4, rtol: float = 1e-3,
                    seed: int = 0) -> float:
    """Compare autograd against FD directional derivatives over random directions.

    ``tensors`` are float64 leaf tensors with requires_grad=True that ``fn``
    reads. Returns the worst relative error seen.
    """
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = fn()
    loss.backward()
    grads = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t)
             for t in tensors]
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_directions):
        direction = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in tensors]
        norm = torch.sqrt(sum((d**2).sum() for d in direction))
        direction = [d / norm for d in direction]
        analytic = float(sum((g * d).sum() for g, d in zip(grads, direction)))
        numeric = directional_fd(fn, tensors, direction)
        scale = max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, abs(analytic - numeric) / scale)
    assert worst <= rtol, f"gradient mismatch: rel err {worst:.2e} > {rtol}"
    return worst


def module_param_tensors(module: torch.nn.Module) -> list[torch.Tensor]:
    return [p for p in module.parameters() if p.requires_grad]
