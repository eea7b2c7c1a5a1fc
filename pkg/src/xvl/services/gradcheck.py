"""Finite-difference check of autograd gradients on sampled parameter entries."""

from collections.abc import Callable, Iterable
from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class GradCheckResult:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-8)
        return abs(self.analytic - self.numeric) / scale


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[tuple[str, nn.Parameter]],
    n_samples: int = 3,
    eps: float = 1e-6,
    seed: int = 0,
) -> list[GradCheckResult]:
    """Compare d loss / d theta against central differences.

    loss_fn must be deterministic and recompute the loss from the current
    parameter values. Use a double-precision model for tight tolerances.
    """
    params = [(name, p) for name, p in params if p.requires_grad]
    for _, p in params:
        p.grad = None
    loss_fn().backward()

    generator = torch.Generator().manual_seed(seed)
    results = []
    for name, p in params:
        if p.grad is None:
            continue
        analytic = p.grad.detach().flatten().clone()
        count = min(n_samples, p.numel())
        for index in torch.randperm(p.numel(), generator=generator)[:count].tolist():
            flat = p.data.view(-1)
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + eps
                plus = loss_fn().item()
                flat[index] = original - eps
                minus = loss_fn().item()
                flat[index] = original
            results.append(
                GradCheckResult(name, index, analytic[index].item(), (plus - minus) / (2 * eps))
            )
    return results


def max_relative_error(results: list[GradCheckResult], min_magnitude: float = 1e-6) -> float:
    """Largest relative error among entries whose gradient is not negligible."""
    errors = [
        r.relative_error
        for r in results
        if max(abs(r.analytic), abs(r.numeric)) >= min_magnitude
    ]
    return max(errors, default=0.0)
