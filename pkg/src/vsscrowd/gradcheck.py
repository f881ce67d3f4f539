"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    per_tensor: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tolerance)

    def __str__(self) -> str:
        status = "ok" if self.passed else "FAILED"
        return f"gradcheck[{self.name}] {status}: max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:.1e})"


def _scalarize(out: Tensor, weights: Optional[np.ndarray]) -> Tensor:
    if weights is None:
        return out.sum()
    return (out * weights).sum()


def check_gradients(op: Callable[..., Tensor], inputs, tolerance: float = 1e-4, *,
                    params: Sequence[Tensor] = (), h: float = 1e-5,
                    weights: Optional[np.ndarray] = None, name: Optional[str] = None,
                    floor: float = 1e-8) -> GradCheckReport:
    """Compare analytic gradients of ``sum(weights * op(*inputs))`` to central differences.

    The error per tensor is ``max|analytic - numeric| / max(max|analytic|, max|numeric|, floor)``.
    ``params`` are additional leaves (e.g. module weights) checked alongside the inputs.
    Pass ``weights`` to project a non-scalar output with something other than a plain sum,
    which matters for ops whose plain sum is constant (normalisation layers).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    name = name or getattr(op, "__name__", "op")
    leaves = inputs + [p for p in params if all(p is not q for q in inputs)]
    for t in leaves:
        t.requires_grad = True
        t.grad = None

    out = _scalarize(op(*inputs), weights)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    per_tensor: Dict[str, float] = {}
    worst = 0.0
    with no_grad():
        for k, (t, ga) in enumerate(zip(leaves, analytic)):
            gn = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            gflat = gn.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalarize(op(*inputs), weights).item()
                flat[i] = orig - h
                fm = _scalarize(op(*inputs), weights).item()
                flat[i] = orig
                gflat[i] = (fp - fm) / (2.0 * h)
            scale = max(np.abs(ga).max(initial=0.0), np.abs(gn).max(initial=0.0), floor)
            err = float(np.abs(ga - gn).max(initial=0.0) / scale)
            label = "input" if k < len(inputs) else "param"
            per_tensor[f"{label}{k}{tuple(t.shape)}"] = err
            worst = max(worst, err)
    for t in leaves:
        t.grad = None
    return GradCheckReport(name=name, max_rel_error=worst, tolerance=tolerance, per_tensor=per_tensor)
