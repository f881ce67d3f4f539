"""Selective scan: the input-dependent linear recurrence at the heart of VSS blocks.

For each route ``k`` and channel ``d``::

    h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t      (h_0 = 0)
    y_t = <C_t, h_t> + D * u_t

The recurrence runs in a compiled kernel when ``_scan_kernel`` was built,
otherwise in the numpy fallback. ``VSSCROWD_SCAN_BACKEND=python`` forces the
fallback.
"""
from __future__ import annotations

import math
import os
from contextlib import contextmanager

import numpy as np

from . import _scan_ref
from .errors import DimensionError, NumericError, ParameterError
from .nn import Module, Parameter
from .tensor import Tensor, as_tensor, exp, softplus, split

try:
    from . import _scan_kernel
except ImportError:  # extension not built
    _scan_kernel = None

_KERNELS = {"python": _scan_ref}
if _scan_kernel is not None:
    _KERNELS["cython"] = _scan_kernel

_backend = os.environ.get("VSSCROWD_SCAN_BACKEND") or ("cython" if _scan_kernel is not None else "python")
if _backend not in _KERNELS:
    _backend = "python"


def available_backends() -> list:
    return sorted(_KERNELS)


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    if name not in _KERNELS:
        raise ParameterError(f"scan backend {name!r} unavailable; have {available_backends()}")
    _backend = name


@contextmanager
def use_backend(name: str):
    prev = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


class FlopCounter:
    """Counts floating-point operations executed by the scan recurrence."""

    # per (route, step, channel, state): exp argument, exp, decay mul, input mul, add, C mul, C add
    PER_STATE = 7
    # per (route, step, channel): delta*u, skip mul, skip add
    PER_CHANNEL = 3

    def __init__(self):
        self.flops = 0
        self.calls = 0

    def record(self, K: int, L: int, D: int, N: int) -> None:
        self.flops += K * L * D * (self.PER_STATE * N + self.PER_CHANNEL)
        self.calls += 1

    def reset(self) -> None:
        self.flops = 0
        self.calls = 0


FLOPS = FlopCounter()


@contextmanager
def count_flops():
    """Yield a fresh counter that records every scan executed inside the block."""
    global FLOPS
    prev = FLOPS
    FLOPS = FlopCounter()
    try:
        yield FLOPS
    finally:
        FLOPS = prev


def _first_bad_step(h: np.ndarray) -> int:
    bad = ~np.isfinite(h).reshape(h.shape[0], h.shape[1], -1).all(axis=(0, 2))
    return int(np.argmax(bad))


def scan_op(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, Dskip: Tensor) -> Tensor:
    """Differentiable selective scan over routes; see module docstring for shapes."""
    u, delta, A, B, C, Dskip = (as_tensor(t) for t in (u, delta, A, B, C, Dskip))
    if u.ndim != 3:
        raise DimensionError(f"scan input must be (K, L, D), got {u.shape}")
    K, L, D = u.shape
    N = A.shape[-1]
    if delta.shape != u.shape or A.shape != (K, D, N) or B.shape != (K, L, N) \
            or C.shape != (K, L, N) or Dskip.shape != (K, D):
        raise DimensionError("inconsistent selective-scan operand shapes: "
                             f"u{u.shape} delta{delta.shape} A{A.shape} B{B.shape} C{C.shape} D{Dskip.shape}")
    kernel = _KERNELS[_backend]
    arrays = [np.ascontiguousarray(t.data) for t in (u, delta, A, B, C, Dskip)]
    y, h = kernel.scan_forward(*arrays)
    FLOPS.record(K, L, D, N)
    if not np.isfinite(y).all():
        raise NumericError(f"selective scan produced a non-finite state at step {_first_bad_step(h)}")

    def backward(g):
        return kernel.scan_backward(np.ascontiguousarray(g), *arrays, h)

    return Tensor.make(y, (u, delta, A, B, C, Dskip), backward, "selective_scan")


class ScanParams(Module):
    """Per-route projections producing delta, B and C, plus the decay A and skip D.

    ``A`` is stored as ``A_log`` and realised as ``-exp(A_log)`` so it is always
    negative; delta goes through softplus so it is always positive.
    """

    def __init__(self, d_model: int, state_dim: int, rng: np.random.Generator,
                 routes: int = 4, dt_rank: int | None = None,
                 dt_min: float = 1e-3, dt_max: float = 1e-1):
        super().__init__()
        if state_dim < 1 or d_model < 1:
            raise ParameterError("state_dim and d_model must be positive")
        self.d_model = d_model
        self.state_dim = state_dim
        self.routes = routes
        self.dt_rank = dt_rank or max(1, math.ceil(d_model / 16))
        R, N = self.dt_rank, state_dim
        bound = 1.0 / math.sqrt(d_model)
        self.x_proj = Parameter(rng.uniform(-bound, bound, (routes, d_model, R + 2 * N)))
        bound = self.dt_rank ** -0.5
        self.dt_proj = Parameter(rng.uniform(-bound, bound, (routes, R, d_model)))
        dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), (routes, 1, d_model)))
        self.dt_bias = Parameter(dt + np.log(-np.expm1(-dt)))  # inverse softplus
        self.A_log = Parameter(np.log(np.tile(np.arange(1, N + 1, dtype=np.float64), (routes, d_model, 1))))
        self.D = Parameter(np.ones((routes, d_model)))

    def realized_A(self) -> Tensor:
        return -exp(self.A_log)

    def project(self, u: Tensor):
        """Return ``(delta, B, C)`` for a ``(K, L, D)`` input."""
        R, N = self.dt_rank, self.state_dim
        dt_raw, B, C = split(u @ self.x_proj, (R, N, N), axis=-1)
        delta = softplus(dt_raw @ self.dt_proj + self.dt_bias)
        return delta, B, C


def selective_scan(u: Tensor, params: ScanParams) -> Tensor:
    """Run the scan for ``u`` of shape ``(K, L, D)`` (or ``(L, D)`` when K == 1)."""
    single = u.ndim == 2
    if single:
        if params.routes != 1:
            raise DimensionError("a single (L, D) sequence needs ScanParams with routes=1")
        u = u.reshape(1, *u.shape)
    if u.shape[0] != params.routes or u.shape[2] != params.d_model:
        raise DimensionError(f"input {u.shape} does not match params (routes={params.routes}, d={params.d_model})")
    delta, B, C = params.project(u)
    y = scan_op(u, delta, params.realized_A(), B, C, params.D)
    return y.reshape(y.shape[1:]) if single else y
