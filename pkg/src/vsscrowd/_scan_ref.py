"""Pure-numpy selective-scan kernels, used when the compiled extension is absent.

Shapes: ``u, delta`` are ``(K, L, D)``; ``A`` is ``(K, D, N)``; ``B, C`` are
``(K, L, N)``; ``Dskip`` is ``(K, D)``. The recurrence is sequential in L and
vectorised over routes, channels and state.
"""
import numpy as np


def scan_forward(u, delta, A, B, C, Dskip):
    K, L, D = u.shape
    N = A.shape[-1]
    dA = np.exp(delta[..., None] * A[:, None])
    dBu = (delta * u)[..., None] * B[:, :, None, :]
    h = np.empty((K, L, D, N))
    prev = np.zeros((K, D, N))
    for t in range(L):
        prev = dA[:, t] * prev + dBu[:, t]
        h[:, t] = prev
    y = np.einsum("kldn,kln->kld", h, C) + Dskip[:, None, :] * u
    return y, h


def scan_backward(gy, u, delta, A, B, C, Dskip, h):
    K, L, D = u.shape
    N = A.shape[-1]
    dA = np.exp(delta[..., None] * A[:, None])
    gh = np.empty((K, L, D, N))
    carry = np.zeros((K, D, N))
    for t in range(L - 1, -1, -1):
        carry = gy[:, t, :, None] * C[:, t, None, :] + carry
        gh[:, t] = carry
        carry = carry * dA[:, t]
    h_prev = np.concatenate([np.zeros((K, 1, D, N)), h[:, :-1]], axis=1)
    g_expo = gh * h_prev * dA
    ghB = np.einsum("kldn,kln->kld", gh, B)
    gdelta = np.einsum("kldn,kdn->kld", g_expo, A) + ghB * u
    gA = np.einsum("kldn,kld->kdn", g_expo, delta)
    gB = np.einsum("kldn,kld->kln", gh, delta * u)
    gC = np.einsum("kld,kldn->kln", gy, h)
    gu = ghB * delta + gy * Dskip[:, None, :]
    gD = (gy * u).sum(axis=1)
    return gu, gdelta, gA, gB, gC, gD
