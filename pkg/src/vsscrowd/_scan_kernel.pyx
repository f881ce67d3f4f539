# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan kernels; same contract as ``_scan_ref``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def scan_forward(double[:, :, ::1] u, double[:, :, ::1] delta, double[:, :, ::1] A,
                 double[:, :, ::1] B, double[:, :, ::1] C, double[:, ::1] Dskip):
    cdef Py_ssize_t K = u.shape[0], L = u.shape[1], D = u.shape[2], N = A.shape[2]
    y_arr = np.empty((K, L, D))
    h_arr = np.empty((K, L, D, N))
    cdef double[:, :, ::1] y = y_arr
    cdef double[:, :, :, ::1] h = h_arr
    cdef Py_ssize_t k, t, d, n
    cdef double dt, du, prev, acc
    for k in range(K):
        for d in range(D):
            for t in range(L):
                dt = delta[k, t, d]
                du = dt * u[k, t, d]
                acc = Dskip[k, d] * u[k, t, d]
                for n in range(N):
                    if t == 0:
                        prev = 0.0
                    else:
                        prev = h[k, t - 1, d, n]
                    prev = exp(dt * A[k, d, n]) * prev + du * B[k, t, n]
                    h[k, t, d, n] = prev
                    acc += C[k, t, n] * prev
                y[k, t, d] = acc
    return y_arr, h_arr


def scan_backward(double[:, :, ::1] gy, double[:, :, ::1] u, double[:, :, ::1] delta,
                  double[:, :, ::1] A, double[:, :, ::1] B, double[:, :, ::1] C,
                  double[:, ::1] Dskip, double[:, :, :, ::1] h):
    cdef Py_ssize_t K = u.shape[0], L = u.shape[1], D = u.shape[2], N = A.shape[2]
    gu_arr = np.zeros((K, L, D))
    gdelta_arr = np.zeros((K, L, D))
    gA_arr = np.zeros((K, D, N))
    gB_arr = np.zeros((K, L, N))
    gC_arr = np.zeros((K, L, N))
    gD_arr = np.zeros((K, D))
    carry_arr = np.zeros(N)
    cdef double[:, :, ::1] gu = gu_arr
    cdef double[:, :, ::1] gdelta = gdelta_arr
    cdef double[:, :, ::1] gA = gA_arr
    cdef double[:, :, ::1] gB = gB_arr
    cdef double[:, :, ::1] gC = gC_arr
    cdef double[:, ::1] gD = gD_arr
    cdef double[::1] carry = carry_arr
    cdef Py_ssize_t k, t, d, n
    cdef double dt, ut, g, a, hp, gh, ge, ghB, gdt
    for k in range(K):
        for d in range(D):
            for n in range(N):
                carry[n] = 0.0
            for t in range(L - 1, -1, -1):
                dt = delta[k, t, d]
                ut = u[k, t, d]
                g = gy[k, t, d]
                gD[k, d] += g * ut
                ghB = 0.0
                gdt = 0.0
                for n in range(N):
                    gC[k, t, n] += g * h[k, t, d, n]
                    gh = g * C[k, t, n] + carry[n]
                    a = exp(dt * A[k, d, n])
                    if t == 0:
                        hp = 0.0
                    else:
                        hp = h[k, t - 1, d, n]
                    ge = gh * hp * a
                    gdt += ge * A[k, d, n]
                    gA[k, d, n] += ge * dt
                    ghB += gh * B[k, t, n]
                    gB[k, t, n] += gh * dt * ut
                    carry[n] = gh * a
                gdelta[k, t, d] = gdt + ghB * ut
                gu[k, t, d] = ghB * dt + g * Dskip[k, d]
    return gu_arr, gdelta_arr, gA_arr, gB_arr, gC_arr, gD_arr
