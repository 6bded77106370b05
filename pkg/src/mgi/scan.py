"""Selective-scan recurrence kernels on raw numpy arrays.

The recurrence is h_t = abar_t * h_{t-1} + bx_t (elementwise over a
(d_inner, d_state) grid), read out as y_t = sum_s C[t, s] * h[t, :, s]
+ D * x_t. Two interchangeable evaluators produce the full state history:

* ``scan_states_sequential`` — the direct unrolled loop, the oracle.
* ``scan_states_parallel`` — a work-efficient Blelloch up/down-sweep over
  the associative pairs (a, b) with composition
  (a2, b2) ∘ (a1, b1) = (a2*a1, a2*b1 + b2).

Both are deterministic; the parallel version fixes its combine order by
sweep level, so results are reproducible bit-for-bit run to run.
"""

from __future__ import annotations

import numpy as np


def scan_states_sequential(abar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """State history h[t] of the recurrence, by direct unrolling. O(T) depth."""
    T = abar.shape[0]
    h = np.empty_like(bx)
    state = np.zeros(abar.shape[1:], dtype=np.float64)
    for t in range(T):
        state = abar[t] * state + bx[t]
        h[t] = state
    return h


def scan_states_parallel(abar: np.ndarray, bx: np.ndarray) -> np.ndarray:
    """State history via a work-efficient parallel prefix scan.

    Pads T up to a power of two with the identity element (a=1, b=0),
    runs an exclusive Blelloch scan in O(log T) sweep levels, then folds
    each element back in to make the scan inclusive.
    """
    T = abar.shape[0]
    n = 1
    while n < T:
        n *= 2
    a = np.ones((n,) + abar.shape[1:], dtype=np.float64)
    b = np.zeros((n,) + bx.shape[1:], dtype=np.float64)
    a[:T] = abar
    b[:T] = bx

    a_in, b_in = a.copy(), b.copy()

    # Up-sweep: pairwise reduction. Right child composes over left child.
    stride = 1
    while stride < n:
        left = np.arange(stride - 1, n, 2 * stride)
        right = left + stride
        b[right] = a[right] * b[left] + b[right]
        a[right] = a[right] * a[left]
        stride *= 2

    # Down-sweep: turn the reduction tree into an exclusive scan.
    a[n - 1] = 1.0
    b[n - 1] = 0.0
    stride = n // 2
    while stride >= 1:
        left = np.arange(stride - 1, n, 2 * stride)
        right = left + stride
        ta, tb = a[left].copy(), b[left].copy()
        a[left] = a[right]
        b[left] = b[right]
        b[right] = ta * b[right] + tb
        a[right] = ta * a[right]
        stride //= 2

    # Inclusive value at t = element_t composed after the exclusive prefix.
    h = a_in * b + b_in
    return h[:T]


def scan_output(h: np.ndarray, C: np.ndarray, D: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Readout y[t, i] = sum_s C[t, s] h[t, i, s] + D[i] x[t, i]."""
    return np.einsum("tis,ts->ti", h, C) + D[None, :] * x
