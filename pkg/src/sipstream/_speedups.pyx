# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop for instantaneous CRR stream release.

Arithmetic is ordered identically to the pure-Python fallback in
``_pystream.py`` so both backends produce bit-identical releases from the
same uniform draws (the extension is built with FP contraction disabled).
"""

from libc.math cimport exp, expm1

import numpy as np


def crr_stream(const double[::1] prior, const double[:, ::1] transition,
               const long[::1] xs, double epsilon, double eps_inf,
               const double[::1] uniforms):
    cdef Py_ssize_t n = prior.shape[0]
    cdef Py_ssize_t horizon = xs.shape[0]
    out_arr = np.empty(horizon, dtype=np.int64)
    cdef long[::1] out = out_arr
    b_arr = np.array(prior, dtype=np.float64)
    post_arr = np.empty(n, dtype=np.float64)
    nxt_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] b = b_arr
    cdef double[::1] post = post_arr
    cdef double[::1] nxt = nxt_arr

    cdef double gmax = -expm1(-epsilon)
    cdef double grow = expm1(epsilon)
    cdef bint capped = epsilon < eps_inf
    cdef double gamma, cap, c, bj, u, acc, one_minus, ay, p, s, inv
    cdef Py_ssize_t k, j, v, x, y

    for k in range(horizon):
        gamma = gmax
        if capped:
            cap = 1e308
            for j in range(n):
                bj = b[j]
                if 0.0 < bj < 1.0:
                    c = grow * bj / (1.0 - bj)
                    if c < cap:
                        cap = c
            if cap < gamma:
                gamma = cap
        one_minus = 1.0 - gamma

        x = xs[k]
        u = uniforms[k]
        y = n - 1
        acc = 0.0
        for j in range(n):
            acc += one_minus * b[j]
            if j == x:
                acc += gamma
            if u < acc:
                y = j
                break
        out[k] = y

        ay = one_minus * b[y]
        s = 0.0
        for j in range(n):
            if j == y:
                p = b[j] * (ay + gamma)
            else:
                p = b[j] * ay
            post[j] = p
            s += p
        inv = 1.0 / s
        for j in range(n):
            post[j] = post[j] * inv

        s = 0.0
        for v in range(n):
            acc = 0.0
            for j in range(n):
                acc += transition[j, v] * post[j]
            nxt[v] = acc
            s += acc
        inv = 1.0 / s
        for v in range(n):
            b[v] = nxt[v] * inv

    return out_arr
