"""Pure-Python fallback for the CRR stream loop.

Mirrors ``_speedups.pyx`` operation for operation; both consume the same
uniform draws and must emit identical symbols.
"""

from __future__ import annotations

import math

import numpy as np


def crr_stream(prior, transition, xs, epsilon, eps_inf, uniforms):
    n = len(prior)
    horizon = len(xs)
    out = np.empty(horizon, dtype=np.int64)
    b = [float(v) for v in prior]
    post = [0.0] * n
    trans = [[float(transition[u][v]) for v in range(n)] for u in range(n)]
    xs_l = [int(v) for v in xs]
    us = [float(v) for v in uniforms]

    gmax = -math.expm1(-epsilon)
    grow = math.expm1(epsilon)
    capped = epsilon < eps_inf

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

        x = xs_l[k]
        u = us[k]
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
        nxt = [0.0] * n
        for v in range(n):
            acc = 0.0
            row = post
            for j in range(n):
                acc += trans[j][v] * row[j]
            nxt[v] = acc
            s += acc
        inv = 1.0 / s
        for v in range(n):
            b[v] = nxt[v] * inv

    return out
