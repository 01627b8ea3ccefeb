"""Numba-compiled convolution kernels (default backend when numba is importable).

Same signatures and semantics as _kernels_numpy. Loops are written
gather-style: every output element is produced by one sequential
accumulation, so results are bit-deterministic regardless of how many
threads the numba runtime is allowed to use.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_fwd(x, w, sh, sw, ph, pw):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (wd + 2 * pw - kw) // sw + 1
    y = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for u in range(kh):
                            hi = i * sh - ph + u
                            if hi < 0 or hi >= h:
                                continue
                            for v in range(kw):
                                wi = j * sw - pw + v
                                if wi < 0 or wi >= wd:
                                    continue
                                acc += x[b, ic, hi, wi] * w[oc, ic, u, v]
                    y[b, oc, i, j] = acc
    return y


@njit(cache=True)
def conv2d_bwd_input(gy, w, sh, sw, ph, pw, h, wd):
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gx = np.zeros((n, c, h, wd))
    for b in range(n):
        for ic in range(c):
            for hi in range(h):
                for wi in range(wd):
                    acc = 0.0
                    for u in range(kh):
                        num = hi + ph - u
                        if num < 0 or num % sh != 0:
                            continue
                        i = num // sh
                        if i >= ho:
                            continue
                        for v in range(kw):
                            num2 = wi + pw - v
                            if num2 < 0 or num2 % sw != 0:
                                continue
                            j = num2 // sw
                            if j >= wo:
                                continue
                            for oc in range(o):
                                acc += gy[b, oc, i, j] * w[oc, ic, u, v]
                    gx[b, ic, hi, wi] = acc
    return gx


@njit(cache=True)
def conv2d_bwd_weight(x, gy, sh, sw, ph, pw, kh, kw):
    n, c, h, wd = x.shape
    _, o, ho, wo = gy.shape
    gw = np.zeros((o, c, kh, kw))
    for oc in range(o):
        for ic in range(c):
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for b in range(n):
                        for i in range(ho):
                            hi = i * sh - ph + u
                            if hi < 0 or hi >= h:
                                continue
                            for j in range(wo):
                                wi = j * sw - pw + v
                                if wi < 0 or wi >= wd:
                                    continue
                                acc += x[b, ic, hi, wi] * gy[b, oc, i, j]
                    gw[oc, ic, u, v] = acc
    return gw


@njit(cache=True)
def conv4d_fwd(x, k, sq, ss, pq, ps):
    c, hq, wq, hs, ws = x.shape
    o, _, k1, k2, k3, k4 = k.shape
    hqo = (hq + 2 * pq - k1) // sq + 1
    wqo = (wq + 2 * pq - k2) // sq + 1
    hso = (hs + 2 * ps - k3) // ss + 1
    wso = (ws + 2 * ps - k4) // ss + 1
    y = np.zeros((o, hqo, wqo, hso, wso))
    for oc in range(o):
        for i1 in range(hqo):
            for i2 in range(wqo):
                for i3 in range(hso):
                    for i4 in range(wso):
                        acc = 0.0
                        for ic in range(c):
                            for a in range(k1):
                                q1 = i1 * sq - pq + a
                                if q1 < 0 or q1 >= hq:
                                    continue
                                for b in range(k2):
                                    q2 = i2 * sq - pq + b
                                    if q2 < 0 or q2 >= wq:
                                        continue
                                    for e in range(k3):
                                        s1 = i3 * ss - ps + e
                                        if s1 < 0 or s1 >= hs:
                                            continue
                                        for f in range(k4):
                                            s2 = i4 * ss - ps + f
                                            if s2 < 0 or s2 >= ws:
                                                continue
                                            acc += x[ic, q1, q2, s1, s2] * k[oc, ic, a, b, e, f]
                        y[oc, i1, i2, i3, i4] = acc
    return y
