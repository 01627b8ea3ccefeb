"""Pure-numpy convolution kernels (fallback backend).

All functions take C-contiguous float64 arrays and plain ints; shape
validation happens in the callers. Convolution means cross-correlation
throughout (no kernel flip).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    # returns [N*Ho*Wo, C*kh*kw]
    n, c, _, _ = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d_fwd(x: np.ndarray, w: np.ndarray, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    n, _, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = _out_extent(h, kh, sh, ph)
    wo = _out_extent(wd, kw, sw, pw)
    cols = _im2col(x, kh, kw, sh, sw, ph, pw)
    y = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_bwd_input(gy: np.ndarray, w: np.ndarray, sh: int, sw: int, ph: int, pw: int,
                     h: int, wd: int) -> np.ndarray:
    n, _, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    # t[n,ho,wo,c,u,v] = sum_o gy[n,o,ho,wo] * w[o,c,u,v]
    t = np.tensordot(gy, w, axes=([1], [0]))
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw] += t[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + wd])


def conv2d_bwd_weight(x: np.ndarray, gy: np.ndarray, sh: int, sw: int, ph: int, pw: int,
                      kh: int, kw: int) -> np.ndarray:
    n, c, _, _ = x.shape
    o = gy.shape[1]
    cols = _im2col(x, kh, kw, sh, sw, ph, pw)
    g = gy.transpose(0, 2, 3, 1).reshape(-1, o)
    return np.ascontiguousarray((g.T @ cols).reshape(o, c, kh, kw))


def conv4d_fwd(x: np.ndarray, k: np.ndarray, sq: int, ss: int, pq: int, ps: int) -> np.ndarray:
    c, hq, wq, hs, ws = x.shape
    o, _, k1, k2, k3, k4 = k.shape
    hqo = _out_extent(hq, k1, sq, pq)
    wqo = _out_extent(wq, k2, sq, pq)
    hso = _out_extent(hs, k3, ss, ps)
    wso = _out_extent(ws, k4, ss, ps)
    xp = np.pad(x, ((0, 0), (pq, pq), (pq, pq), (ps, ps), (ps, ps)))
    y = np.zeros((o, hqo, wqo, hso, wso))
    for a in range(k1):
        for b in range(k2):
            for e in range(k3):
                for f in range(k4):
                    win = xp[:, a:a + sq * hqo:sq, b:b + sq * wqo:sq,
                             e:e + ss * hso:ss, f:f + ss * wso:ss]
                    y += np.tensordot(k[:, :, a, b, e, f], win, axes=([1], [0]))
    return y
