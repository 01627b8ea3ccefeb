"""Kernel backend selection.

Hot convolution loops exist twice: numba-compiled (_kernels_numba) and
pure numpy (_kernels_numpy). The env var QCLNET_BACKEND picks one:

    QCLNET_BACKEND=numba   require the compiled kernels (error if numba missing)
    QCLNET_BACKEND=numpy   force the pure-numpy fallback
    unset / auto           compiled kernels when numba imports, numpy otherwise

QCLNET_THREADS caps the numba thread pool (0 or unset = automatic). The
compiled kernels accumulate each output element sequentially, so results
are bit-identical under any cap; the env var exists so heavy runs can be
confined on shared machines.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_numpy
from .errors import ConfigError

try:
    import numba  # noqa: F401
    from . import _kernels_numba
    HAS_NUMBA = True
except ImportError:
    _kernels_numba = None
    HAS_NUMBA = False


def _choose() -> str:
    req = os.environ.get("QCLNET_BACKEND", "auto").strip().lower() or "auto"
    if req not in ("auto", "numba", "numpy"):
        raise ConfigError(f"QCLNET_BACKEND must be auto, numba or numpy, got {req!r}")
    if req == "numba" and not HAS_NUMBA:
        raise ConfigError("QCLNET_BACKEND=numba but numba is not importable")
    if req == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    return req


BACKEND = _choose()
_K = _kernels_numba if BACKEND == "numba" else _kernels_numpy


def set_thread_cap(n: int) -> int:
    """Cap kernel parallelism at n threads (0 = automatic). Returns the applied cap."""
    if n < 0:
        raise ConfigError(f"thread cap must be >= 0, got {n}")
    if not HAS_NUMBA:
        return 1
    limit = numba.config.NUMBA_NUM_THREADS
    eff = limit if n == 0 else max(1, min(n, limit))
    numba.set_num_threads(eff)
    return eff


def _init_threads() -> None:
    raw = os.environ.get("QCLNET_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"QCLNET_THREADS must be an integer, got {raw!r}") from None
    set_thread_cap(n)


_init_threads()


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_fwd(x, w, sh, sw, ph, pw):
    """Batched 2D cross-correlation: [N,C,H,W] x [O,C,kh,kw] -> [N,O,Ho,Wo]."""
    return _K.conv2d_fwd(_c64(x), _c64(w), int(sh), int(sw), int(ph), int(pw))


def conv2d_bwd_input(gy, w, sh, sw, ph, pw, h, wd):
    return _K.conv2d_bwd_input(_c64(gy), _c64(w), int(sh), int(sw), int(ph), int(pw),
                               int(h), int(wd))


def conv2d_bwd_weight(x, gy, sh, sw, ph, pw, kh, kw):
    return _K.conv2d_bwd_weight(_c64(x), _c64(gy), int(sh), int(sw), int(ph), int(pw),
                                int(kh), int(kw))


def conv4d_fwd(x, k, sq, ss, pq, ps):
    """Full 4D cross-correlation: [C,Hq,Wq,Hs,Ws] x [O,C,k1,k2,k3,k4]."""
    return _K.conv4d_fwd(_c64(x), _c64(k), int(sq), int(ss), int(pq), int(ps))


def kernel_modules():
    """(name, module) pairs for every importable kernel backend, for benchmarking."""
    mods = [("numpy", _kernels_numpy)]
    if HAS_NUMBA:
        mods.append(("numba", _kernels_numba))
    return mods
