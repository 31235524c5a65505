"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py`` is used.  Setting the environment variable
``INTERVENE_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("INTERVENE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def ard_cross(A, B, inv_ls2, sf2):
    A, B = _c(A), _c(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return _impl.ard_cross(A, B, _c(inv_ls2), float(sf2))


def ard_cross_grad(T, Q, c, inv_ls2, sf2):
    T, Q = _c(T), _c(Q)
    if Q.shape[0] == 0:
        return np.zeros(T.shape[0]), np.zeros(T.shape)
    return _impl.ard_cross_grad(T, Q, _c(c), _c(inv_ls2), float(sf2))


def lml_grad_terms(X, M):
    X, M = _c(X), _c(M)
    return _impl.lml_grad_terms(X, M)


def fix_terms(z, Q, L, s0, s0p, wv, bX, Kinv, gradient=True):
    """See ``_kernels_py.fix_terms``; inputs must already be contiguous float arrays."""
    return _impl.fix_terms(z, Q, L, s0, s0p, wv, bX, Kinv, bool(gradient))
