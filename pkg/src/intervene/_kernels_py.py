"""Pure numpy implementations of the hot kernel routines.

Signatures mirror the compiled ``_ckernels`` module exactly; see
``intervene.kernels`` for the import-time selection.
"""
import numpy as np


def ard_cross(A, B, inv_ls2, sf2):
    """ARD squared-exponential kernel matrix between the rows of A and B."""
    As = A * np.sqrt(inv_ls2)
    Bs = B * np.sqrt(inv_ls2)
    sq = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * (As @ Bs.T)
    np.maximum(sq, 0.0, out=sq)
    return sf2 * np.exp(-0.5 * sq)


def ard_cross_grad(T, Q, c, inv_ls2, sf2):
    """Weighted kernel sums and their gradients w.r.t. the rows of T.

    Returns ``kc[i] = sum_q c[q] k(T[i], Q[q])`` and
    ``grad[i] = sum_q c[q] k(T[i], Q[q]) (Q[q] - T[i]) * inv_ls2``.
    """
    KC = ard_cross(T, Q, inv_ls2, sf2) * c[None, :]
    kc = KC.sum(1)
    grad = (KC @ Q - kc[:, None] * T) * inv_ls2
    return kc, grad


def lml_grad_terms(X, M):
    """``out[s] = sum_ij M[i, j] (X[i, s] - X[j, s])**2`` for symmetric M."""
    r = M.sum(1)
    return 2.0 * ((X * X).T @ r - (X * (M @ X)).sum(0))


def fix_terms(z, Q, L, s0, s0p, wv, bX, Kinv, gradient):
    """Covariate-fixing gain pieces for fixing values ``z``.

    With ``e_j = exp(-0.5 sum_r (z_r - Q[j, r])**2 L_r)`` and ``b = s0 * e``:
    returns ``b.wv``, ``r.Kinv.r`` for ``r = b - bX``, ``s0p.e`` and the
    gradients of those three quantities with respect to ``z``.
    """
    diff = z[None, :] - Q
    e = np.exp(-0.5 * (diff * diff) @ L)
    b = s0 * e
    r = b - bX
    beta = Kinv @ r
    out = [float(b @ wv), float(r @ beta), float(s0p @ e)]
    if gradient:
        out += [-((b * wv) @ diff) * L, -2.0 * ((b * beta) @ diff) * L,
                -((s0p * e) @ diff) * L]
    else:
        out += [None, None, None]
    return tuple(out)
