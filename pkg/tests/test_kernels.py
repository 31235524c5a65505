import numpy as np
import pytest

from intervene import _kernels_py, kernels

try:
    from intervene import _ckernels
except ImportError:  # pragma: no cover - exercised only without a compiler
    _ckernels = None

needs_compiled = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def naive_cross(A, B, ls, sf2):
    out = np.empty((A.shape[0], B.shape[0]))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = sf2 * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2))
    return out


@pytest.mark.parametrize("impl", [_kernels_py, pytest.param(_ckernels, marks=needs_compiled)])
def test_cross_matches_naive(impl, rng):
    A, B = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    ls = rng.uniform(0.5, 2.0, 3)
    got = impl.ard_cross(np.ascontiguousarray(A), np.ascontiguousarray(B), 1 / ls ** 2, 1.7)
    np.testing.assert_allclose(got, naive_cross(A, B, ls, 1.7), rtol=1e-13, atol=1e-15)


@needs_compiled
def test_backend_parity(rng):
    A, B = rng.normal(size=(9, 4)), rng.normal(size=(11, 4))
    L = rng.uniform(0.2, 3.0, 4)
    c = rng.normal(size=11)
    np.testing.assert_allclose(_ckernels.ard_cross(A, B, L, 0.8),
                               _kernels_py.ard_cross(A, B, L, 0.8), rtol=1e-12, atol=1e-14)
    for a, b in zip(_ckernels.ard_cross_grad(A, B, c, L, 0.8),
                    _kernels_py.ard_cross_grad(A, B, c, L, 0.8)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)
    M = rng.normal(size=(9, 9))
    M = M + M.T
    np.testing.assert_allclose(_ckernels.lml_grad_terms(A, M), _kernels_py.lml_grad_terms(A, M),
                               rtol=1e-11, atol=1e-11)


@needs_compiled
@pytest.mark.parametrize("gradient", [True, False])
def test_fix_terms_parity(rng, gradient):
    n, r = 13, 2
    Q = np.ascontiguousarray(rng.normal(size=(n, r)))
    L = rng.uniform(0.3, 2.0, r)
    s0, s0p, wv, bX = (rng.normal(size=n) for _ in range(4))
    S = rng.normal(size=(n, n))
    Kinv = S @ S.T + np.eye(n)
    z = rng.normal(size=r)
    a = _ckernels.fix_terms(z, Q, L, s0, s0p, wv, bX, Kinv, gradient)
    b = _kernels_py.fix_terms(z, Q, L, s0, s0p, wv, bX, Kinv, gradient)
    for u, v in zip(a, b):
        if v is None:
            assert u is None
        else:
            np.testing.assert_allclose(u, v, rtol=1e-11, atol=1e-12)


def test_cross_grad_against_finite_differences(rng):
    T, Q = rng.normal(size=(3, 2)), rng.normal(size=(6, 2))
    c, L = rng.normal(size=6), rng.uniform(0.5, 2.0, 2)
    _, grad = kernels.ard_cross_grad(T, Q, c, L, 1.3)
    h = 1e-6
    for s in range(2):
        e = np.zeros(2)
        e[s] = h
        fd = (kernels.ard_cross(T + e, Q, L, 1.3) @ c - kernels.ard_cross(T - e, Q, L, 1.3) @ c) / (2 * h)
        np.testing.assert_allclose(grad[:, s], fd, rtol=1e-6, atol=1e-8)


def test_empty_inputs():
    assert kernels.ard_cross(np.zeros((0, 2)), np.ones((3, 2)), np.ones(2), 1.0).shape == (0, 3)
    kc, g = kernels.ard_cross_grad(np.ones((2, 2)), np.zeros((0, 2)), np.zeros(0), np.ones(2), 1.0)
    assert kc.shape == (2,) and g.shape == (2, 2)


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")
