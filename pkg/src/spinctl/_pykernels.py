"""Pure numpy implementation of the propagation kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same numerics (scaling-and-squaring Taylor series).  The compiled
twin is preferred at import time, see :mod:`spinctl.kernels`.

Shapes
------
Generators and propagators are homogeneous 4x4 matrices acting on
``(x, y, z, 1)``; the last row of a generator is zero.
"""
import numpy as np

# Taylor series is summed once the scaled 1-norm is below THETA.
THETA = 0.25
N_TERMS = 12


def _scaling(G):
    norm = np.abs(G).sum(axis=-2).max(axis=-1)
    s = np.zeros(norm.shape, dtype=np.int64)
    big = norm > THETA
    s[big] = np.ceil(np.log2(norm[big] / THETA)).astype(np.int64)
    return s


def expm_affine(G):
    """Batched matrix exponential of ``(m, 4, 4)`` generators."""
    G = np.ascontiguousarray(G, dtype=np.float64)
    s = _scaling(G)
    X = G * np.ldexp(1.0, -s)[:, None, None]
    eye = np.broadcast_to(np.eye(4), X.shape)
    term = eye.copy()
    P = eye.copy()
    for k in range(1, N_TERMS + 1):
        term = np.matmul(X, term) / k
        P = P + term
    for j in range(int(s.max(initial=0))):
        idx = s > j
        P[idx] = np.matmul(P[idx], P[idx])
    return P


def expm_affine_frechet(G, E):
    """Exponential and its Frechet derivatives along several directions.

    Parameters
    ----------
    G : ndarray, shape (m, 4, 4)
    E : ndarray, shape (m, c, 4, 4)
        ``c`` perturbation directions per generator.

    Returns
    -------
    P : ndarray, shape (m, 4, 4)
    D : ndarray, shape (m, c, 4, 4)
        ``D[i, j] = d/de expm(G[i] + e E[i, j])`` at ``e = 0``.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    E = np.ascontiguousarray(E, dtype=np.float64)
    s = _scaling(G)
    scale = np.ldexp(1.0, -s)
    X = G * scale[:, None, None]
    Es = E * scale[:, None, None, None]
    eye = np.broadcast_to(np.eye(4), X.shape)
    A = eye.copy()
    B = np.zeros_like(Es)
    P = eye.copy()
    D = np.zeros_like(Es)
    Xc = X[:, None]
    for k in range(1, N_TERMS + 1):
        B = (np.matmul(Xc, B) + np.matmul(Es, A[:, None])) / k
        A = np.matmul(X, A) / k
        P = P + A
        D = D + B
    for j in range(int(s.max(initial=0))):
        idx = s > j
        Pi = P[idx]
        Di = D[idx]
        D[idx] = np.matmul(Pi[:, None], Di) + np.matmul(Di, Pi[:, None])
        P[idx] = np.matmul(Pi, Pi)
    return P, D


def forward_sweep(P, x0):
    """States along each trajectory.

    ``P`` has shape ``(b, n, 4, 4)``, ``x0`` shape ``(b, 3)``; returns
    ``(b, n + 1, 3)``.
    """
    b, n = P.shape[:2]
    X = np.empty((b, n + 1, 3))
    X[:, 0] = x0
    for k in range(n):
        Pk = P[:, k]
        X[:, k + 1] = np.einsum("bij,bj->bi", Pk[:, :3, :3], X[:, k]) + Pk[:, :3, 3]
    return X


def backward_sweep(P, lam_final):
    """Costates ``lam[k] = A_k^T lam[k+1]`` with ``A_k`` the linear block."""
    b, n = P.shape[:2]
    L = np.empty((b, n + 1, 3))
    L[:, n] = lam_final
    for k in range(n - 1, -1, -1):
        L[:, k] = np.einsum("bji,bj->bi", P[:, k, :3, :3], L[:, k + 1])
    return L


def accumulate_gradient(D, X, L):
    """``g[b, k, c] = L[b, k+1] . (D[b, k, c] @ (X[b, k], 1))``."""
    moved = np.einsum("bkcij,bkj->bkci", D[..., :3, :3], X[:, :-1]) + D[..., :3, 3]
    return np.einsum("bkci,bki->bkc", moved, L[:, 1:])
