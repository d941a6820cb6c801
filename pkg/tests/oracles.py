"""Independent reference implementations used to cross-check library kernels."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate


def jacobi_eigenvalues(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> np.ndarray:
    """Cyclic Jacobi rotations; eigenvalues in descending order."""
    A = np.array(A, dtype=np.float64, copy=True)
    n = A.shape[0]
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(A**2) - np.sum(np.diag(A) ** 2)))
        if off < tol * max(np.linalg.norm(A), 1.0):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
    return np.sort(np.diag(A))[::-1]


def naive_T(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Plain rank-one loop sum_i t_i x_i x_i^T."""
    d = X.shape[1]
    T = np.zeros((d, d))
    for i in range(X.shape[0]):
        T += t[i] * np.outer(X[i], X[i])
    return T


def conjugate_gradient(A: np.ndarray, b: np.ndarray, tol: float = 1e-14, max_iter: int | None = None) -> np.ndarray:
    x = np.zeros_like(b)
    r = b - A @ x
    p = r.copy()
    rs = float(r @ r)
    bn = math.sqrt(float(b @ b))
    for _ in range(max_iter or 10 * b.size):
        Ap = A @ p
        step = rs / float(p @ Ap)
        x += step * p
        r -= step * Ap
        rs_new = float(r @ r)
        if math.sqrt(rs_new) <= tol * bn:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def G_single_index_quad(g, delta: float, y: float) -> float:
    """E[z^2 - 1 | Y = y] for Y = g(z) + sqrt(delta) xi, by adaptive 1-D quadrature."""
    def kern(z):
        return math.exp(-0.5 * z * z - 0.5 * (y - g(z)) ** 2 / delta)

    opts = dict(epsabs=0.0, epsrel=1e-12, limit=400)
    pts = [-3.0, -1.0, 0.0, 1.0, 3.0]
    num = integrate.quad(lambda z: (z * z - 1.0) * kern(z), -12, 12, points=pts, **opts)[0]
    den = integrate.quad(kern, -12, 12, points=pts, **opts)[0]
    return num / den


def grid_argmax(f, lo: float, hi: float, points: int) -> float:
    xs = np.linspace(lo, hi, points)
    vals = np.array([f(float(x)) for x in xs])
    return float(xs[int(np.argmax(vals))])
