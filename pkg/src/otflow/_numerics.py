"""Small vectorized helpers for 2x2 linear algebra and finite differences.

All matrix arguments have shape (..., 2, 2) and vectors (..., 2); operations
broadcast over the leading axes. Written out by component so the hot loops
avoid einsum/linalg dispatch overhead.
"""

import numpy as np


def det2(m):
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def inv2(m):
    out = np.empty_like(m)
    d = det2(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    out[..., 1, 1] = m[..., 0, 0]
    return out / d[..., None, None]


def solve2(m, b):
    """Solve m @ x = b by Cramer's rule."""
    d = det2(m)
    x = np.empty_like(b)
    x[..., 0] = (b[..., 0] * m[..., 1, 1] - b[..., 1] * m[..., 0, 1]) / d
    x[..., 1] = (b[..., 1] * m[..., 0, 0] - b[..., 0] * m[..., 1, 0]) / d
    return x


def matvec2(m, v):
    out = np.empty(np.broadcast_shapes(m.shape[:-2], v.shape[:-1]) + (2,))
    out[..., 0] = m[..., 0, 0] * v[..., 0] + m[..., 0, 1] * v[..., 1]
    out[..., 1] = m[..., 1, 0] * v[..., 0] + m[..., 1, 1] * v[..., 1]
    return out


def matmul2(a, b):
    out = np.empty(np.broadcast_shapes(a.shape[:-2], b.shape[:-2]) + (2, 2))
    for i in range(2):
        for j in range(2):
            out[..., i, j] = a[..., i, 0] * b[..., 0, j] + a[..., i, 1] * b[..., 1, j]
    return out


def transpose2(m):
    return np.swapaxes(m, -1, -2)


def sym_eig_range2(m):
    """(lambda_min, lambda_max) of symmetric 2x2 matrices."""
    half_tr = 0.5 * (m[..., 0, 0] + m[..., 1, 1])
    gap = np.sqrt((0.5 * (m[..., 0, 0] - m[..., 1, 1])) ** 2
                  + (0.5 * (m[..., 0, 1] + m[..., 1, 0])) ** 2)
    return half_tr - gap, half_tr + gap


def quadform2(m, u, v=None):
    """u^T m v (v defaults to u)."""
    if v is None:
        v = u
    return (m[..., 0, 0] * u[..., 0] * v[..., 0]
            + m[..., 0, 1] * u[..., 0] * v[..., 1]
            + m[..., 1, 0] * u[..., 1] * v[..., 0]
            + m[..., 1, 1] * u[..., 1] * v[..., 1])


def cross2(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def norm2(v):
    return np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2)


def one_sided_first(t1, t2, f0, f1, f2):
    """Derivative at 0 of the quadratic through (0, f0), (t1, f1), (t2, f2)."""
    return (-(t1 + t2) / (t1 * t2) * f0
            + t2 / (t1 * (t2 - t1)) * f1
            - t1 / (t2 * (t2 - t1)) * f2)
