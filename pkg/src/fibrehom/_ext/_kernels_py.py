"""Numpy fallback for the compiled element loops; identical signatures."""
import numpy as np


def tri_bloch_entries(vertices, triangles, t1, t2):
    p = vertices[triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    area = 0.5 * det
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    local_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = area[:, None, None] * local_mass
    S = area[:, None, None] * (gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :])
    tg = t1 * gx + t2 * gy
    cross = (area / 3.0)[:, None, None] * (tg[:, :, None] - tg[:, None, :])
    K = (S + (t1 * t1 + t2 * t2) * M) + 1j * cross
    return K.reshape(-1, 9), M.reshape(-1, 9)


def seg_bloch_entries(lengths, coef, t3):
    l = np.asarray(lengths, dtype=float)
    c = np.asarray(coef, dtype=float)
    local_mass = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    M = l[:, None, None] * local_mass
    d = np.stack([-1.0 / l, 1.0 / l], axis=1)
    S = d[:, :, None] * d[:, None, :] * l[:, None, None]
    cross = (0.5 * l * t3)[:, None, None] * (d[:, :, None] - d[:, None, :])
    K = c[:, None, None] * (S + t3 * t3 * M + 1j * cross)
    return K.reshape(-1, 4), M.reshape(-1, 4)


def periodic_tridiag_apply(d, up, lo, X):
    """``Y[a, i, q] = lo[i] X[a, i-1, q] + d[i] X[a, i, q] + up[i] X[a, i+1, q]`` (cyclic)."""
    d, up, lo = (np.asarray(v)[None, :, None] for v in (d, up, lo))
    return d * X + up * np.roll(X, -1, axis=1) + lo * np.roll(X, 1, axis=1)
