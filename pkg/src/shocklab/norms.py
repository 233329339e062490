"""Discrete norms and inner products on uniform grids (trapezoid quadrature)."""
import numpy as np


def trapezoid_weights(x):
    h = x[1] - x[0]
    w = np.full(len(x), h)
    w[0] = w[-1] = 0.5 * h
    return w


def inner(w, f, g):
    """Bilinear (unconjugated) trapezoid inner product of grid functions of shape (N, n)."""
    return np.einsum("i,i...->...", w, np.sum(f * g, axis=-1))


def lp_norm(w, f, p):
    mag = np.linalg.norm(f, axis=-1) if f.ndim > 1 else np.abs(f)
    if np.isinf(p):
        return float(np.max(mag))
    return float(np.sum(w * mag ** p) ** (1.0 / p))


def derivatives(f, h, k):
    """[f, f', ..., f^(k)] by repeated second-order central differences."""
    out = [f]
    for _ in range(k):
        out.append(np.gradient(out[-1], h, axis=0, edge_order=2))
    return out


def hk_norm(w, f, k):
    f = np.reshape(f, (len(w), -1))
    return float(np.sqrt(sum(np.sum(w[:, None] * d ** 2) for d in derivatives(f, w[1], k))))


def mixed_norm(w, V, k):
    """|V1|_{H^1}^2 + |V2|_{H^2}^2 under the block split at index k, square-rooted."""
    return float(np.sqrt(hk_norm(w, V[:, :k], 1) ** 2 + hk_norm(w, V[:, k:], 2) ** 2))
