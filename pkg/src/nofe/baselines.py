"""PCA baseline and a seeded Gaussian random projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d_g, d_f), orthonormal rows
    eigenvalues: np.ndarray


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(w, V)`` with ``a @ V[:, i] == w[i] * V[:, i]``, unsorted.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def pca_fit(values, d_g: int) -> PcaModel:
    """Top ``d_g`` eigenvectors of the sample covariance (divisor N - 1).

    Each component is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("pca_fit needs an (N, d_f) array with N >= 2")
    n, d_f = x.shape
    if not 1 <= d_g <= min(n - 1, d_f):
        raise ValidationError(f"d_g={d_g} out of range [1, {min(n - 1, d_f)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    w, v = jacobi_eigh(cov)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    rank = int(np.sum(w > max(w[0], 0.0) * 1e-12)) if w[0] > 0 else 0
    if rank < d_g:
        raise ValidationError(f"data has rank {rank}, cannot extract {d_g} components")
    comps = v[:, :d_g].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, eigenvalues=np.maximum(w[:d_g], 0.0))


def pca_transform(model: PcaModel, values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.mean.shape[0]:
        raise ValidationError(f"expected {model.mean.shape[0]} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.components.T


def pca_embed(values, d_g: int) -> np.ndarray:
    return pca_transform(pca_fit(values, d_g), values)


def random_projection(d_f: int, d_g: int, seed: int) -> np.ndarray:
    """Seeded ``(d_f, d_g)`` matrix with i.i.d. ``N(0, 1/d_g)`` entries.

    The scaling preserves squared distances in expectation.
    """
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(d_g), size=(d_f, d_g))
