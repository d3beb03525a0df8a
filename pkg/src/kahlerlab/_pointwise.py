"""Batched pointwise linear algebra for Hermitian coefficient arrays of shape (..., d, d)."""

from __future__ import annotations

import numpy as np


def herm_det(a: np.ndarray) -> np.ndarray:
    """Real determinant of each Hermitian matrix, closed form for d <= 3."""
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, 0].real.copy()
    if d == 2:
        return (a[..., 0, 0].real * a[..., 1, 1].real - np.abs(a[..., 0, 1]) ** 2)
    if d == 3:
        a00, a11, a22 = a[..., 0, 0].real, a[..., 1, 1].real, a[..., 2, 2].real
        a01, a02, a12 = a[..., 0, 1], a[..., 0, 2], a[..., 1, 2]
        return (a00 * a11 * a22
                + 2.0 * (a01 * a12 * np.conj(a02)).real
                - a00 * np.abs(a12) ** 2
                - a11 * np.abs(a02) ** 2
                - a22 * np.abs(a01) ** 2)
    return np.linalg.det(a).real


def herm_adj(a: np.ndarray) -> np.ndarray:
    """Adjugate (transposed cofactor matrix), so that adj(a) @ a = det(a) I."""
    d = a.shape[-1]
    if d == 1:
        return np.ones_like(a)
    if d == 2:
        out = np.empty_like(a)
        out[..., 0, 0] = a[..., 1, 1]
        out[..., 1, 1] = a[..., 0, 0]
        out[..., 0, 1] = -a[..., 0, 1]
        out[..., 1, 0] = -a[..., 1, 0]
        return out
    out = np.empty_like(a)
    idx = np.arange(d)
    for i in range(d):
        for j in range(d):
            minor = a[..., idx != i, :][..., :, idx != j]
            out[..., j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return out


def herm_inv(a: np.ndarray) -> np.ndarray:
    d = a.shape[-1]
    if d == 1:
        return 1.0 / a
    if d == 2:
        return herm_adj(a) / herm_det(a)[..., None, None]
    return np.linalg.inv(a)


def herm_eigs(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of each Hermitian matrix."""
    d = a.shape[-1]
    if d == 1:
        return a[..., 0, :1].real.copy()
    if d == 2:
        p = 0.5 * (a[..., 0, 0].real + a[..., 1, 1].real)
        q = np.sqrt((0.5 * (a[..., 0, 0].real - a[..., 1, 1].real)) ** 2 + np.abs(a[..., 0, 1]) ** 2)
        return np.stack([p - q, p + q], axis=-1)
    return np.linalg.eigvalsh(a)


def herm_trace_product(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """tr(a h) for Hermitian a, h, returned as a real array."""
    d = a.shape[-1]
    out = np.zeros(a.shape[:-2])
    for i in range(d):
        out += a[..., i, i].real * h[..., i, i].real
        for j in range(i + 1, d):
            out += 2.0 * (a[..., j, i] * h[..., i, j]).real
    return out


def hermitize(a: np.ndarray) -> np.ndarray:
    """Average with the conjugate transpose and make the diagonal exactly real."""
    out = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    d = a.shape[-1]
    for i in range(d):
        out[..., i, i] = out[..., i, i].real
    return out
