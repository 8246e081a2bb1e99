"""Fully constrained least squares (FCLS) baseline.

FCLS is solved as nonnegative least squares on the sum-to-one augmented
system. All pixels share one Gram matrix, so the ADMM iterations run on the
whole ``(R, N)`` abundance matrix at once. The ADMM iterate is then polished
by an exact solve on its detected support, which lands on the optimum
whenever the support is correct (checked through the KKT conditions).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.optimize import nnls

from .model import EndmemberMatrix, HyperImage, NumericalError, augment_asc


def kkt_residual(gram, rhs, x):
    """Per-pixel ``max |min(x, grad)|`` for ``min 0.5 x'Gx - b'x, x >= 0``."""
    grad = gram @ x - rhs
    return np.max(np.abs(np.minimum(x, grad)), axis=0)


def _polish(gram, rhs, x, tol):
    support = x > 0
    out = x.copy()
    patterns, inverse = np.unique(support.T, axis=0, return_inverse=True)
    for p, pattern in enumerate(patterns):
        cols = np.flatnonzero(inverse.ravel() == p)
        idx = np.flatnonzero(pattern)
        cand = np.zeros((x.shape[0], cols.size))
        if idx.size:
            sub = gram[np.ix_(idx, idx)]
            cand[idx] = np.linalg.solve(sub, rhs[np.ix_(idx, cols)])
        out[:, cols] = np.maximum(cand, 0.0)
    # keep the polished point only where it is at least as optimal
    better = kkt_residual(gram, rhs, out) <= np.maximum(kkt_residual(gram, rhs, x), tol)
    return np.where(better, out, x)


def nnls_admm(gram, rhs, rho=None, max_iter=5000, tol=1e-8):
    """Solve ``min 0.5 x'Gx - b'x  s.t. x >= 0`` for every column of ``rhs``.

    Returns ``(x, kkt)`` with ``kkt`` the per-column KKT residual scaled by
    ``max(1, |b|_inf)``.
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rho is None:
        w = np.linalg.eigvalsh(gram)
        rho = float(np.sqrt(max(w[0], 1e-12 * w[-1]) * w[-1]))
    factor = scipy.linalg.cho_factor(gram + rho * np.eye(gram.shape[0]))
    scale = np.maximum(1.0, np.max(np.abs(rhs), axis=0))

    z = np.maximum(scipy.linalg.cho_solve(factor, rhs), 0.0)
    u = np.zeros_like(z)
    thresh = tol * np.sqrt(z.shape[0])
    for _ in range(max_iter):
        x = scipy.linalg.cho_solve(factor, rhs + rho * (z - u))
        z_old = z
        z = np.maximum(x + u, 0.0)
        u += x - z
        primal = np.linalg.norm(x - z, axis=0) / scale
        dual = rho * np.linalg.norm(z - z_old, axis=0) / scale
        if np.all(primal < thresh) and np.all(dual < thresh):
            break

    z = _polish(gram, rhs, z, tol)
    kkt = kkt_residual(gram, rhs, z) / scale
    # pixels where neither ADMM nor the support solve reached tolerance
    for n in np.flatnonzero(kkt > tol):
        chol = np.linalg.cholesky(gram)
        z[:, n], _ = nnls(chol.T, scipy.linalg.solve_triangular(chol, rhs[:, n], lower=True))
    kkt = kkt_residual(gram, rhs, z) / scale
    return z, kkt


def default_fcls_delta(image: HyperImage) -> float:
    return 10.0 * float(np.max(np.abs(image.data)))


def fcls(image: HyperImage, endmembers: EndmemberMatrix, delta: float | None = None) -> np.ndarray:
    """FCLS abundances ``(R, N)``; ``delta`` weights the sum-to-one row."""
    if delta is None:
        delta = default_fcls_delta(image)
    if not delta > 0:
        raise ValueError("FCLS needs a positive sum-to-one weight")
    if endmembers.bands != image.bands:
        raise ValueError("library and image band counts differ")
    img, lib, _ = augment_asc(image, endmembers, delta)
    s = lib.spectra
    if np.linalg.matrix_rank(s) < s.shape[1]:
        raise NumericalError("augmented library is rank deficient; FCLS is ill-posed")
    x, _ = nnls_admm(s.T @ s, s.T @ img.data)
    return x
