"""Abundance and endmember error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment


def _pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return x, x_hat


def rmse(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    return float(np.sqrt(np.mean((x - x_hat) ** 2)))


def sre_db(x, x_hat) -> float:
    """Signal-to-reconstruction error in dB; ``inf`` for a perfect estimate."""
    x, x_hat = _pair(x, x_hat)
    err = float(np.sum((x - x_hat) ** 2))
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(np.sum(x**2) / err))


def sad(s, s_hat) -> float:
    """Spectral angle between two signatures, in radians."""
    s = np.asarray(s, dtype=np.float64).ravel()
    s_hat = np.asarray(s_hat, dtype=np.float64).ravel()
    ns, nh = np.linalg.norm(s), np.linalg.norm(s_hat)
    if ns == 0 or nh == 0:
        raise ValueError("spectral angle undefined for a zero vector")
    return float(np.arccos(np.clip(s_hat @ s / (nh * ns), -1.0, 1.0)))


def sad_matrix(s_true, s_est) -> np.ndarray:
    """``out[i, j] = sad(s_true[:, i], s_est[:, j])``."""
    a = np.asarray(s_true, dtype=np.float64)
    b = np.asarray(s_est, dtype=np.float64)
    if np.any(np.linalg.norm(a, axis=0) == 0) or np.any(np.linalg.norm(b, axis=0) == 0):
        raise ValueError("spectral angle undefined for a zero vector")
    cos = (a / np.linalg.norm(a, axis=0)).T @ (b / np.linalg.norm(b, axis=0))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def match_endmembers(s_true, s_est) -> np.ndarray:
    """Column permutation minimizing the total SAD.

    ``s_est[:, perm]`` is aligned with ``s_true`` (and ``x_est[perm]`` with
    the true abundances).
    """
    cost = sad_matrix(s_true, s_est)
    if cost.shape[0] != cost.shape[1]:
        raise ValueError("libraries must have the same number of endmembers")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


@dataclass
class EvalReport:
    rmse: float
    sre_db: float
    sad: Optional[list] = None
    mean_sad: Optional[float] = None
    permutation: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(v):
            return v if v is None or np.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "schema": "epunmix/1",
            "rmse": num(self.rmse),
            "sre_db": num(self.sre_db),
            "sad": None if self.sad is None else [float(v) for v in self.sad],
            "mean_sad": None if self.mean_sad is None else float(self.mean_sad),
            "permutation": [int(p) for p in self.permutation],
        }


def evaluate(x_true, x_est, s_true=None, s_est=None, match: bool = False) -> EvalReport:
    """Compare estimates against ground truth, optionally aligning endmembers first."""
    x_true = np.asarray(x_true, dtype=np.float64)
    x_est = np.asarray(x_est, dtype=np.float64)
    perm = np.arange(x_true.shape[0])
    if s_true is not None and s_est is not None:
        s_true = np.asarray(s_true, dtype=np.float64)
        s_est = np.asarray(s_est, dtype=np.float64)
        if s_true.shape != s_est.shape:
            raise ValueError(f"library shape mismatch: {s_true.shape} vs {s_est.shape}")
        if match:
            perm = match_endmembers(s_true, s_est)
        s_est = s_est[:, perm]
        sads = [sad(s_true[:, r], s_est[:, r]) for r in range(s_true.shape[1])]
    elif match:
        raise ValueError("endmember matching needs both libraries")
    else:
        sads = None
    x_est = _pair(x_true, x_est)[1][perm]
    return EvalReport(
        rmse=rmse(x_true, x_est),
        sre_db=sre_db(x_true, x_est),
        sad=sads,
        mean_sad=None if sads is None else float(np.mean(sads)),
        permutation=perm.tolist(),
    )
