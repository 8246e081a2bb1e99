"""Numerically stable scalar kernels shared by the EP updates.

All array functions are vectorized over numpy broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before taking logits.
PROB_EPS = 1e-12
LOGIT_MAX = float(special.logit(1.0 - PROB_EPS))

# Below this standardized truncation point the inverse Mills ratio is
# evaluated by continued fraction instead of through erfcx.
_TAIL_ALPHA = -8.0
_CF_DEPTH = 120

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class DegenerateCavityError(ArithmeticError):
    """Gaussian division by a site of identical precision."""


class SaturatedProbabilityError(ValueError):
    """Logit requested for a probability of exactly 0 or 1."""


def std_normal_cdf(t):
    return special.ndtr(t)


def log_std_normal_cdf(t):
    return special.log_ndtr(t)


def std_normal_pdf(t):
    t = np.asarray(t, dtype=np.float64)
    return np.exp(-0.5 * t * t - _LOG_SQRT_2PI)


def log_normal_pdf(x, mean, var):
    """log N(x | mean, var), elementwise."""
    d = np.asarray(x, dtype=np.float64) - mean
    return -0.5 * d * d / var - 0.5 * np.log(var) - _LOG_SQRT_2PI


def logistic(p):
    return special.expit(p)


def log_logistic(p):
    """log(logistic(p)) without underflow for very negative p."""
    return special.log_expit(p)


def clamp_probability(q):
    return np.clip(q, PROB_EPS, 1.0 - PROB_EPS)


def logit(q):
    q = np.asarray(q, dtype=np.float64)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise SaturatedProbabilityError("logit undefined for probabilities outside (0, 1)")
    return special.logit(q)


def clamp_logit(p):
    """Clip logits to the range reachable from clamped probabilities."""
    return np.clip(p, -LOGIT_MAX, LOGIT_MAX)


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    var: float

    @property
    def valid(self) -> bool:
        return self.var > 0

    @property
    def precision(self) -> float:
        return 1.0 / self.var

    @classmethod
    def from_natural(cls, precision: float, precision_mean: float) -> "Gaussian1D":
        return cls(precision_mean / precision, 1.0 / precision)


def gaussian_multiply(a: Gaussian1D, b: Gaussian1D) -> Gaussian1D:
    tau = 1.0 / a.var + 1.0 / b.var
    nu = a.mean / a.var + b.mean / b.var
    return Gaussian1D.from_natural(tau, nu)


def gaussian_divide(q: Gaussian1D, site: Gaussian1D) -> Gaussian1D:
    """Remove ``site`` from ``q``; the result may have negative variance."""
    tau = 1.0 / q.var - 1.0 / site.var
    if tau == 0.0:
        raise DegenerateCavityError("cavity precision is exactly zero")
    nu = q.mean / q.var - site.mean / site.var
    return Gaussian1D.from_natural(tau, nu)


def _mills_tail(x):
    """Continued-fraction terms for the lower tail, ``x = -alpha > 0``.

    Returns ``(r, c, d)`` with ``1/m(x) = x + r`` (``m`` the Mills ratio)
    and ``r = 1/(x + c)``, ``c = 2/(x + d)``.
    """
    k = np.zeros_like(x)
    k_prev = k
    for j in range(_CF_DEPTH, 1, -1):
        k_prev = k
        k = j / (x + k)
    # after the loop k = K_2 and k_prev = K_3
    return 1.0 / (x + k), k, k_prev


def trunc_gauss_moments(mu, tau):
    """Moments of N(x | mu, tau) restricted to x >= 0.

    Returns ``(log_z, mean, var)`` where ``log_z = log Phi(mu / sqrt(tau))`` is
    the log of the retained mass.
    """
    mu, tau = np.broadcast_arrays(np.asarray(mu, dtype=np.float64), np.asarray(tau, dtype=np.float64))
    if np.any(~(tau > 0)):
        raise ValueError("truncated Gaussian needs a strictly positive variance")
    s = np.sqrt(tau)
    alpha = mu / s
    log_z = special.log_ndtr(alpha)
    mean = np.empty_like(alpha)
    var = np.empty_like(alpha)

    body = alpha >= _TAIL_ALPHA
    a = alpha[body]
    lam = np.sqrt(2.0 / np.pi) / special.erfcx(-a / np.sqrt(2.0))
    mean[body] = mu[body] + s[body] * lam
    var[body] = tau[body] * np.maximum(1.0 - lam * (lam + a), 0.0)

    tail = ~body
    if np.any(tail):
        x = -alpha[tail]
        r, c, d = _mills_tail(x)
        mean[tail] = s[tail] * r
        var[tail] = tau[tail] * (x + 2.0 * c - d) / ((x + d) * (x + c) ** 2)

    if mean.ndim == 0:
        return float(log_z), float(mean), float(var)
    return log_z, mean, var
