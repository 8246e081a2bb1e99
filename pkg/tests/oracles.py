"""Independent reference computations used by the test-suite.

Nothing here imports the package's numerical kernels: truncated moments and
tilted moments come from mpmath quadrature, Ising marginals from explicit
enumeration, constrained least squares from projected gradient.
"""

import itertools

import mpmath as mp
import numpy as np

mp.mp.dps = 40


def _npdf(x, m, v):
    return mp.exp(-((x - m) ** 2) / (2 * v)) / mp.sqrt(2 * mp.pi * v)


def trunc_moments(mu, tau):
    """(log Z, mean, var) of N(mu, tau) restricted to x >= 0 by quadrature."""
    mu, tau = mp.mpf(mu), mp.mpf(tau)
    s = mp.sqrt(tau)
    # split at the bulk of whichever part of the density survives truncation
    lo = max(mu, 0)
    pts = [0, lo, lo + 10 * s, lo + 60 * s, mp.inf]
    pts = sorted(set(pts), key=lambda t: float(t) if t != mp.inf else float("inf"))
    f = lambda x: _npdf(x, mu, tau)
    z = mp.quad(f, pts)
    e1 = mp.quad(lambda x: x * f(x), pts) / z
    e2 = mp.quad(lambda x: (x - e1) ** 2 * f(x), pts) / z
    return float(mp.log(z)), float(e1), float(e2)


def normal_cdf(t):
    return float(mp.quad(lambda x: mp.exp(-x * x / 2), [-mp.inf, 0, t]) / mp.sqrt(2 * mp.pi)
                 if t > 0 else mp.quad(lambda x: mp.exp(-x * x / 2), [-mp.inf, t]) / mp.sqrt(2 * mp.pi))


def spike_slab(m, s, p, v):
    """(mean, var, E[z]) of the spike-and-slab tilted distribution.

    Slab branch z=1: 2 N(x|0,v) on x >= 0, spike branch z=0: point mass at 0,
    both multiplied by the cavity N(x|m,s) and Bern(z|logistic(p)).
    """
    m, s, v, p = (mp.mpf(t) for t in (m, s, v, p))
    w1 = 1 / (1 + mp.exp(-p))
    w0 = 1 - w1
    f = lambda x: 2 * _npdf(x, 0, v) * _npdf(x, m, s)
    sd = mp.sqrt(s * v / (s + v))
    c = mp.mpf(m) * v / (s + v)
    pts = [0, max(c, 0), max(c, 0) + 20 * sd, mp.inf]
    slab = w1 * mp.quad(f, pts)
    spike = w0 * _npdf(0, m, s)
    z = slab + spike
    mean = w1 * mp.quad(lambda x: x * f(x), pts) / z
    second = w1 * mp.quad(lambda x: x * x * f(x), pts) / z
    return float(mean), float(second - mean * mean), float(slab / z)


def ising_pair(a, b, beta):
    """Exact marginals P(z=1), P(z'=1) of
    exp(2 beta [z == z']) Bern(z|sig(a)) Bern(z'|sig(b)) by enumeration."""
    sa, sb = 1 / (1 + mp.exp(-mp.mpf(a))), 1 / (1 + mp.exp(-mp.mpf(b)))
    tot = e1 = e2 = mp.mpf(0)
    for z, z2 in itertools.product((0, 1), repeat=2):
        w = mp.exp(2 * mp.mpf(beta) * (z == z2)) * (sa if z else 1 - sa) * (sb if z2 else 1 - sb)
        tot += w
        e1 += w * z
        e2 += w * z2
    return float(e1 / tot), float(e2 / tot), float(tot)


def gaussian_posterior(S, cov, y, prior_prec, prior_mean):
    """Dense posterior of x for y ~ N(Sx, cov), x ~ N(prior_mean, diag(1/prior_prec))."""
    P = np.linalg.inv(cov)
    A = S.T @ P @ S + np.diag(prior_prec)
    V = np.linalg.inv(A)
    m = V @ (S.T @ P @ y + prior_prec * prior_mean)
    return m, V


def projected_gradient_nnls(A, b, iters=200000, tol=1e-15):
    """min 0.5 |Ax - b|^2 s.t. x >= 0 by accelerated projected gradient."""
    G = A.T @ A
    c = A.T @ b
    step = 1.0 / np.linalg.eigvalsh(G)[-1]
    x = np.zeros(G.shape[0])
    yk, t = x.copy(), 1.0
    for _ in range(iters):
        x_new = np.maximum(yk - step * (G @ yk - c), 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = x_new + (t - 1) / t_new * (x_new - x)
        if np.linalg.norm(x_new - x) < tol:
            x = x_new
            break
        x, t = x_new, t_new
    return x


def pairwise_sum(S):
    """0.5 * sum over ordered pairs (i, j) of |s_i - s_j|^2."""
    R = S.shape[1]
    return 0.5 * sum(np.sum((S[:, i] - S[:, j]) ** 2) for i in range(R) for j in range(R))


def pairwise_tv(S):
    """Pairwise form of the endmember spread; the ordered-pair sum counts each
    squared distance to the mean R times, hence the 1/R."""
    return pairwise_sum(S) / S.shape[1]


def brute_force_assignment(cost):
    R = cost.shape[0]
    return min(sum(cost[i, p[i]] for i in range(R)) for p in itertools.permutations(range(R)))


def two_state_posterior(y, noise_var, slab_var):
    """Exact posterior of a scalar-abundance pixel y_l = x + e_l, z ~ Bern(1/2).

    Returns (P(z=1|y), E[x|y]) by 1D quadrature over the slab.
    """
    y = [mp.mpf(t) for t in y]
    nv, sv = mp.mpf(noise_var), mp.mpf(slab_var)
    lik = lambda x: mp.exp(-sum((t - x) ** 2 for t in y) / (2 * nv))
    slab = lambda x: 2 * _npdf(x, 0, sv) * lik(x)
    z1 = mp.quad(slab, [0, 1, 3, mp.inf])
    z0 = lik(0)
    mean = mp.quad(lambda x: x * slab(x), [0, 1, 3, mp.inf]) / (z1 + z0)
    return float(z1 / (z1 + z0)), float(mean)


def projected_gradient_qp(H, c, iters=500000, tol=1e-16):
    """min 0.5 x'Hx - c'x s.t. x >= 0 by accelerated projected gradient."""
    step = 1.0 / np.linalg.eigvalsh(H)[-1]
    x = np.zeros(H.shape[0])
    yk, t = x.copy(), 1.0
    for _ in range(iters):
        x_new = np.maximum(yk - step * (H @ yk - c), 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        yk = x_new + (t - 1) / t_new * (x_new - x)
        if np.linalg.norm(x_new - x) < tol:
            return x_new
        x, t = x_new, t_new
    return x


def direct_expected_loglik(S, Y, M, V, cov):
    """Pixel-by-pixel evaluation of E_Q[log N(y_n | S x_n, cov)] with
    x_n ~ N(m_n, diag(v_n))."""
    L, N = Y.shape
    P = np.linalg.inv(cov)
    logdet = np.linalg.slogdet(cov)[1]
    total = 0.0
    for n in range(N):
        r = Y[:, n] - S @ M[:, n]
        total += -0.5 * r @ P @ r - 0.5 * np.trace(P @ S @ np.diag(V[:, n]) @ S.T)
        total += -0.5 * L * np.log(2 * np.pi) - 0.5 * logdet
    return total
