"""Expectation propagation for spike-and-slab unmixing with an Ising support prior.

The posterior over abundances ``X`` and supports ``Z`` is approximated by a
product of three sites:

* site 1 (Gaussian in ``x``) stands in for the likelihood,
* site 2 (Gaussian in ``x`` times Bernoulli in ``z``) for the spike-and-slab prior,
* site 3 (four Bernoulli messages per ``z``) for the Ising prior, one message
  per edge color of the pixel graph.

One sweep updates site 1, site 2, then the four Ising colors in order, and
recombines the sites into the approximate posterior.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import (
    clamp_logit,
    log_logistic,
    log_normal_pdf,
    logistic,
    trunc_gauss_moments,
)
from .model import (
    N_COLORS,
    AbundancePosterior,
    EndmemberMatrix,
    EPFactorState,
    HyperImage,
    Hyperparams,
    NoiseModel,
    NumericalError,
    PixelGraph,
    augment_asc,
    build_grid_graph,
)

logger = logging.getLogger(__name__)

INIT_SITE_VARIANCE = 1e6
VAR_FLOOR = 1e-12


@dataclass
class EPReport:
    iterations: int = 0
    delta_m: list = field(default_factory=list)
    delta_p: list = field(default_factory=list)
    converged: bool = False
    skipped_likelihood: int = 0
    skipped_prior: int = 0
    edge_updates: int = 0

    @property
    def skipped(self) -> int:
        return self.skipped_likelihood + self.skipped_prior

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "delta_m": [float(x) for x in self.delta_m],
            "delta_p": [float(x) for x in self.delta_p],
            "converged": self.converged,
            "skipped": self.skipped,
            "skipped_likelihood": self.skipped_likelihood,
            "skipped_prior": self.skipped_prior,
            "edge_updates": self.edge_updates,
        }


class Executor:
    """Runs a function over contiguous index chunks, serially or on threads.

    Every task writes a disjoint slice of the state, so the thread count never
    changes which arithmetic is performed, only how it is batched.
    """

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError("threads must be >= 1")
        self.threads = threads
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def map(self, fn: Callable[[slice], object], n: int) -> list:
        if n == 0:
            return []
        if self._pool is None:
            return [fn(slice(0, n))]
        bounds = np.linspace(0, n, self.threads + 1).astype(int)
        chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        return list(self._pool.map(fn, chunks))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


_SERIAL = Executor(1)


def init_state(n_endmembers: int, n_pixels: int):
    if n_endmembers < 1 or n_pixels < 1:
        raise ValueError("need at least one endmember and one pixel")
    shape = (n_endmembers, n_pixels)
    tau = np.full(shape, 1.0 / INIT_SITE_VARIANCE)
    state = EPFactorState(
        tau1=tau.copy(),
        nu1=np.zeros(shape),
        tau2=tau.copy(),
        nu2=np.zeros(shape),
        p0=np.zeros(shape),
        pk=np.zeros((N_COLORS,) + shape),
    )
    return state, recombine(state)


def recombine(state: EPFactorState) -> AbundancePosterior:
    tau = state.tau1 + state.tau2
    if not np.all(tau > 0):
        raise NumericalError("combined site precision is not positive")
    return AbundancePosterior(
        means=(state.nu1 + state.nu2) / tau,
        variances=1.0 / tau,
        logits=state.p0 + state.pk.sum(axis=0),
    )


def _damp(new, old, eta):
    if eta == 1.0:
        return new
    return eta * new + (1.0 - eta) * old


# -- site 1: likelihood ------------------------------------------------------


def likelihood_terms(image: HyperImage, endmembers: EndmemberMatrix, noise: NoiseModel):
    """Return ``(S^T inv(Sigma) S, S^T inv(Sigma) Y)``."""
    s = endmembers.spectra
    if s.shape[0] != image.bands or noise.n_bands != image.bands:
        raise ValueError("image, library and noise model disagree on the number of bands")
    ws = noise.solve(s)
    gram = s.T @ ws
    gram = 0.5 * (gram + gram.T)
    return gram, ws.T @ image.data


def _batched_cholesky(a):
    """Cholesky factors of a stack of matrices plus a mask of SPD members."""
    try:
        return np.linalg.cholesky(a), np.ones(a.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    ok = np.ones(a.shape[0], dtype=bool)
    chol = np.zeros_like(a)
    for i in range(a.shape[0]):
        try:
            chol[i] = np.linalg.cholesky(a[i])
        except np.linalg.LinAlgError:
            ok[i] = False
    return chol, ok


def likelihood_messages(gram, proj, tau2, nu2):
    """Site-1 natural parameters for a batch of pixels.

    ``tau2``/``nu2``/``proj`` are ``(n, R)``. Dividing the matched marginal of
    ``x_r`` by its cavity gives the Schur complement

        tau1_r = G_rr - g_r' inv(A_-r) g_r,   nu1_r = h_r - g_r' inv(A_-r) (h_-r + nu2_-r)

    with ``A = G + diag(tau2)``. Evaluating it directly avoids subtracting a
    huge cavity precision from the marginal precision.
    """
    n, R = tau2.shape
    tau1 = np.empty((n, R))
    nu1 = np.empty((n, R))
    if R == 1:
        tau1[:, 0] = gram[0, 0]
        nu1[:, 0] = proj[:, 0]
        return tau1, nu1
    a = np.broadcast_to(gram, (n, R, R)).copy()
    a[:, np.arange(R), np.arange(R)] += tau2
    h = proj + nu2
    for r in range(R):
        idx = np.delete(np.arange(R), r)
        g = gram[idx, r]
        sub = a[:, idx[:, None], idx[None, :]]
        rhs = np.stack([np.broadcast_to(g, (n, R - 1)), h[:, idx]], axis=2)
        sol = np.linalg.solve(sub, rhs)
        tau1[:, r] = gram[r, r] - sol[:, :, 0] @ g
        nu1[:, r] = proj[:, r] - sol[:, :, 1] @ g
    return tau1, nu1


def _f1_chunk(state, gram, proj, eta, sl):
    tau2 = state.tau2[:, sl].T
    n, R = tau2.shape
    a = np.broadcast_to(gram, (n, R, R)).copy()
    a[:, np.arange(R), np.arange(R)] += tau2
    _, ok = _batched_cholesky(a)
    cols = np.arange(sl.start, sl.stop)[ok]
    tau1_new, nu1_new = likelihood_messages(gram, proj[:, cols].T, tau2[ok], state.nu2[:, cols].T)
    state.tau1[:, cols] = _damp(tau1_new.T, state.tau1[:, cols], eta)
    state.nu1[:, cols] = _damp(nu1_new.T, state.nu1[:, cols], eta)
    return int(n - ok.sum())


def update_likelihood_site(state, image, endmembers, noise, eta=1.0, executor=None, terms=None):
    """Moment-match site 1 pixel by pixel; returns the number of skipped pixels.

    Pixels whose system matrix is not positive definite keep their previous
    site parameters.
    """
    gram, proj = terms if terms is not None else likelihood_terms(image, endmembers, noise)
    executor = executor or _SERIAL
    return sum(executor.map(lambda sl: _f1_chunk(state, gram, proj, eta, sl), state.shape[1]))


# -- site 2: spike-and-slab prior --------------------------------------------


def spike_slab_moments(cavity_mean, cavity_var, cavity_logit, slab_variance):
    """Moments of the spike-and-slab tilted distribution.

    The tilted density is ``[z 2 N(x|0,v) 1(x>=0) + (1-z) delta(x)]`` times the
    Gaussian cavity ``N(x|m, s)`` and ``Bern(z|logistic(p))``.

    Returns ``(log_c, mean, var, z_logit)`` where ``log_c`` is the log
    normalizer, ``mean``/``var`` the moments of ``x`` and ``z_logit`` the log
    odds of ``z = 1``.
    """
    m = np.asarray(cavity_mean, dtype=np.float64)
    s = np.asarray(cavity_var, dtype=np.float64)
    p = np.asarray(cavity_logit, dtype=np.float64)
    v = np.asarray(slab_variance, dtype=np.float64)
    tau = s * v / (s + v)
    mu = m * v / (s + v)
    log_b, t_mean, t_var = trunc_gauss_moments(mu, tau)
    log_slab = math.log(2.0) + log_logistic(p) + log_normal_pdf(0.0, m, s + v) + log_b
    log_spike = log_logistic(-p) + log_normal_pdf(0.0, m, s)
    log_c = np.logaddexp(log_slab, log_spike)
    z_logit = log_slab - log_spike
    ez = logistic(z_logit)
    mean = ez * t_mean
    var = ez * t_var + ez * (1.0 - ez) * t_mean * t_mean
    return log_c, mean, var, z_logit


def _f2_chunk(state, slab_variance, eta, sl):
    tau1 = state.tau1[:, sl]
    nu1 = state.nu1[:, sl]
    cavity_ok = tau1 > 0
    safe_tau = np.where(cavity_ok, tau1, 1.0)
    p3 = state.pk[:, :, sl].sum(axis=0)
    _, mean, var, z_logit = spike_slab_moments(nu1 / safe_tau, 1.0 / safe_tau, p3, slab_variance)
    var = np.maximum(var, VAR_FLOOR)
    tau2_new = 1.0 / var - tau1
    nu2_new = mean / var - nu1
    p0_new = clamp_logit(z_logit) - p3
    # a bimodal tilted distribution can be wider than its cavity; the site
    # would get negative precision, so it keeps its previous parameters
    ok = cavity_ok & (tau2_new > 0)

    for name, new in (("tau2", tau2_new), ("nu2", nu2_new), ("p0", p0_new)):
        arr = getattr(state, name)
        block = arr[:, sl]
        arr[:, sl] = np.where(ok, _damp(new, block, eta), block)
    return int(ok.size - ok.sum())


def update_prior_site(state, slab_variance, eta=1.0, executor=None):
    """Moment-match site 2 for every (endmember, pixel); returns skip count."""
    executor = executor or _SERIAL
    return sum(executor.map(lambda sl: _f2_chunk(state, slab_variance, eta, sl), state.shape[1]))


# -- site 3: Ising prior -----------------------------------------------------


def ising_message(neighbor_cavity, beta):
    """Log-odds message sent across one Ising edge.

    For a pair with cavity logits ``a`` (here) and ``b`` (neighbor), the
    exact pairwise marginal of ``z`` has logit ``a + ising_message(b, beta)``.
    """
    lp = log_logistic(neighbor_cavity)
    lq = log_logistic(-neighbor_cavity)
    two_beta = 2.0 * beta
    return np.logaddexp(two_beta + lp, lq) - np.logaddexp(lp, two_beta + lq)


def _f3_chunk(state, base, edges, k, beta, eta, sl):
    a = edges[sl, 0]
    b = edges[sl, 1]
    slot = state.pk[k]
    new_a = _damp(ising_message(base[:, b], beta), slot[:, a], eta)
    new_b = _damp(ising_message(base[:, a], beta), slot[:, b], eta)
    slot[:, a] = new_a
    slot[:, b] = new_b
    return a.size


def update_ising_sites(state, graph: PixelGraph, beta, eta=1.0, executor=None):
    """Update the four Ising message slots color by color.

    Returns the number of edge updates performed (one per edge).
    """
    executor = executor or _SERIAL
    touched = 0
    for k in range(N_COLORS):
        edges = graph.color_edges(k)
        if edges.shape[0] == 0:
            continue
        # cavity logits without slot k; slot k is the only thing written below
        base = state.p0 + state.pk[[j for j in range(N_COLORS) if j != k]].sum(axis=0)
        touched += sum(executor.map(lambda sl: _f3_chunk(state, base, edges, k, beta, eta, sl), edges.shape[0]))
    return touched


# -- driver ------------------------------------------------------------------


def run_ep(
    image: HyperImage,
    endmembers: EndmemberMatrix,
    noise: NoiseModel,
    hyper: Hyperparams = Hyperparams(),
    graph: Optional[PixelGraph] = None,
    threads: int = 1,
    callback: Optional[Callable[[int, AbundancePosterior], None]] = None,
):
    """Run EP sweeps until the posterior stops moving.

    Returns ``(posterior, report)``.
    """
    if endmembers.bands != image.bands:
        raise ValueError(
            f"library has {endmembers.bands} bands but the image has {image.bands}"
        )
    image, endmembers, noise = augment_asc(image, endmembers, hyper.asc_delta, noise)
    if graph is None:
        graph = build_grid_graph(image.width, image.height)
    terms = likelihood_terms(image, endmembers, noise)
    state, post = init_state(endmembers.n_endmembers, image.n_pixels)
    report = EPReport()
    eta = hyper.damping

    with Executor(threads) as ex:
        for it in range(hyper.max_ep_iters):
            report.skipped_likelihood += update_likelihood_site(state, image, endmembers, noise, eta, ex, terms)
            report.skipped_prior += update_prior_site(state, hyper.slab_variance, eta, ex)
            report.edge_updates += update_ising_sites(state, graph, hyper.ising_beta, eta, ex)
            new = recombine(state)
            dm = float(np.max(np.abs(new.means - post.means)))
            dp = float(np.max(np.abs(new.logits - post.logits)))
            post = new
            report.iterations = it + 1
            report.delta_m.append(dm)
            report.delta_p.append(dp)
            if callback is not None:
                callback(it, post)
            logger.debug("ep sweep %d: dM=%.3e dP=%.3e", it + 1, dm, dp)
            if max(dm, dp) <= hyper.ep_tolerance:
                report.converged = True
                break
    post.check()
    return post, report
