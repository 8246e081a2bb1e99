"""Semi-supervised refinement of the endmember matrix.

EM alternates EP abundance inference with an M-step that maximizes the
expected log-likelihood under the Gaussian part of the EP posterior, minus a
total-variance (minimum volume) penalty, subject to ``S >= 0``. The M-step is
a convex quadratic program solved by ADMM with the splitting ``S = A``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ep import run_ep
from .model import AbundancePosterior, EndmemberMatrix, HyperImage, Hyperparams, NoiseModel

logger = logging.getLogger(__name__)


def centering_matrix(n_endmembers: int) -> np.ndarray:
    return np.eye(n_endmembers) - np.full((n_endmembers, n_endmembers), 1.0 / n_endmembers)


def tv_volume(spectra) -> float:
    """Sum of squared distances of the endmembers to their mean, ``|S B|_F^2``."""
    s = np.asarray(spectra.spectra if isinstance(spectra, EndmemberMatrix) else spectra, dtype=np.float64)
    sb = s - s.mean(axis=1, keepdims=True)
    return float(np.sum(sb * sb))


@dataclass
class MStepProblem:
    """Sufficient statistics of the M-step.

    ``ym = Y M'`` (L x R), ``gram = M M' + sum_n diag(v_n)`` (R x R),
    ``y_quad = tr(Y' inv(Sigma) Y)``.
    """

    ym: np.ndarray
    gram: np.ndarray
    noise: NoiseModel
    tv_lambda: float
    n_pixels: int
    y_quad: float

    @property
    def bands(self) -> int:
        return self.ym.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.ym.shape[1]

    @property
    def centering(self) -> np.ndarray:
        return centering_matrix(self.n_endmembers)


def build_mstep_problem(image: HyperImage, posterior: AbundancePosterior, noise: NoiseModel, tv_lambda: float = 0.0):
    y = image.data
    m = posterior.means
    gram = m @ m.T + np.diag(posterior.variances.sum(axis=1))
    return MStepProblem(
        ym=y @ m.T,
        gram=0.5 * (gram + gram.T),
        noise=noise,
        tv_lambda=float(tv_lambda),
        n_pixels=image.n_pixels,
        y_quad=float(np.sum(y * noise.solve(y))),
    )


def expected_loglik(spectra, problem: MStepProblem) -> float:
    """E_Q[log p(Y | S, X)] for Gaussian Q with the problem's moments."""
    s = np.asarray(spectra.spectra if isinstance(spectra, EndmemberMatrix) else spectra, dtype=np.float64)
    ws = problem.noise.solve(s)
    quad = problem.y_quad - 2.0 * np.sum(ws * problem.ym) + np.sum((ws @ problem.gram) * s)
    n, L = problem.n_pixels, problem.bands
    return float(-0.5 * quad - 0.5 * n * L * np.log(2.0 * np.pi) - 0.5 * n * problem.noise.logdet())


def mstep_objective(spectra, problem: MStepProblem) -> float:
    """The quantity the M-step maximizes: expected log-likelihood minus the TV penalty."""
    return expected_loglik(spectra, problem) - 0.5 * problem.tv_lambda * tv_volume(spectra)


def _curvature_scale(problem: MStepProblem, w) -> float:
    r = problem.n_endmembers
    return float(np.mean(w) * np.trace(problem.gram) / r + problem.tv_lambda) or 1.0


@dataclass
class ADMMInfo:
    iterations: int
    primal: float
    dual: float
    converged: bool


def m_step_admm(problem: MStepProblem, rho=1.0, iters=500, tol=1e-8, init=None, return_info=False):
    """Maximize the M-step objective over ``S >= 0`` by ADMM.

    The quadratic is divided by its mean curvature before splitting, so
    ``rho`` is a dimensionless penalty. Returns the nonnegative iterate ``A``
    as an :class:`EndmemberMatrix`.
    """
    if not rho > 0:
        raise ValueError("ADMM penalty rho must be > 0")
    L, R = problem.bands, problem.n_endmembers
    w, q = problem.noise.precision_eig()
    kappa = _curvature_scale(problem, w)
    w = w / kappa
    lam = problem.tv_lambda / kappa
    b = problem.centering

    rot = (lambda x: x) if q is None else (lambda x: q.T @ x)
    unrot = (lambda x: x) if q is None else (lambda x: q @ x)

    # row i of the rotated S solves  s_i' (w_i C + lam B + rho I) = rhs_i'
    k = w[:, None, None] * problem.gram[None] + lam * b[None] + rho * np.eye(R)[None]
    k_inv = np.linalg.inv(k)
    data_rhs = w[:, None] * rot(problem.ym)

    if init is None:
        s = np.zeros((L, R))
        s[:] = np.maximum(unrot(np.einsum("lij,lj->li", k_inv, data_rhs)), 0.0)
    else:
        s = np.asarray(init.spectra if isinstance(init, EndmemberMatrix) else init, dtype=np.float64).copy()
    a = np.maximum(s, 0.0)
    u = np.zeros_like(s)
    thresh = tol * np.sqrt(L * R)
    primal = dual = np.inf
    it = 0
    for it in range(1, iters + 1):
        rhs = data_rhs + rho * rot(a - u)
        s = unrot(np.einsum("lij,lj->li", k_inv, rhs))
        a_prev = a
        a = np.maximum(s + u, 0.0)
        u += s - a
        primal = float(np.linalg.norm(s - a))
        dual = float(rho * np.linalg.norm(a - a_prev))
        if primal < thresh and dual < thresh:
            break
    info = ADMMInfo(it, primal, dual, bool(primal < thresh and dual < thresh))
    logger.debug("admm: %d iterations, primal %.2e dual %.2e", it, primal, dual)
    # a column can vanish when an endmember carries no abundance; keep it alive
    dead = np.all(a == 0, axis=0)
    if np.any(dead):
        fallback = np.full_like(a, 1e-12) if init is None else np.maximum(np.asarray(getattr(init, "spectra", init)), 1e-12)
        a[:, dead] = fallback[:, dead]
    out = EndmemberMatrix(a)
    return (out, info) if return_info else out


@dataclass
class EMReport:
    iterations: int = 0
    converged: bool = False
    objective_before: list = field(default_factory=list)
    objective_after: list = field(default_factory=list)
    relative_change: list = field(default_factory=list)
    ep_reports: list = field(default_factory=list)
    admm: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "objective_before": [float(v) for v in self.objective_before],
            "objective_after": [float(v) for v in self.objective_after],
            "relative_change": [float(v) for v in self.relative_change],
            "ep": [r.to_dict() for r in self.ep_reports],
            "admm": [vars(a) for a in self.admm],
        }


def run_em(image: HyperImage, init: EndmemberMatrix, noise: NoiseModel, hyper: Hyperparams = Hyperparams(), threads: int = 1):
    """Alternate EP and the ADMM M-step.

    Returns ``(endmembers, posterior, report)``; the posterior is the EP
    result under the returned endmembers.
    """
    s = init
    report = EMReport()
    for t in range(hyper.max_em_iters):
        post, ep_rep = run_ep(image, s, noise, hyper, threads=threads)
        problem = build_mstep_problem(image, post, noise, hyper.tv_lambda)
        before = mstep_objective(s, problem)
        s_new, info = m_step_admm(
            problem, hyper.admm_rho, hyper.admm_iters, hyper.admm_tolerance, init=s, return_info=True
        )
        after = mstep_objective(s_new, problem)
        change = float(np.linalg.norm(s_new.spectra - s.spectra) / np.linalg.norm(s.spectra))
        report.ep_reports.append(ep_rep)
        report.admm.append(info)
        report.objective_before.append(before)
        report.objective_after.append(after)
        report.relative_change.append(change)
        report.iterations = t + 1
        logger.info("em %d: objective %.6e -> %.6e, change %.3e", t + 1, before, after, change)
        s = s_new
        if change <= hyper.em_tolerance:
            report.converged = True
            break
    post, ep_rep = run_ep(image, s, noise, hyper, threads=threads)
    report.ep_reports.append(ep_rep)
    return s, post, report
