"""Domain types for EP unmixing and the colored pixel graph.

Array conventions used throughout the package:

* an image is stored as an ``(L, N)`` array, one spectrum per column;
* pixels are indexed row-major, ``n = row * width + col``;
* abundance-shaped quantities are ``(R, N)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

# Number of neighbour slots per pixel on the 4-connected grid.
N_COLORS = 4


class EPUnmixError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(EPUnmixError):
    """A numerical failure (corrupted state, ill-posed system)."""


@dataclass(frozen=True)
class HyperImage:
    width: int
    height: int
    data: np.ndarray  # (L, N)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if data.ndim != 2:
            raise ValueError(f"image data must be 2-D (bands, pixels), got shape {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("image needs at least one band")
        if data.shape[1] != self.width * self.height:
            raise ValueError(
                f"{data.shape[1]} pixels do not match a {self.width}x{self.height} grid"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[1]

    def pixel(self, row: int, col: int) -> np.ndarray:
        return self.data[:, row * self.width + col]


@dataclass(frozen=True)
class NoiseModel:
    """Known Gaussian noise covariance, isotropic, diagonal or full.

    ``values`` holds a single variance, a vector of per-band variances or an
    ``(L, L)`` covariance depending on ``kind``. Use the alternate
    constructors rather than building instances by hand.
    """

    kind: str
    values: np.ndarray
    n_bands: int
    _chol: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    KINDS = ("isotropic", "diagonal", "full")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("noise parameters must be finite")
        if self.kind == "isotropic":
            values = values.reshape(())
            if values <= 0:
                raise ValueError("noise variance must be strictly positive")
        elif self.kind == "diagonal":
            values = values.reshape(-1)
            if values.shape[0] != self.n_bands:
                raise ValueError("diagonal noise needs one variance per band")
            if np.any(values <= 0):
                raise ValueError("noise variances must be strictly positive")
        else:
            if values.shape != (self.n_bands, self.n_bands):
                raise ValueError("full covariance must be (L, L)")
            if not np.allclose(values, values.T, rtol=1e-10, atol=0.0):
                raise ValueError("full covariance must be symmetric")
            values = 0.5 * (values + values.T)
            try:
                chol = scipy.linalg.cho_factor(values, lower=True)
            except np.linalg.LinAlgError as exc:
                raise ValueError("full covariance is not positive definite") from exc
            object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "values", values)

    @classmethod
    def isotropic(cls, variance: float, n_bands: int) -> "NoiseModel":
        return cls("isotropic", np.asarray(variance), n_bands)

    @classmethod
    def diagonal(cls, variances) -> "NoiseModel":
        variances = np.asarray(variances, dtype=np.float64).reshape(-1)
        return cls("diagonal", variances, variances.shape[0])

    @classmethod
    def full(cls, covariance) -> "NoiseModel":
        covariance = np.asarray(covariance, dtype=np.float64)
        return cls("full", covariance, covariance.shape[0])

    def band_variances(self) -> np.ndarray:
        if self.kind == "isotropic":
            return np.full(self.n_bands, float(self.values))
        if self.kind == "diagonal":
            return self.values.copy()
        return np.diag(self.values).copy()

    def dense(self) -> np.ndarray:
        if self.kind == "full":
            return self.values.copy()
        return np.diag(self.band_variances())

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``inv(Sigma) @ b`` for ``b`` with leading dimension L."""
        b = np.asarray(b, dtype=np.float64)
        if self.kind == "full":
            return scipy.linalg.cho_solve(self._chol, b)
        var = self.band_variances()
        return b / var.reshape((-1,) + (1,) * (b.ndim - 1))

    def logdet(self) -> float:
        if self.kind == "full":
            return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))
        return float(np.sum(np.log(self.band_variances())))

    def precision_eig(self):
        """Eigendecomposition of the precision matrix.

        Returns ``(w, Q)`` with ``inv(Sigma) = Q @ diag(w) @ Q.T``. For the
        isotropic and diagonal kinds ``Q`` is ``None`` (the identity).
        """
        if self.kind != "full":
            return 1.0 / self.band_variances(), None
        w, q = np.linalg.eigh(self.values)
        return 1.0 / w, q

    def extend(self, variance: float) -> "NoiseModel":
        """Append one band with the given independent noise variance."""
        if self.kind == "isotropic" and variance == float(self.values):
            return NoiseModel.isotropic(variance, self.n_bands + 1)
        if self.kind == "full":
            cov = np.zeros((self.n_bands + 1, self.n_bands + 1))
            cov[:-1, :-1] = self.values
            cov[-1, -1] = variance
            return NoiseModel.full(cov)
        return NoiseModel.diagonal(np.append(self.band_variances(), variance))


@dataclass(frozen=True)
class EndmemberMatrix:
    spectra: np.ndarray  # (L, R)

    def __post_init__(self):
        spectra = np.asarray(self.spectra, dtype=np.float64)
        if spectra.ndim != 2 or spectra.shape[1] < 1 or spectra.shape[0] < 1:
            raise ValueError(f"endmember matrix must be (L, R) with R >= 1, got {spectra.shape}")
        if not np.all(np.isfinite(spectra)):
            raise ValueError("endmember matrix contains non-finite values")
        if np.any(np.all(spectra == 0, axis=0)):
            raise ValueError("endmember columns must be nonzero")
        object.__setattr__(self, "spectra", spectra)

    @property
    def bands(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.spectra.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    slab_variance: float = 0.5
    ising_beta: float = 0.3
    damping: float = 0.8
    max_ep_iters: int = 50
    ep_tolerance: float = 1e-4
    asc_delta: float = 0.0
    tv_lambda: float = 0.0
    admm_rho: float = 1.0
    admm_iters: int = 500
    admm_tolerance: float = 1e-8
    max_em_iters: int = 20
    em_tolerance: float = 1e-4
    rng_seed: int = 0

    def __post_init__(self):
        if not self.slab_variance > 0:
            raise ValueError("slab_variance must be > 0")
        if not self.ising_beta >= 0:
            raise ValueError("ising_beta must be >= 0")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_ep_iters < 0 or self.max_em_iters < 0 or self.admm_iters < 0:
            raise ValueError("iteration limits must be nonnegative")
        if not self.ep_tolerance >= 0 or not self.em_tolerance >= 0 or not self.admm_tolerance >= 0:
            raise ValueError("tolerances must be nonnegative")
        if not self.asc_delta >= 0:
            raise ValueError("asc_delta must be >= 0")
        if not self.tv_lambda >= 0:
            raise ValueError("tv_lambda must be >= 0")
        if not self.admm_rho > 0:
            raise ValueError("admm_rho must be > 0")


@dataclass
class AbundancePosterior:
    """Factorized Gaussian x Bernoulli approximation of the abundance posterior."""

    means: np.ndarray  # (R, N)
    variances: np.ndarray  # (R, N)
    logits: np.ndarray  # (R, N)

    @property
    def presence(self) -> np.ndarray:
        from scipy.special import expit

        return expit(self.logits)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def shape(self):
        return self.means.shape

    def check(self):
        if not (self.means.shape == self.variances.shape == self.logits.shape):
            raise NumericalError("posterior arrays have mismatched shapes")
        if not np.all(self.variances > 0):
            raise NumericalError("posterior variances must be positive")
        if not (np.all(np.isfinite(self.means)) and np.all(np.isfinite(self.logits))):
            raise NumericalError("posterior contains non-finite values")


@dataclass
class EPFactorState:
    """Site parameters of the three approximate factors.

    Gaussian sites are kept in natural parameters: ``tau`` is the precision
    and ``nu`` the precision-times-mean. ``pk[k]`` is the Ising message
    received through the pixel's color-``k`` edge (zero where the pixel has
    no such edge).
    """

    tau1: np.ndarray
    nu1: np.ndarray
    tau2: np.ndarray
    nu2: np.ndarray
    p0: np.ndarray
    pk: np.ndarray  # (4, R, N)

    @property
    def shape(self):
        return self.tau1.shape

    @property
    def m1(self):
        return self.nu1 / self.tau1

    @property
    def v1(self):
        return 1.0 / self.tau1

    @property
    def m2(self):
        return self.nu2 / self.tau2

    @property
    def v2(self):
        return 1.0 / self.tau2

    def copy(self) -> "EPFactorState":
        return EPFactorState(*(a.copy() for a in (self.tau1, self.nu1, self.tau2, self.nu2, self.p0, self.pk)))


@dataclass(frozen=True)
class PixelGraph:
    """4-connected grid with edges partitioned into four matchings.

    ``edges[i] = (n, n2)`` with ``n < n2``; ``colors[i]`` in ``0..3``
    (colors 0/1: horizontal edges leaving an even/odd column, colors 2/3:
    vertical edges leaving an even/odd row).
    """

    width: int
    height: int
    edges: np.ndarray  # (E, 2) int
    colors: np.ndarray  # (E,) int

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def color_edges(self, k: int) -> np.ndarray:
        return self.edges[self.colors == k]

    def class_sizes(self):
        return tuple(int(np.sum(self.colors == k)) for k in range(N_COLORS))

    def is_matching(self, k: int) -> bool:
        e = self.color_edges(k).ravel()
        return np.unique(e).size == e.size

    def without_edges(self) -> "PixelGraph":
        return PixelGraph(self.width, self.height, np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))


def build_grid_graph(width: int, height: int) -> PixelGraph:
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    idx = np.arange(width * height).reshape(height, width)

    h_src = idx[:, :-1].ravel()
    h_dst = idx[:, 1:].ravel()
    h_col = np.tile(np.arange(width - 1) % 2, height)

    v_src = idx[:-1, :].ravel()
    v_dst = idx[1:, :].ravel()
    v_col = 2 + np.repeat(np.arange(height - 1) % 2, width)

    edges = np.concatenate([np.stack([h_src, h_dst], 1), np.stack([v_src, v_dst], 1)]).astype(np.int64)
    colors = np.concatenate([h_col, v_col]).astype(np.int64)
    graph = PixelGraph(width, height, edges.reshape(-1, 2), colors)
    for k in range(N_COLORS):
        if not graph.is_matching(k):
            raise AssertionError(f"color class {k} is not a matching")
    return graph


def asc_noise_variance(delta: float) -> float:
    """Noise variance given to the sum-to-one pseudo-band."""
    return (delta / 100.0) ** 2


def augment_asc(image: HyperImage, endmembers: EndmemberMatrix, delta: float, noise: Optional[NoiseModel] = None):
    """Append the sum-to-one pseudo-band to the data, the library and the noise.

    Returns ``(image, endmembers, noise)``; with ``delta == 0`` the inputs are
    returned unchanged.
    """
    if delta < 0:
        raise ValueError("asc delta must be >= 0")
    if delta == 0:
        return image, endmembers, noise
    data = np.vstack([image.data, np.full((1, image.n_pixels), float(delta))])
    spectra = np.vstack([endmembers.spectra, np.full((1, endmembers.n_endmembers), float(delta))])
    if noise is not None:
        noise = noise.extend(asc_noise_variance(delta))
    return HyperImage(image.width, image.height, data), EndmemberMatrix(spectra), noise
