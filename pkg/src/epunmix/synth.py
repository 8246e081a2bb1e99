"""Synthetic scenes with spatially coherent sparse supports.

Supports come from a Voronoi partition of the grid: each cell activates a
random subset of at most ``sparsity`` endmembers, and pixels close to a cell
boundary also pick up the neighbouring cell's endmembers, so mixing is
heavier near boundaries than at cell centres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .metrics import sad
from .model import EndmemberMatrix, EPUnmixError, HyperImage, NoiseModel


class InfeasibleLibraryError(EPUnmixError):
    """Could not draw a library with the requested mutual spectral angle."""


@dataclass
class SyntheticScene:
    width: int
    height: int
    abundances: np.ndarray  # (R, N)
    support: np.ndarray  # (R, N) bool
    endmembers: EndmemberMatrix
    clean: np.ndarray  # (L, N)
    noisy: np.ndarray  # (L, N)
    noise: NoiseModel | None
    snr_db: float

    @property
    def image(self) -> HyperImage:
        return HyperImage(self.width, self.height, self.noisy)

    def validate(self, asc: bool = True):
        x, z = self.abundances, self.support
        assert np.all(x >= 0), "negative abundance"
        assert np.all(z.sum(axis=0) >= 1), "pixel with empty support"
        assert not np.any(x[~z] != 0), "abundance outside support"
        if asc:
            assert np.allclose(x.sum(axis=0), 1.0, atol=1e-12), "sum-to-one violated"
        else:
            assert np.all(x.sum(axis=0) <= 1.0 + 1e-12)
        np.testing.assert_allclose(self.clean, self.endmembers.spectra @ x, rtol=0, atol=1e-12)


def random_spectra(rng, n_bands, n_endmembers, min_sad=0.1, max_tries=1000):
    """Smooth nonnegative spectra: cumulative sums of low-pass noise scaled to [0, 1]."""
    smooth = max(1.0, n_bands / 25.0)
    accepted = []
    for _ in range(max_tries):
        w = gaussian_filter1d(rng.standard_normal(n_bands), smooth, mode="nearest")
        s = np.cumsum(w)
        span = s.max() - s.min()
        if span == 0:
            continue
        s = (s - s.min()) / span
        if all(sad(s, t) >= min_sad for t in accepted):
            accepted.append(s)
            if len(accepted) == n_endmembers:
                return EndmemberMatrix(np.stack(accepted, axis=1))
    raise InfeasibleLibraryError(
        f"could not draw {n_endmembers} spectra with mutual SAD >= {min_sad} in {max_tries} tries"
    )


def _supports(rng, width, height, n_endmembers, regions, sparsity, boundary):
    seeds = rng.uniform([0, 0], [height, width], size=(regions, 2))
    rows, cols = np.divmod(np.arange(width * height), width)
    pix = np.stack([rows + 0.5, cols + 0.5], axis=1)
    dist = np.linalg.norm(pix[:, None, :] - seeds[None, :, :], axis=2)  # (N, regions)
    order = np.argsort(dist, axis=1, kind="stable")

    sets = []
    for _ in range(regions):
        k = rng.integers(1, sparsity + 1)
        sets.append(rng.choice(n_endmembers, size=k, replace=False))

    support = np.zeros((n_endmembers, width * height), dtype=bool)
    for n in range(width * height):
        own = order[n, 0]
        active = list(sets[own])
        for j in order[n, 1:]:
            if dist[n, j] - dist[n, own] > boundary:
                break
            for r in sets[j]:
                if len(active) >= sparsity:
                    break
                if r not in active:
                    active.append(r)
        support[active, n] = True
    return support


def generate_scene(
    width: int,
    height: int,
    n_endmembers: int,
    n_bands: int,
    regions: int = 12,
    sparsity: int = 3,
    asc: bool = True,
    seed: int = 0,
    snr_db: float | None = None,
    noise_shape: str = "isotropic",
    boundary: float = 2.0,
    min_sad: float = 0.1,
) -> SyntheticScene:
    """Draw a deterministic scene; optionally corrupt it at ``snr_db``."""
    if n_endmembers < 2:
        raise ValueError("need at least two endmembers")
    if not 1 <= sparsity <= n_endmembers:
        raise ValueError("sparsity must lie in [1, R]")
    if regions < 1:
        raise ValueError("need at least one region")
    rng = np.random.default_rng(seed)
    endmembers = random_spectra(rng, n_bands, n_endmembers, min_sad=min_sad)
    support = _supports(rng, width, height, n_endmembers, regions, sparsity, boundary)

    x = np.zeros(support.shape)
    for n in range(support.shape[1]):
        idx = np.flatnonzero(support[:, n])
        w = rng.dirichlet(np.ones(idx.size)) if idx.size > 1 else np.ones(1)
        if not asc:
            w = w * rng.uniform(0.5, 1.0)
        x[idx, n] = w
    clean = endmembers.spectra @ x

    noisy, noise, realized = clean.copy(), None, np.inf
    if snr_db is not None:
        noisy, noise = add_noise(clean, snr_db, noise_shape, seed=int(rng.integers(2**31)))
        realized = realized_snr_db(clean, noisy)
    return SyntheticScene(width, height, x, support, endmembers, clean, noisy, noise, realized)


def add_noise(clean, snr_db: float, shape: str = "isotropic", seed: int = 0):
    """Add white Gaussian noise; returns ``(noisy, NoiseModel)``.

    ``shape="diagonal"`` draws a smooth per-band variance profile with the same
    mean variance as the isotropic case.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    n_bands, n_pix = clean.shape
    energy = float(np.sum(clean**2))
    if energy == 0:
        raise ValueError("clean cube has zero energy")
    sigma2 = energy / (n_pix * n_bands * 10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    if shape == "isotropic":
        noise = NoiseModel.isotropic(sigma2, n_bands)
        e = rng.standard_normal(clean.shape) * np.sqrt(sigma2)
    elif shape == "diagonal":
        profile = np.exp(gaussian_filter1d(rng.standard_normal(n_bands), max(1.0, n_bands / 10.0)))
        var = sigma2 * profile / profile.mean()
        noise = NoiseModel.diagonal(var)
        e = rng.standard_normal(clean.shape) * np.sqrt(var)[:, None]
    else:
        raise ValueError(f"unsupported noise shape {shape!r}")
    return clean + e, noise


def realized_snr_db(clean, noisy) -> float:
    err = float(np.sum((np.asarray(noisy) - clean) ** 2))
    if err == 0:
        return np.inf
    return 10.0 * np.log10(float(np.sum(np.asarray(clean) ** 2)) / err)
