"""Random input functions from truncated Karhunen-Loeve expansions, plus noise.

Samplers take a ``numpy.random.Generator`` (or an integer seed) and return
arrays of shape ``(size, grid.size)``, one row per sampled function.
"""

import numpy as np

from .kernels import ExponentialCov
from .spectral import mercer_eig

__all__ = [
    "make_rng",
    "sample_brownian_bridge",
    "sample_kl_exponential",
    "kl_basis",
    "add_noise",
    "weighted_rms",
]


def make_rng(seed):
    """Generator from a seed, or pass an existing generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_brownian_bridge(grid, n_modes=100, sigma=1.0, scale=1.0, offset_sigma=0.0,
                           rng=None, size=1):
    """Brownian bridges on [0, 1] from ``n_modes`` sine modes.

    ``B(x) = offset + scale * sigma * sum_k xi_k sqrt(2) sin(pi k x) / (pi k)``
    with a constant offset drawn from ``N(0, offset_sigma^2)`` per sample.
    """
    if grid.dims != 1:
        raise ValueError("Brownian bridges are sampled on 1D grids")
    x = grid.points[:, 0]
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("grid must lie in [0, 1]; rescale the coordinates first")
    if int(n_modes) < 1:
        raise ValueError("n_modes must be >= 1")
    rng = make_rng(rng)
    k = np.arange(1, int(n_modes) + 1)
    basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(k, x)) / (np.pi * k[:, None])
    xi = rng.standard_normal((size, k.size))
    offset = rng.standard_normal((size, 1)) * offset_sigma
    return offset + scale * sigma * (xi @ basis)


def kl_basis(grid, n_modes, length=0.1):
    """Scaled KL modes ``sqrt(lam_k) phi_k`` of the exponential covariance, one per row."""
    if not 1 <= int(n_modes) <= grid.size:
        raise ValueError("n_modes must lie in [1, grid size]")
    rep = mercer_eig(ExponentialCov(length, grid.dims), grid, int(n_modes))
    return (rep.eigenvectors * np.sqrt(rep.eigenvalues)).T


def sample_kl_exponential(grid, n_modes=20, length=0.1, rng=None, size=1, basis=None):
    """Gaussian field with covariance ``exp(-|x - y| / length)``, KL-truncated.

    Pass a precomputed ``basis`` from :func:`kl_basis` to skip the eigensolve.
    """
    rng = make_rng(rng)
    if basis is None:
        basis = kl_basis(grid, n_modes, length)
    xi = rng.standard_normal((size, basis.shape[0]))
    return xi @ basis


def weighted_rms(values, weights):
    values = np.asarray(values, dtype=np.float64)
    return np.sqrt((values**2 @ weights) / np.sum(weights))


def add_noise(values, level, weights=None, rng=None):
    """Add Gaussian noise with std ``level`` times each sample's weighted RMS."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    values = np.asarray(values, dtype=np.float64)
    if level == 0:
        return values.copy()
    rng = make_rng(rng)
    flat = values.reshape(-1, values.shape[-1]) if values.ndim > 1 else values[None, :]
    if weights is None:
        weights = np.ones(flat.shape[-1])
    rms = weighted_rms(flat, np.asarray(weights))
    noisy = flat + level * rms[:, None] * rng.standard_normal(flat.shape)
    return noisy.reshape(values.shape)
