"""Mercer spectra, tensor-product eigenvalue enumeration and rate diagnostics."""

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .kernels import BrownianBridgeCov, KernelSpec, Sobolev1Dirichlet

__all__ = [
    "SpectralReport",
    "mercer_eig",
    "cantor_pair",
    "cantor_unpair",
    "cantor_index",
    "cantor_enumerate",
    "tensor_eig_enumerate",
    "cantor_order_products",
    "sim_diag_commuting",
    "fit_decay",
    "fit_decay_rate",
    "quadratic_form_check",
    "convergence_study",
]


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    decay_fit: tuple = None
    metadata: dict = field(default_factory=dict)

    def to_rows(self):
        return [(k + 1, float(v)) for k, v in enumerate(self.eigenvalues)]


def mercer_eig(spec, grid, top_k=None):
    """Top eigenpairs of ``phi -> int K(., xi) phi(xi) dxi`` on a grid.

    ``spec`` is a kernel or an already assembled matrix ``K(x_i, x_j)``.
    Solves the symmetric problem ``W^1/2 K W^1/2 v = mu v`` and returns
    ``phi = W^-1/2 v``, orthonormal in the weighted inner product.
    """
    if isinstance(spec, KernelSpec):
        K = spec.gram(grid.points, grid.points)
        desc = spec.to_dict()
    else:
        K = np.asarray(spec, dtype=np.float64)
        desc = {"type": "matrix"}
    if K.shape != (grid.size, grid.size):
        raise ValueError("kernel matrix does not match the grid")
    top_k = grid.size if top_k is None else int(top_k)
    if not 1 <= top_k <= grid.size:
        raise ValueError("top_k must lie in [1, grid size]")
    sw = np.sqrt(grid.weights)
    A = sw[:, None] * K * sw[None, :]
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1][:top_k]
    vals, vecs = vals[order], vecs[:, order]
    lam_max = max(float(vals[0]), 0.0)
    if vals[-1] < -1e-8 * max(lam_max, 1e-300):
        raise np.linalg.LinAlgError(
            f"kernel matrix is not positive semidefinite (min eigenvalue {vals[-1]:.3e})"
        )
    vals = np.maximum(vals, 0.0)
    with np.errstate(divide="ignore"):
        phi = vecs / sw[:, None]
    fit = None
    pos = vals[vals > 0]
    if pos.size >= 5:
        fit = fit_decay(pos)
    return SpectralReport(vals, phi, fit, {"kernel": desc, "grid_size": grid.size})


# ---------------------------------------------------------------------------
# Cantor tupling


def _check_positive(*ks):
    for k in ks:
        if int(k) != k or k < 1:
            raise ValueError("Cantor indices are positive integers")


def cantor_pair(k1, k2):
    _check_positive(k1, k2)
    k1, k2 = int(k1), int(k2)
    return (k1 + k2 - 2) * (k1 + k2 - 1) // 2 + k2


def cantor_unpair(n):
    _check_positive(n)
    n = int(n)
    j = (math.isqrt(8 * n + 1) - 1) // 2  # j = k1 + k2 - 1, smallest with j(j+1)/2 >= n
    if j * (j + 1) // 2 < n:
        j += 1
    k2 = n - (j - 1) * j // 2
    return j + 1 - k2, k2


def cantor_index(ks):
    """Recursive m-tupling ``pi(pi(...pi(k1, k2)...), km)``."""
    ks = tuple(ks)
    if not ks:
        raise ValueError("empty tuple")
    _check_positive(*ks)
    n = int(ks[0])
    for k in ks[1:]:
        n = cantor_pair(n, k)
    return n


def cantor_enumerate(n, m):
    """Inverse of :func:`cantor_index` for m-tuples."""
    _check_positive(n)
    if m < 1:
        raise ValueError("m must be >= 1")
    out = []
    n = int(n)
    for _ in range(m - 1):
        n, k = cantor_unpair(n)
        out.append(k)
    out.append(n)
    return tuple(reversed(out))


# ---------------------------------------------------------------------------
# Tensor-product spectra


def tensor_eig_enumerate(factor_eigs, count=None, return_index=False):
    """Largest ``count`` products ``prod_i lam_i[k_i]``, sorted nonincreasing."""
    factors = [np.asarray(f, dtype=np.float64) for f in factor_eigs]
    prod = factors[0]
    for f in factors[1:]:
        prod = np.multiply.outer(prod, f)
    flat = prod.ravel()
    order = np.argsort(-flat, kind="stable")
    if count is not None:
        order = order[: int(count)]
    vals = flat[order]
    if return_index:
        idx = np.stack(np.unravel_index(order, prod.shape), axis=1) + 1
        return vals, idx
    return vals


def cantor_order_products(factor_eigs, count):
    """Products listed in Cantor order, skipping tuples beyond the factor lengths."""
    factors = [np.asarray(f, dtype=np.float64) for f in factor_eigs]
    m = len(factors)
    total = int(np.prod([len(f) for f in factors]))
    count = min(int(count), total)
    out = []
    n = 1
    while len(out) < count:
        ks = cantor_enumerate(n, m)
        if all(k <= len(f) for k, f in zip(ks, factors)):
            out.append(float(np.prod([f[k - 1] for k, f in zip(ks, factors)])))
        n += 1
    return np.array(out)


def sim_diag_commuting(mu, rho, count=None):
    """Joint spectrum for a kernel sharing eigenfunctions with the input covariance.

    ``rho[i, j]`` is the kernel eigenvalue of ``phi_i (x) psi_j`` where ``phi_i``
    are the covariance eigenfunctions with eigenvalues ``mu[i]``. Returns the
    sorted ``gamma = mu_i rho_ij``, their (i, j) indices (1-based), the
    unsorted gamma matrix and the basis scaling ``mu_i^-1/2``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[0] > mu.shape[0]:
        raise ValueError("rho must be indexed (i, j) with i within the covariance spectrum")
    mu = mu[: rho.shape[0]]
    if np.any(mu <= 0):
        raise ValueError("covariance eigenvalues must be strictly positive (injective covariance)")
    gamma = mu[:, None] * rho
    flat = gamma.ravel()
    order = np.argsort(-flat, kind="stable")
    if count is not None:
        order = order[: int(count)]
    idx = np.stack(np.unravel_index(order, gamma.shape), axis=1) + 1
    return {"gamma": flat[order], "index": idx, "gamma_matrix": gamma, "omega": mu**-0.5}


# ---------------------------------------------------------------------------
# Decay fits


def fit_decay(eigs, trim=True):
    """Least-squares fit ``log lam_k = c - r log k``; returns ``(r, c, rms residual)``.

    With ``trim`` and at least 10 entries, the first 3 and last 20% are
    dropped before fitting.
    """
    lam = np.asarray(eigs, dtype=np.float64)
    if lam.size < 5:
        raise ValueError("need at least 5 eigenvalues")
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("eigenvalues must be positive and finite")
    k = np.arange(1, lam.size + 1, dtype=np.float64)
    if trim and lam.size >= 10:
        hi = lam.size - int(0.2 * lam.size)
        k, lam = k[3:hi], lam[3:hi]
    X = np.stack([np.ones_like(k), np.log(k)], axis=1)
    coef, *_ = np.linalg.lstsq(X, np.log(lam), rcond=None)
    resid = np.log(lam) - X @ coef
    return float(-coef[1]), float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def fit_decay_rate(eigs, trim=True):
    return fit_decay(eigs, trim)[0]


# ---------------------------------------------------------------------------
# Quadratic-form check for the commuting case


def quadratic_form_check(n_modes=20, m=400, sigma=1.0, n_terms=200, seed=0):
    """Compare the two quadratic forms of a random G against their diagonal forms.

    Uses the Brownian-bridge covariance on the input axis and the Dirichlet
    Laplacian kernel on [0, 1]^2, whose eigenfunctions factor through the
    covariance eigenfunctions. Draws ``G = sum g_ij mu_i^-1/2 Psi_ij`` over
    ``n_modes**2`` modes and evaluates on an ``m x m`` grid:

    * ``sum_y int int G(x, y) Sigma(x, xi) G(xi, y)`` against ``sum g^2``
    * the Dirichlet energy ``int |grad G|^2`` against ``sum g^2 / gamma``.

    Spectra are computed numerically: ``mu`` by :func:`mercer_eig` on the
    grid and ``rho`` by applying the kernel operator to each basis function.
    Returns a dict with both pairs and their relative errors.
    """
    rng = np.random.default_rng(seed)
    h = 1.0 / (m + 1)
    x = h * np.arange(1, m + 1)
    # interior nodes with spacing weights: exact trapezoid rule for functions vanishing at 0, 1
    g1 = Grid(points=x[:, None], weights=np.full(m, h), bounds=((0.0, 1.0),),
              axes=(x,), axis_weights=(np.full(m, h),), kinds=("interior",))
    cov = BrownianBridgeCov(sigma**2)
    C = cov.gram(g1.points, g1.points)
    rep = mercer_eig(C, g1, n_modes)
    mu = rep.eigenvalues
    phi = rep.eigenvectors
    ref = np.sqrt(2.0) * np.sin(np.pi * np.outer(x, np.arange(1, n_modes + 1)))
    phi = phi * np.sign(np.sum(phi * ref, axis=0))  # align signs with sin(pi i x)
    psi_y = ref  # output-axis factor sqrt(2) sin(pi j y)

    # numeric kernel eigenvalues rho_ij = <Psi_ij, K Psi_ij> on a coarser grid
    mk = 120
    hk = 1.0 / (mk + 1)
    xk = hk * np.arange(1, mk + 1)
    Kop = Sobolev1Dirichlet(n_terms, 2).operator([xk, xk], [xk, xk])
    bx = np.sqrt(2.0) * np.sin(np.pi * np.outer(xk, np.arange(1, n_modes + 1)))
    basis = np.einsum("si,tj->ijst", bx, bx)
    KB = Kop(basis * hk * hk)
    rho = np.einsum("ijst,ijst->ij", basis, KB) * hk * hk

    sd = sim_diag_commuting(mu, rho)
    gamma = sd["gamma_matrix"]
    g = rng.standard_normal((n_modes, n_modes))
    G = np.einsum("ij,i,si,tj->st", g, mu**-0.5, phi, psi_y)

    cov_form = np.einsum("st,su,ut->", G, C, G) * h**3
    Gp = np.pad(G, 1)
    dx = np.diff(Gp, axis=0)[:, 1:-1] / h
    dy = np.diff(Gp, axis=1)[1:-1, :] / h
    energy = (np.sum(dx**2) + np.sum(dy**2)) * h * h
    diag_cov = float(np.sum(g**2))
    diag_energy = float(np.sum(g**2 / gamma))
    return {
        "cov_form": float(cov_form),
        "cov_diag": diag_cov,
        "cov_rel_err": abs(cov_form - diag_cov) / diag_cov,
        "energy": float(energy),
        "energy_diag": diag_energy,
        "energy_rel_err": abs(energy - diag_energy) / diag_energy,
        "mu": mu,
        "rho": rho,
        "gamma": sd["gamma"],
    }


def convergence_study(*args, **kwargs):
    from .training import convergence_study as _study

    return _study(*args, **kwargs)
