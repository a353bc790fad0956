"""Finite-difference solvers for the benchmark PDEs and analytic Green's functions.

Every solver accepts a single input function or a batch (one per row) and
returns outputs with the same leading shape. Space-time fields are flattened
row-major over (x, t), matching :func:`greenlearn.grid.make_tensor_grid`.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .exceptions import ResonanceError, SingularSystemError
from .grid import Grid, make_tensor_grid, make_uniform_grid, refine_grid
from .stochastic import add_noise, kl_basis, make_rng, sample_brownian_bridge

__all__ = [
    "solve_poisson_1d",
    "solve_helmholtz_1d",
    "solve_schrodinger_2d",
    "schrodinger_grids",
    "boundary_points",
    "solve_heat_1d",
    "solve_fokker_planck_1d",
    "fpe_potential",
    "fpe_stationary",
    "analytic_green",
    "PdeProblem",
    "Dataset",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]


def _batch(f):
    f = np.asarray(f, dtype=np.float64)
    return (f[None, :], True) if f.ndim == 1 else (f, False)


def _spacing(x):
    h = np.diff(x)
    if not np.allclose(h, h[0], rtol=1e-10, atol=0):
        raise ValueError("solvers need a uniform grid")
    return h[0]


def _axis(grid_or_x):
    if hasattr(grid_or_x, "points"):
        if grid_or_x.dims != 1:
            raise ValueError("expected a 1D grid")
        return grid_or_x.points[:, 0]
    return np.asarray(grid_or_x, dtype=np.float64)


def _dirichlet_1d(f, x, diag_shift, u0, u1):
    """Solve ``(-u'' + diag_shift u) = f`` on interior nodes with end values u0, u1."""
    f, single = _batch(f)
    m = x.size
    if m < 3:
        raise ValueError("grid too coarse: need at least 3 points")
    if f.shape[1] != m:
        raise ValueError("input does not match the grid")
    h = _spacing(x)
    n_in = m - 2
    ab = np.empty((3, n_in))
    ab[0] = -1.0 / h**2
    ab[1] = 2.0 / h**2 + diag_shift
    ab[2] = -1.0 / h**2
    rhs = f[:, 1:-1].T.copy()
    rhs[0] += u0 / h**2
    rhs[-1] += u1 / h**2
    try:
        inner = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    u = np.empty_like(f)
    u[:, 0] = u0
    u[:, -1] = u1
    u[:, 1:-1] = inner.T
    return u[0] if single else u


def solve_poisson_1d(f, grid, u0=0.0, u1=0.0):
    """Central differences for ``u'' = f`` with ``u(a) = u0, u(b) = u1``."""
    x = _axis(grid)
    return _dirichlet_1d(-np.asarray(f, dtype=np.float64), x, 0.0, u0, u1)


def solve_helmholtz_1d(f, grid, omega, u0=0.0, u1=0.0, tol=1e-8):
    """Central differences for ``-u'' - omega^2 u = f`` with Dirichlet ends."""
    x = _axis(grid)
    length = x[-1] - x[0]
    w2 = float(omega) ** 2
    k = max(1, int(round(np.sqrt(w2) * length / np.pi)))
    for kk in (k - 1, k, k + 1):
        if kk >= 1:
            lam = (np.pi * kk / length) ** 2
            if abs(w2 - lam) <= tol * lam:
                raise ResonanceError(
                    f"omega^2 = {w2:g} coincides with the Dirichlet eigenvalue (pi {kk} / L)^2"
                )
    return _dirichlet_1d(f, x, -w2, u0, u1)


# ---------------------------------------------------------------------------
# Schrodinger equation on the unit square


def schrodinger_grids(M):
    """Boundary parameter grid on [0, 4) and interior M x M grid of the unit square.

    The boundary grid holds the 4 (M + 1) lattice nodes on the square's edges,
    counterclockwise from the origin by arc length.
    """
    bgrid = make_uniform_grid((0.0, 4.0), 4 * (M + 1), "periodic")
    g = make_uniform_grid((0.0, 1.0), M, "interior")
    return bgrid, make_tensor_grid([g, g])


def boundary_points(s):
    """Map arc-length parameters in [0, 4) to points on the unit square's boundary."""
    s = np.asarray(s, dtype=np.float64) % 4.0
    x = np.select([s < 1, s < 2, s < 3], [s, np.ones_like(s), 3.0 - s], 0.0)
    y = np.select([s < 1, s < 2, s < 3], [np.zeros_like(s), s - 1.0, np.ones_like(s)], 4.0 - s)
    return np.stack([x, y], axis=-1)


def solve_schrodinger_2d(f_boundary, V, M):
    """5-point scheme for ``Laplace u - V u = 0`` with ``u = f`` on the boundary.

    ``f_boundary`` holds values at the ``4 (M + 1)`` boundary nodes of
    :func:`schrodinger_grids`; ``V`` the potential at the ``M x M`` interior
    nodes (row-major, x first). Returns interior values, shape ``(..., M * M)``.
    """
    f, single = _batch(f_boundary)
    N = M + 1
    if f.shape[1] != 4 * N:
        raise ValueError(f"boundary data needs {4 * N} values")
    V = np.broadcast_to(np.asarray(V, dtype=np.float64), (M * M,))
    if np.any(V < 0):
        raise ValueError("potential must be nonnegative")
    h = 1.0 / N
    T = sp.diags([-np.ones(M - 1), 2 * np.ones(M), -np.ones(M - 1)], [-1, 0, 1])
    I = sp.identity(M)
    A = (sp.kron(T, I) + sp.kron(I, T)) / h**2 + sp.diags(V)
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    i = np.arange(1, M + 1)
    rhs = np.zeros((M, M, f.shape[0]))
    rhs[:, 0] += f[:, i].T  # y = 0 edge, node (x_i, 0)
    rhs[-1, :] += f[:, N + i].T  # x = 1 edge, node (1, y_j)
    rhs[:, -1] += f[:, 3 * N - i].T  # y = 1 edge, node (x_i, 1)
    rhs[0, :] += f[:, 4 * N - i].T  # x = 0 edge, node (0, y_j)
    u = lu.solve(rhs.reshape(M * M, -1) / h**2).T
    return u[0] if single else u


# ---------------------------------------------------------------------------
# Time-dependent problems


def solve_heat_1d(f, x, t, k):
    """Implicit Euler for ``u_t - k u_xx = f`` with zero initial and boundary data.

    ``f`` is sampled on the closed space-time grid ``x`` by ``t``; returns ``u``
    on the same nodes.
    """
    if k <= 0:
        raise ValueError("diffusivity must be positive")
    x, t = np.asarray(x, float), np.asarray(t, float)
    f, single = _batch(f)
    mx, mt = x.size, t.size
    F = f.reshape(-1, mx, mt)
    h = _spacing(x)
    U = np.zeros_like(F)
    ab = np.empty((3, mx - 2))
    for n in range(1, mt):
        dt = t[n] - t[n - 1]
        ab[0] = -k * dt / h**2
        ab[1] = 1.0 + 2.0 * k * dt / h**2
        ab[2] = -k * dt / h**2
        rhs = U[:, 1:-1, n - 1] + dt * F[:, 1:-1, n]
        U[:, 1:-1, n] = solve_banded((1, 1), ab, rhs.T).T
    U = U.reshape(f.shape)
    return U[0] if single else U


def fpe_potential(x):
    """Double-well potential ``x^4 / 4 - 3 x^2 / 2`` and its derivative."""
    x = np.asarray(x, dtype=np.float64)
    return x**4 / 4 - 1.5 * x**2, x**3 - 3 * x


def _fv_volumes(x):
    h = _spacing(x)
    vol = np.full(x.size, h)
    vol[0] = vol[-1] = h / 2
    return vol


def fpe_stationary(x, alpha, potential=fpe_potential):
    """Normalized Gibbs density ``exp(-U / alpha) / Z`` on the node grid."""
    U, _ = potential(x)
    p = np.exp(-(U - U.min()) / alpha)
    return p / np.sum(p * _fv_volumes(x))


def solve_fokker_planck_1d(rho0, x, t, alpha, potential=fpe_potential):
    """Conservative finite volumes for ``rho_t = (U' rho + alpha rho_x)_x``.

    Node-centred cells (half cells at the ends), centred face fluxes and zero
    flux through both ends; implicit Euler between consecutive times in ``t``.
    Mass ``sum(vol * rho)`` is conserved up to round-off. Returns ``rho`` on
    the space-time nodes, flattened row-major over (x, t).
    """
    if alpha <= 0:
        raise ValueError("diffusivity alpha must be positive")
    x, t = np.asarray(x, float), np.asarray(t, float)
    r0, single = _batch(rho0)
    mx, mt = x.size, t.size
    h = _spacing(x)
    vol = _fv_volumes(x)
    _, dU = potential(0.5 * (x[1:] + x[:-1]))
    # face flux j_f = a_f rho_i + b_f rho_{i+1}
    a = 0.5 * dU - alpha / h
    b = 0.5 * dU + alpha / h
    # d/dt (vol_i rho_i) = j_{i+1/2} - j_{i-1/2}
    lower = np.zeros(mx)  # coefficient of rho_{i-1} in row i
    upper = np.zeros(mx)  # coefficient of rho_{i+1}
    diag = np.zeros(mx)
    diag[:-1] += a
    upper[:-1] += b
    diag[1:] -= b
    lower[1:] -= a
    out = np.empty((r0.shape[0], mx, mt))
    out[:, :, 0] = r0
    rho = r0.T.copy()
    for n in range(1, mt):
        dt = t[n] - t[n - 1]
        ab = np.zeros((3, mx))
        ab[0, 1:] = -dt * upper[:-1] / vol[:-1]
        ab[1] = 1.0 - dt * diag / vol
        ab[2, :-1] = -dt * lower[1:] / vol[1:]
        rho = solve_banded((1, 1), ab, rho)
        out[:, :, n] = rho.T
    out = out.reshape(r0.shape[0], mx * mt)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Analytic Green's functions


def analytic_green(kind, *coords, **params):
    """Closed-form Green's functions used as oracles.

    * ``"poisson1d"`` -- ``G(x, y)`` for ``u'' = f`` on [0, 1], zero Dirichlet data.
    * ``"helmholtz1d"`` -- ``G(x, y)`` for ``-u'' - omega^2 u = f`` on [0, 1],
      zero Dirichlet data, parameter ``omega`` (away from resonance).
    * ``"heat_halfline"`` -- ``G(x, t, y, s)`` for ``u_t - k u_xx = f`` on the
      half line with ``u(0, t) = 0`` (method of images), parameter ``k``.
    * ``"damped_oscillator"`` -- ``G(t, s)`` for ``u'' + c u' + omega^2 u = f``,
      parameters ``c`` and ``omega``.
    """
    if kind == "poisson1d":
        x, y = np.broadcast_arrays(*(np.asarray(c, float) for c in coords))
        return -np.minimum(x, y) * (1.0 - np.maximum(x, y))
    if kind == "helmholtz1d":
        w = float(params.get("omega", 20.0))
        if abs(np.sin(w)) < 1e-12:
            raise ResonanceError("omega is a Dirichlet eigenfrequency of [0, 1]")
        x, y = np.broadcast_arrays(*(np.asarray(c, float) for c in coords))
        lo, hi = np.minimum(x, y), np.maximum(x, y)
        return np.sin(w * lo) * np.sin(w * (1.0 - hi)) / (w * np.sin(w))
    if kind == "heat_halfline":
        k = float(params.get("k", 1.0))
        x, t, y, s = np.broadcast_arrays(*(np.asarray(c, float) for c in coords))
        lag = s - t
        pos = lag > 0
        L = np.where(pos, lag, 1.0)
        val = (np.exp(-((y - x) ** 2) / (4 * k * L)) - np.exp(-((y + x) ** 2) / (4 * k * L)))
        val = val / np.sqrt(4 * np.pi * k * L)
        return np.where(pos, val, 0.0)
    if kind == "damped_oscillator":
        c = float(params["c"])
        omega = float(params["omega"])
        disc = c * c - 4 * omega * omega
        if abs(disc) <= 1e-12 * max(1.0, c * c):
            raise ValueError("repeated characteristic roots (critical damping) are not supported")
        sq = np.sqrt(complex(disc))
        r1, r2 = (-c + sq) / 2, (-c - sq) / 2
        t, s = np.broadcast_arrays(*(np.asarray(v, float) for v in coords))
        lag = s - t
        val = (np.exp(r1 * lag) - np.exp(r2 * lag)) / (r1 - r2)
        return np.where(lag >= 0, val.real, 0.0)
    raise ValueError(f"unknown Green's function {kind!r}")


# ---------------------------------------------------------------------------
# Datasets


@dataclass
class PdeProblem:
    """A PDE with its model-level input and output grids.

    ``kind`` is one of poisson1d, helmholtz1d, schrodinger2d, heat1d,
    fokker_planck1d. ``params`` holds the physical parameters (boundary
    values, omega, potential, diffusivity) and ``sampler`` the input law.
    """

    kind: str
    m: int
    params: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    refine: int = 4

    def __post_init__(self):
        kinds = ("poisson1d", "helmholtz1d", "schrodinger2d", "heat1d", "fokker_planck1d")
        if self.kind not in kinds:
            raise ValueError(f"problem kind must be one of {kinds}")
        if self.refine < 1:
            raise ValueError("refine must be >= 1")

    def grids(self, m=None):
        """Input and output grids at resolution ``m`` (default: the training resolution)."""
        m = self.m if m is None else int(m)
        p = self.params
        if self.kind in ("poisson1d", "helmholtz1d"):
            g = make_uniform_grid((0.0, 1.0), m, "closed")
            return g, g
        if self.kind == "schrodinger2d":
            return schrodinger_grids(m)
        if self.kind == "heat1d":
            gx = make_uniform_grid((0.0, 1.0), m, "closed")
            gt = make_uniform_grid((0.0, float(p.get("T", 1.0))), m, "closed")
            st = make_tensor_grid([gx, gt])
            return st, st
        a, b = p.get("domain", (-3.0, 3.0))
        gx = make_uniform_grid((a, b), m, "closed")
        gt = make_uniform_grid((0.0, float(p.get("T", 1.0))), m, "closed")
        return gx, make_tensor_grid([gx, gt])


@dataclass
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    x_grid: object
    y_grid: object
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs must have the same number of samples")
        if self.inputs.shape[1] != self.x_grid.size or self.outputs.shape[1] != self.y_grid.size:
            raise ValueError("sample length does not match its grid")

    @property
    def n(self):
        return self.inputs.shape[0]


def _interp_1d(values, x_from, x_to):
    return np.stack([np.interp(x_to, x_from, v) for v in values])


def _interp_2d(values, axes_from, axes_to):
    shape = tuple(len(a) for a in axes_from)
    mesh = np.stack(np.meshgrid(*axes_to, indexing="ij"), axis=-1).reshape(-1, len(axes_to))
    out = []
    for v in values:
        itp = RegularGridInterpolator(axes_from, v.reshape(shape), method="linear")
        out.append(itp(mesh))
    return np.stack(out)


def _sample_inputs(problem, grid, n, rng):
    s = problem.sampler
    kind = s.get("type", "brownian_bridge")
    if kind == "brownian_bridge":
        x = grid.points[:, 0]
        a, b = grid.bounds[0]
        unit = (x - a) / (b - a)
        ug = Grid(points=unit[:, None], weights=grid.weights, bounds=((0.0, 1.0),))
        return sample_brownian_bridge(
            ug,
            n_modes=s.get("n_modes", 100),
            sigma=s.get("sigma", 1.0),
            scale=s.get("scale", 1.0),
            offset_sigma=s.get("offset_sigma", 0.0),
            rng=rng,
            size=n,
        )
    if kind == "kl_exponential":
        basis = kl_basis(grid, s.get("n_modes", 20), s.get("length", 0.1))
        return s.get("scale", 1.0) * (rng.standard_normal((n, basis.shape[0])) @ basis)
    raise ValueError(f"unknown sampler {kind!r}")


def _schrodinger_potential(problem, M):
    _, g = schrodinger_grids(M)
    p = problem.params
    pot = p.get("potential", {"type": "barrier", "height": 100.0, "center": [0.5, 0.5], "width": 0.1})
    if pot.get("type") == "constant":
        return np.full(g.size, float(pot.get("value", 0.0)))
    c = np.asarray(pot.get("center", [0.5, 0.5]))
    r2 = np.sum((g.points - c) ** 2, axis=1)
    return float(pot.get("height", 100.0)) * np.exp(-r2 / (2 * float(pot.get("width", 0.1)) ** 2))


def solve_problem(problem, F, m=None):
    """Map model-grid inputs ``F`` to model-grid outputs through a refined FD solve."""
    m = problem.m if m is None else m
    p = problem.params
    r = problem.refine
    xg, yg = problem.grids(m)
    if problem.kind in ("poisson1d", "helmholtz1d"):
        fine, (idx,) = refine_grid(xg, r)
        xf = fine.points[:, 0]
        Ff = _interp_1d(F, xg.points[:, 0], xf)
        if problem.kind == "poisson1d":
            Uf = solve_poisson_1d(Ff, xf, p.get("u0", 0.0), p.get("u1", 0.0))
        else:
            Uf = solve_helmholtz_1d(Ff, xf, p.get("omega", 20.0), p.get("u0", 0.0), p.get("u1", 0.0))
        return Uf[:, idx]
    if problem.kind == "schrodinger2d":
        # the boundary lattice of an (M + 1) r - 1 interior grid contains the coarse boundary nodes
        Mf = (m + 1) * r - 1
        bf, _ = schrodinger_grids(Mf)
        sb = xg.points[:, 0]
        Ff = np.stack([np.interp(bf.points[:, 0], np.append(sb, 4.0), np.append(v, v[0])) for v in F])
        Uf = solve_schrodinger_2d(Ff, _schrodinger_potential(problem, Mf), Mf)
        idx = (np.arange(m) + 1) * r - 1
        return Uf.reshape(-1, Mf, Mf)[:, idx][:, :, idx].reshape(F.shape[0], -1)
    if problem.kind == "heat1d":
        fine, idx = refine_grid(xg, r)
        Ff = _interp_2d(F, xg.axes, fine.axes)
        Uf = solve_heat_1d(Ff, fine.axes[0], fine.axes[1], p.get("k", 0.01))
        return Uf.reshape(-1, *fine.shape)[:, idx[0]][:, :, idx[1]].reshape(F.shape[0], -1)
    # fokker_planck1d
    fine, idx = refine_grid(yg, r)
    xf, tf = fine.axes
    R0 = _interp_1d(F, xg.points[:, 0], xf)
    R0 = R0 / (R0 @ _fv_volumes(xf))[:, None]
    Rf = solve_fokker_planck_1d(R0, xf, tf, p.get("alpha", 1.0))
    return Rf.reshape(-1, *fine.shape)[:, idx[0]][:, :, idx[1]].reshape(F.shape[0], -1)


def make_dataset(problem, n, rng=None, m=None, noise=0.0):
    """Sample ``n`` inputs on the model grid and solve for the outputs.

    Inputs are interpolated linearly onto a solver grid ``problem.refine``
    times finer that contains every model node; outputs are restricted back
    by node index. Optional output noise uses :func:`add_noise`.
    """
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(rng)
    m = problem.m if m is None else int(m)
    xg, yg = problem.grids(m)
    F = _sample_inputs(problem, xg, int(n), rng)
    if problem.kind == "fokker_planck1d":
        # positive densities: exponentiate the Gaussian field and normalize (trapezoid mass)
        F = np.exp(F)
        F = F / (F @ _fv_volumes(xg.points[:, 0]))[:, None]
    U = solve_problem(problem, F, m)
    if noise:
        U = add_noise(U, noise, yg.weights, rng)
    meta = {"problem": problem.kind, "m": m, "n": int(n), "noise": float(noise)}
    return Dataset(F, U, xg, yg, meta)


def save_dataset(ds, directory):
    """Write ``inputs.csv``, ``outputs.csv`` (17 digits) and ``meta.json``."""
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "inputs.csv"), ds.inputs, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(directory, "outputs.csv"), ds.outputs, delimiter=",", fmt="%.17g")
    meta = dict(ds.meta, x_grid=ds.x_grid.to_dict(), y_grid=ds.y_grid.to_dict())
    with open(os.path.join(directory, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_dataset(directory):
    paths = [os.path.join(directory, f) for f in ("inputs.csv", "outputs.csv", "meta.json")]
    for path in paths:
        if not os.path.exists(path):
            raise FileNotFoundError(f"dataset file not found: {path}")
    with open(paths[2]) as fh:
        meta = json.load(fh)
    xg = Grid.from_dict(meta.pop("x_grid"))
    yg = Grid.from_dict(meta.pop("y_grid"))
    F = np.loadtxt(paths[0], delimiter=",", ndmin=2).reshape(-1, xg.size)
    U = np.loadtxt(paths[1], delimiter=",", ndmin=2).reshape(-1, yg.size)
    return Dataset(F, U, xg, yg, meta)
