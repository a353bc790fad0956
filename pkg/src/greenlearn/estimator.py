"""Kernel-parametrized Green's function and bias, assembled on grids.

The model is

    G(x, y) = sum_k d_k E_k(x, y) + int K1(x, y, xi, eta) W(xi, eta) dxi deta
    beta(y) = sum_k q_k e_k(y)    + int Q1(y, eta) w(eta) deta

with the integrals taken over the training grids. Assembling on other grids
keeps the training-grid quadrature, so a trained model can be evaluated on
any mesh of the same domain.
"""

import json
import os

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array

from .exceptions import NotFittedError
from .grid import Grid
from .kernels import KernelSpec, kernel_from_dict

__all__ = [
    "GreensModel",
    "polynomial_basis",
    "eval_basis",
    "assemble_greens",
    "assemble_bias",
    "forward",
    "penalty",
    "save_model",
    "load_model",
    "GreensFunctionRegressor",
]


def polynomial_basis(dim, count):
    """Exponent tuples of the first ``count`` monomials in ``dim`` variables.

    Ordered by total degree, then lexicographically; ``count=2`` in 1D gives
    ``{1, y}``.
    """
    out = []
    deg = 0
    while len(out) < count:
        level = []

        def rec(prefix, left):
            if len(prefix) == dim - 1:
                level.append(tuple(prefix) + (left,))
                return
            for e in range(left, -1, -1):
                rec(prefix + [e], left - e)

        rec([], deg)
        out.extend(level)
        deg += 1
    return [tuple(e) for e in out[:count]]


def _normalize_basis(spec, dim):
    if spec is None:
        return []
    if isinstance(spec, (int, np.integer)):
        return polynomial_basis(dim, int(spec))
    out = [tuple(int(v) for v in e) for e in spec]
    for e in out:
        if len(e) != dim:
            raise ValueError(f"monomial {e} does not have {dim} exponents")
    return out


def eval_basis(exponents, points):
    """Monomials ``prod_j p_j^{e_j}`` at ``points``; returns ``(len(exponents), n_points)``."""
    points = np.asarray(points, dtype=np.float64)
    out = np.ones((len(exponents), points.shape[0]))
    for k, e in enumerate(exponents):
        for j, p in enumerate(e):
            if p:
                out[k] *= points[:, j] ** p
    return out


def _pair_points(x_grid, y_grid):
    """Points of ``x_grid x y_grid`` in row-major (x, y) order."""
    nx, ny = x_grid.size, y_grid.size
    return np.concatenate(
        [np.repeat(x_grid.points, ny, axis=0), np.tile(y_grid.points, (nx, 1))], axis=1
    )


def _axes(grid):
    return list(grid.axes) if grid.is_tensor else None


def _kernel_op(kernel, src_grids, tgt_grids):
    """Operator of ``kernel`` from the product of ``src_grids`` to ``tgt_grids``.

    Returns ``apply(V)`` for ``V`` of shape ``(*batch, n_src)`` giving
    ``(*batch, n_tgt)``, flattened row-major over the grid product.
    """
    src_axes = [a for g in src_grids for a in (_axes(g) or [None])]
    tgt_axes = [a for g in tgt_grids for a in (_axes(g) or [None])]
    n_src = int(np.prod([g.size for g in src_grids]))
    n_tgt = int(np.prod([g.size for g in tgt_grids]))
    if any(a is None for a in src_axes + tgt_axes):
        src = src_grids[0].points if len(src_grids) == 1 else _pair_points(*src_grids)
        tgt = tgt_grids[0].points if len(tgt_grids) == 1 else _pair_points(*tgt_grids)
        M = kernel.gram(tgt, src)

        def apply(V):
            return V @ M.T

        return apply
    op = kernel.operator(src_axes, tgt_axes)
    src_shape = tuple(len(a) for a in src_axes)

    def apply(V):
        V = np.asarray(V)
        batch = V.shape[:-1]
        return op(V.reshape(batch + src_shape)).reshape(batch + (n_tgt,))

    apply.n_src = n_src
    return apply


class GreensModel:
    """Trainable state of the affine operator model.

    Parameters
    ----------
    kernel_G : KernelSpec
        Reproducing kernel of the Green's function component, arity
        ``x_grid.dims + y_grid.dims``.
    x_grid, y_grid : Grid
        Training grids of the input and output domains.
    kernel_B : KernelSpec or None
        Kernel of the bias component; ``None`` disables the bias term.
    null_G, null_B : int or list of exponent tuples
        Unpenalized monomials added to G (variables ``(x, y)``) and to the
        bias (variables ``y``). An integer ``r`` selects the first ``r``
        monomials of :func:`polynomial_basis`.
    lam, rho : float
        Penalty weights of the G and bias terms.
    """

    def __init__(self, kernel_G, x_grid, y_grid, kernel_B=None, null_G=None, null_B=None,
                 lam=0.0, rho=0.0, bias=None):
        if lam < 0 or rho < 0:
            raise ValueError("penalty weights must be nonnegative")
        if kernel_G.arity != x_grid.dims + y_grid.dims:
            raise ValueError(
                f"kernel_G has arity {kernel_G.arity}, grids need {x_grid.dims + y_grid.dims}"
            )
        self.bias = (kernel_B is not None or bool(null_B)) if bias is None else bool(bias)
        if kernel_B is not None and kernel_B.arity != y_grid.dims:
            raise ValueError("kernel_B arity must equal the output dimension")
        self.kernel_G = kernel_G
        self.kernel_B = kernel_B
        self.x_grid = x_grid
        self.y_grid = y_grid
        self.null_G = _normalize_basis(null_G, x_grid.dims + y_grid.dims)
        self.null_B = _normalize_basis(null_B, y_grid.dims) if self.bias else []
        self.lam = float(lam)
        self.rho = float(rho)
        self.W = np.zeros((x_grid.size, y_grid.size))
        self.w = np.zeros(y_grid.size)
        self.d = np.zeros(len(self.null_G))
        self.q = np.zeros(len(self.null_B))
        self._cache = {}

    # parameter plumbing -------------------------------------------------

    PARAMS = ("W", "w", "d", "q")

    def get_params_dict(self):
        return {k: getattr(self, k) for k in self.PARAMS}

    def set_params_dict(self, params):
        for k, v in params.items():
            cur = getattr(self, k)
            v = np.asarray(v, dtype=np.float64)
            if v.shape != cur.shape:
                raise ValueError(f"parameter {k} must have shape {cur.shape}")
            setattr(self, k, v.copy())

    @property
    def weight_outer(self):
        """Training quadrature weights ``dx_s dy_t`` as an ``(m_x, m_y)`` array."""
        return np.multiply.outer(self.x_grid.weights, self.y_grid.weights)

    def greens_operator(self, x_target=None, y_target=None):
        """Cached kernel operator from training grids to the target grids."""
        x_target = x_target or self.x_grid
        y_target = y_target or self.y_grid
        key = ("G", id(x_target), id(y_target))
        hit = self._cache.get(key)
        if hit is None or hit[0] is not x_target or hit[1] is not y_target:
            op = _kernel_op(self.kernel_G, [self.x_grid, self.y_grid], [x_target, y_target])
            hit = (x_target, y_target, op)
            self._cache[key] = hit
        return hit[2]

    def bias_operator(self, y_target=None):
        y_target = y_target or self.y_grid
        key = ("B", id(y_target))
        hit = self._cache.get(key)
        if hit is None or hit[0] is not y_target:
            hit = (y_target, _kernel_op(self.kernel_B, [self.y_grid], [y_target]))
            self._cache[key] = hit
        return hit[1]

    def null_G_values(self, x_target=None, y_target=None):
        x_target = x_target or self.x_grid
        y_target = y_target or self.y_grid
        vals = eval_basis(self.null_G, _pair_points(x_target, y_target))
        return vals.reshape(len(self.null_G), x_target.size, y_target.size)

    def null_B_values(self, y_target=None):
        y_target = y_target or self.y_grid
        return eval_basis(self.null_B, y_target.points)

    def copy(self):
        new = GreensModel.__new__(GreensModel)
        new.__dict__.update(self.__dict__)
        for k in self.PARAMS:
            setattr(new, k, getattr(self, k).copy())
        new._cache = self._cache
        return new


def _check_domain(model_grid, target):
    if target.dims != model_grid.dims:
        raise ValueError("target grid has the wrong dimension")
    for (a, b), (c, e) in zip(model_grid.bounds, target.bounds):
        if not (np.isclose(a, c) and np.isclose(b, e)):
            raise ValueError(
                f"target grid domain {target.bounds} differs from the training domain {model_grid.bounds}"
            )


def assemble_greens(model, x_target=None, y_target=None):
    """Green's function matrix ``(m_x_target, m_y_target)`` on the target grids."""
    if x_target is not None:
        _check_domain(model.x_grid, x_target)
    if y_target is not None:
        _check_domain(model.y_grid, y_target)
    op = model.greens_operator(x_target, y_target)
    xt = x_target or model.x_grid
    yt = y_target or model.y_grid
    G = op((model.W * model.weight_outer).ravel()).reshape(xt.size, yt.size)
    if model.null_G:
        G = G + np.tensordot(model.d, model.null_G_values(x_target, y_target), axes=1)
    return G


def assemble_bias(model, y_target=None):
    """Bias vector on the target output grid."""
    if not model.bias:
        raise RuntimeError("the bias term is disabled for this model")
    if y_target is not None:
        _check_domain(model.y_grid, y_target)
    yt = y_target or model.y_grid
    beta = np.zeros(yt.size)
    if model.kernel_B is not None:
        beta = beta + model.bias_operator(y_target)(model.w * model.y_grid.weights)
    if model.null_B:
        beta = beta + model.q @ model.null_B_values(y_target)
    return beta


def forward(model, F, x_target=None, y_target=None, G=None, beta=None):
    """Predicted outputs ``beta + sum_s G[s, :] F[s] dx_s`` for inputs ``F``.

    ``F`` has shape ``(n, m_x)`` or ``(m_x,)`` on ``x_target`` (training grid
    by default); the integral uses the target grid's quadrature weights.
    """
    xt = x_target or model.x_grid
    F = np.asarray(F, dtype=np.float64)
    single = F.ndim == 1
    F2 = F[None, :] if single else F
    if F2.shape[1] != xt.size:
        raise ValueError(f"inputs have {F2.shape[1]} values, grid has {xt.size} points")
    if G is None:
        G = assemble_greens(model, x_target, y_target)
    out = (F2 * xt.weights) @ G
    if model.bias:
        out = out + (assemble_bias(model, y_target) if beta is None else beta)
    return out[0] if single else out


def penalty(model):
    """``lam <W~, K1 W~> + rho <w~, Q1 w~>`` with ``W~ = W dx dy`` and ``w~ = w dy``."""
    Wt = (model.W * model.weight_outer).ravel()
    val = 0.0
    if model.lam:
        val += model.lam * float(Wt @ model.greens_operator()(Wt))
    if model.bias and model.kernel_B is not None and model.rho:
        wt = model.w * model.y_grid.weights
        val += model.rho * float(wt @ model.bias_operator()(wt))
    return val


# ---------------------------------------------------------------------------
# Persistence


def save_model(model, directory):
    """Write JSON metadata and 17-digit CSV payloads for W and w."""
    os.makedirs(directory, exist_ok=True)
    meta = {
        "kernel_G": model.kernel_G.to_dict(),
        "kernel_B": model.kernel_B.to_dict() if model.kernel_B is not None else None,
        "null_G": [list(e) for e in model.null_G],
        "null_B": [list(e) for e in model.null_B],
        "bias": model.bias,
        "lam": model.lam,
        "rho": model.rho,
        "d": [float(v) for v in model.d],
        "q": [float(v) for v in model.q],
        "x_grid": model.x_grid.to_dict(),
        "y_grid": model.y_grid.to_dict(),
    }
    with open(os.path.join(directory, "model.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    np.savetxt(os.path.join(directory, "W.csv"), model.W, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(directory, "w.csv"), model.w[None, :], delimiter=",", fmt="%.17g")


def load_model(directory):
    path = os.path.join(directory, "model.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no model found at {path}")
    with open(path) as fh:
        meta = json.load(fh)
    model = GreensModel(
        kernel_from_dict(meta["kernel_G"]),
        Grid.from_dict(meta["x_grid"]),
        Grid.from_dict(meta["y_grid"]),
        kernel_B=kernel_from_dict(meta["kernel_B"]) if meta["kernel_B"] else None,
        null_G=meta["null_G"],
        null_B=meta["null_B"],
        lam=meta["lam"],
        rho=meta["rho"],
        bias=meta["bias"],
    )
    W = np.loadtxt(os.path.join(directory, "W.csv"), delimiter=",", ndmin=2)
    w = np.loadtxt(os.path.join(directory, "w.csv"), delimiter=",", ndmin=1)
    model.set_params_dict({"W": W.reshape(model.W.shape), "w": w.reshape(model.w.shape),
                           "d": np.asarray(meta["d"]).reshape(model.d.shape),
                           "q": np.asarray(meta["q"]).reshape(model.q.shape)})
    return model


# ---------------------------------------------------------------------------
# scikit-learn interface


class GreensFunctionRegressor(RegressorMixin, BaseEstimator):
    """Learn an affine solution operator ``f -> beta + int G(x, .) f(x) dx``.

    ``X`` holds input functions sampled on ``x_grid`` (one per row) and ``y``
    the matching outputs on ``y_grid``. Training minimizes the mean squared
    L2 error plus ``lam J(G) + rho P(beta)``.

    Parameters
    ----------
    kernel_G, kernel_B : KernelSpec or dict
        Kernels of the Green's function and bias. ``kernel_B=None`` with
        ``null_B=None`` fits a purely linear operator.
    x_grid, y_grid : Grid
    lam, rho : float
    null_G, null_B : int or list of exponent tuples, optional
    solver : {"adam", "direct", "ridge"}
        ``"adam"`` runs minibatch Adam; ``"direct"`` solves the normal
        equations of the discretized risk; ``"ridge"`` uses the closed-form
        representer weights (no bias term).
    epochs, batch_size, learning_rate, betas, eps, amsgrad, seed
        Optimizer settings for ``solver="adam"``.

    Attributes
    ----------
    model_ : GreensModel
    W_, w_, d_, q_ : ndarray
        Trained parameters.
    history_ : dict of lists
        Per-epoch penalized risk, MSE and RSE on the training set.
    """

    def __init__(self, kernel_G=None, x_grid=None, y_grid=None, kernel_B=None, lam=0.0, rho=0.0,
                 null_G=None, null_B=None, solver="adam", epochs=100, batch_size=100,
                 learning_rate=1e-3, betas=(0.9, 0.999), eps=1e-8, amsgrad=True, seed=0,
                 verbose=False):
        self.kernel_G = kernel_G
        self.x_grid = x_grid
        self.y_grid = y_grid
        self.kernel_B = kernel_B
        self.lam = lam
        self.rho = rho
        self.null_G = null_G
        self.null_B = null_B
        self.solver = solver
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.betas = betas
        self.eps = eps
        self.amsgrad = amsgrad
        self.seed = seed
        self.verbose = verbose

    def _build_model(self):
        if self.kernel_G is None or self.x_grid is None or self.y_grid is None:
            raise ValueError("kernel_G, x_grid and y_grid are required")
        kG = self.kernel_G if isinstance(self.kernel_G, KernelSpec) else kernel_from_dict(self.kernel_G)
        kB = self.kernel_B
        if kB is not None and not isinstance(kB, KernelSpec):
            kB = kernel_from_dict(kB)
        return GreensModel(kG, self.x_grid, self.y_grid, kernel_B=kB, null_G=self.null_G,
                           null_B=self.null_B, lam=self.lam, rho=self.rho)

    def _validate(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.x_grid.size:
            raise ValueError(f"X has {X.shape[1]} columns, x_grid has {self.x_grid.size} points")
        if y is None:
            return X
        y = check_array(y, dtype=np.float64)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different numbers of samples")
        if y.shape[1] != self.y_grid.size:
            raise ValueError(f"y has {y.shape[1]} columns, y_grid has {self.y_grid.size} points")
        return X, y

    def fit(self, X, y):
        from . import training

        X, y = self._validate(X, y)
        model = self._build_model()
        if self.solver == "adam":
            cfg = training.TrainConfig(
                epochs=self.epochs,
                batch_size=min(self.batch_size, X.shape[0]),
                learning_rate=self.learning_rate,
                adam_beta1=self.betas[0],
                adam_beta2=self.betas[1],
                adam_eps=self.eps,
                amsgrad=self.amsgrad,
                seed=self.seed,
            )
            history = training.train(model, X, y, cfg, verbose=self.verbose)
        elif self.solver == "direct":
            training.solve_direct(model, X, y)
            history = training.summarize(model, X, y)
        elif self.solver == "ridge":
            if model.bias:
                raise ValueError("the ridge solver does not fit a bias term")
            sol = training.solve_ridge_exact(model.kernel_G, model.null_G, X, y, model.x_grid,
                                             model.y_grid, model.lam)
            model.set_params_dict({"W": sol.W, "d": sol.d})
            history = training.summarize(model, X, y)
        else:
            raise ValueError(f"unknown solver {self.solver!r}")
        self.model_ = model
        self.history_ = history
        self.W_, self.w_, self.d_, self.q_ = model.W, model.w, model.d, model.q
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before using this estimator")

    def predict(self, X, x_grid=None, y_grid=None):
        """Outputs for inputs on ``x_grid`` (training grid by default), on ``y_grid``."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        return forward(self.model_, X, x_grid, y_grid)

    def greens_function(self, x_grid=None, y_grid=None):
        self._check_fitted()
        return assemble_greens(self.model_, x_grid, y_grid)

    def bias_term(self, y_grid=None):
        self._check_fitted()
        return assemble_bias(self.model_, y_grid)

    def score(self, X, y, x_grid=None, y_grid=None):
        """One minus the relative squared error (RSE)."""
        from .training import rse

        yg = y_grid or self.y_grid
        return 1.0 - rse(self.predict(X, x_grid, y_grid), np.asarray(y, dtype=np.float64), yg)
