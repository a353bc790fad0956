"""Losses, gradients and solvers for the penalized least-squares risk.

The risk of a batch of ``b`` pairs is

    R = (1/b) sum_i sum_t (U_i(y_t) - pred_i(y_t))^2 dy_t + penalty(model)

which is a convex quadratic in the parameters ``(W, w, d, q)``.
"""

import time
from dataclasses import asdict, dataclass

import numpy as np

from .estimator import assemble_bias, assemble_greens, forward, penalty
from .exceptions import SingularSystemError
from .stochastic import make_rng

__all__ = [
    "TrainConfig",
    "mse",
    "rse",
    "per_sample_rse",
    "penalized_risk",
    "gradients",
    "AdamState",
    "adam_step",
    "train",
    "summarize",
    "RidgeSolution",
    "solve_ridge_exact",
    "solve_direct",
    "convergence_study",
]


def _weighted_sq(err, grid):
    return (np.asarray(err) ** 2) @ grid.weights


def mse(preds, targets, y_grid):
    """Mean over samples of the squared L2 error on ``y_grid``."""
    preds, targets = np.atleast_2d(preds), np.atleast_2d(targets)
    if preds.shape != targets.shape:
        raise ValueError("predictions and targets differ in shape")
    if preds.shape[0] == 0:
        raise ValueError("empty sample set")
    return float(np.mean(_weighted_sq(targets - preds, y_grid)))


def per_sample_rse(preds, targets, y_grid):
    preds, targets = np.atleast_2d(preds), np.atleast_2d(targets)
    if preds.shape != targets.shape:
        raise ValueError("predictions and targets differ in shape")
    if preds.shape[0] == 0:
        raise ValueError("empty sample set")
    denom = _weighted_sq(targets, y_grid)
    zero = np.flatnonzero(denom == 0)
    if zero.size:
        raise ZeroDivisionError(f"target sample {int(zero[0])} has zero norm")
    return _weighted_sq(targets - preds, y_grid) / denom


def rse(preds, targets, y_grid):
    """Mean over samples of ``|U - pred|^2 / |U|^2`` in the weighted L2 norm."""
    return float(np.mean(per_sample_rse(preds, targets, y_grid)))


def penalized_risk(model, F, U):
    return mse(forward(model, F), U, model.y_grid) + penalty(model)


def gradients(model, F, U):
    """Exact gradient of the batch penalized risk.

    Returns ``(risk, grads)`` with ``grads`` keyed like the model parameters.
    """
    F = np.atleast_2d(F)
    U = np.atleast_2d(U)
    b = F.shape[0]
    wx, wy = model.x_grid.weights, model.y_grid.weights
    outer = model.weight_outer
    Wt = model.W * outer
    opG = model.greens_operator()
    KW = opG(Wt.ravel()).reshape(Wt.shape)
    G = KW + (np.tensordot(model.d, model.null_G_values(), axes=1) if model.null_G else 0.0)
    Fw = F * wx
    pred = Fw @ G
    beta = None
    if model.bias:
        beta = assemble_bias(model)
        pred = pred + beta
    R = U - pred
    data = float(np.mean(R**2 @ wy))
    gp = (-2.0 / b) * R * wy  # d risk / d pred
    dG = Fw.T @ gp
    grads = {}
    # penalty lam <Wt, K Wt> contributes 2 lam K Wt to d/dWt
    src = dG + 2.0 * model.lam * Wt if model.lam else dG
    grads["W"] = outer * opG(src.ravel()).reshape(Wt.shape)
    pen = model.lam * float(np.sum(Wt * KW)) if model.lam else 0.0
    grads["d"] = (
        np.tensordot(model.null_G_values(), dG, axes=([1, 2], [0, 1])) if model.null_G else np.zeros(0)
    )
    dbeta = gp.sum(axis=0)
    if model.bias and model.kernel_B is not None:
        opB = model.bias_operator()
        wt = model.w * wy
        src = dbeta + 2.0 * model.rho * wt if model.rho else dbeta
        grads["w"] = wy * opB(src)
        if model.rho:
            pen += model.rho * float(wt @ opB(wt))
    else:
        grads["w"] = np.zeros_like(model.w)
    grads["q"] = model.null_B_values() @ dbeta if model.null_B else np.zeros(0)
    return data + pen, grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    amsgrad: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self):
        return asdict(self)


class AdamState:
    """First/second moment estimates per parameter block."""

    def __init__(self, params):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.v_max = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params, grads, state, config):
    """One Adam update (amsgrad variant keeps the running max of ``v``).

    Updates ``params`` and ``state`` in place and returns ``params``.
    """
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if config.amsgrad:
            np.maximum(state.v_max[k], v, out=state.v_max[k])
            v_hat = state.v_max[k]
        else:
            v_hat = v
        denom = np.sqrt(v_hat) / np.sqrt(bc2) + config.adam_eps
        params[k] -= (config.learning_rate / bc1) * m / denom
    return params


def summarize(model, F, U):
    pred = forward(model, F)
    return {
        "epoch": [0],
        "risk": [mse(pred, U, model.y_grid) + penalty(model)],
        "mse": [mse(pred, U, model.y_grid)],
        "rse": [rse(pred, U, model.y_grid)],
        "wall_time": [0.0],
    }


def train(model, F, U, config, verbose=False, record_every=1):
    """Minibatch Adam on the penalized risk, shuffling each epoch.

    Parameters start from the model's current values (zeros for a fresh
    model). Returns the history dict with per-epoch training risk, MSE and
    RSE on the full training set.
    """
    F = np.asarray(F, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    n = F.shape[0]
    bs = min(int(config.batch_size), n)
    rng = make_rng(config.seed)
    params = {k: getattr(model, k) for k in model.PARAMS if getattr(model, k).size}
    state = AdamState(params)
    hist = {"epoch": [], "risk": [], "mse": [], "rse": [], "wall_time": []}
    t0 = time.perf_counter()
    for epoch in range(1, int(config.epochs) + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            _, grads = gradients(model, F[idx], U[idx])
            adam_step(params, {k: grads[k] for k in params}, state, config)
        if epoch % record_every == 0 or epoch == config.epochs:
            pred = forward(model, F)
            m = mse(pred, U, model.y_grid)
            hist["epoch"].append(epoch)
            hist["mse"].append(m)
            hist["risk"].append(m + penalty(model))
            hist["rse"].append(rse(pred, U, model.y_grid))
            hist["wall_time"].append(time.perf_counter() - t0)
            if verbose:
                print(f"epoch {epoch:5d}  risk {hist['risk'][-1]:.6e}  rse {hist['rse'][-1]:.3e}")
    return hist


# ---------------------------------------------------------------------------
# Exact solvers


@dataclass
class RidgeSolution:
    """Closed-form representer weights.

    ``c[i]`` is the output-side weight function of sample ``i``, ``d`` the
    null-space coefficients and ``W = sum_i F_i (x) c_i`` the equivalent
    weight field of the grid model.
    """

    c: np.ndarray
    d: np.ndarray
    W: np.ndarray
    residual: float


def solve_ridge_exact(kernel_G, null_G, F, U, x_grid, y_grid, lam):
    """Closed-form minimizer of the discretized ridge risk (no bias term).

    Builds the blocks ``S_ji[t, tau] = sum_{s, sigma} K(x_s, y_t, x_sigma, y_tau)
    F_j(x_s) F_i(x_sigma) dx_s dx_sigma dy_tau`` from a dense Gram matrix,
    solves ``(S + n lam I) c = u - sum_k d_k T^k`` and the ``r x r`` system
    for ``d``; inner products over the output grid carry ``dy``.
    """
    from .estimator import _normalize_basis, _pair_points, eval_basis

    if lam <= 0:
        raise ValueError("lam must be positive")
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    n = F.shape[0]
    mx, my = x_grid.size, y_grid.size
    wx, wy = x_grid.weights, y_grid.weights
    pts = _pair_points(x_grid, y_grid)
    K = kernel_G.gram(pts, pts).reshape(mx, my, mx, my)
    Fw = F * wx
    # S[j, t, i, tau]
    S = np.einsum("js,stuv,iu->jtiv", Fw, K, Fw, optimize=True) * wy[None, None, None, :]
    N = n * my
    M_lam = S.reshape(N, N) + n * lam * np.eye(N)
    basis = _normalize_basis(null_G, x_grid.dims + y_grid.dims)
    r = len(basis)
    rhs = [U.ravel()]
    T = []
    if r:
        E = eval_basis(basis, pts).reshape(r, mx, my)
        T = [(Fw @ E[k]).ravel() for k in range(r)]  # T^k_i(y) = sum_s E_k(x_s, y) F_i(x_s) dx_s
        rhs.extend(T)
    try:
        sol = np.linalg.solve(M_lam, np.stack(rhs, axis=1))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    Minv_u = sol[:, 0]
    wY = np.tile(wy, n)
    d = np.zeros(r)
    c = Minv_u
    if r:
        Minv_T = sol[:, 1:]
        Tm = np.stack(T, axis=1)
        A = Tm.T @ (wY[:, None] * Minv_T)
        b = Tm.T @ (wY * Minv_u)
        if np.linalg.cond(A) > 1e14:
            raise SingularSystemError("null-space Gram matrix A is singular")
        d = np.linalg.solve(A, b)
        c = Minv_u - Minv_T @ d
    C = c.reshape(n, my)
    W = F.T @ C
    target = U.ravel() - (np.stack(T, axis=1) @ d if r else 0.0)
    resid = float(np.linalg.norm(M_lam @ c - target))
    return RidgeSolution(C, d, W, resid)


def _design(model, F):
    """Dense linear map from the flattened parameters to the stacked predictions."""
    wx, wy = model.x_grid.weights, model.y_grid.weights
    n = F.shape[0]
    mx, my = model.x_grid.size, model.y_grid.size
    outer = model.weight_outer.ravel()
    opG = model.greens_operator()
    # pred_i = (F_i wx) @ K(W~) ; column block for W: (F wx) (x) I then K then * outer
    Kmat = opG(np.eye(mx * my)).T  # K[p, q]
    Fw = F * wx
    A_G = np.einsum("is,stq->itq", Fw, Kmat.reshape(mx, my, mx * my)) * outer[None, None, :]
    blocks = [A_G.reshape(n * my, mx * my)]
    if model.null_G:
        E = model.null_G_values()
        blocks.append(np.einsum("is,kst->itk", Fw, E).reshape(n * my, -1))
    if model.bias and model.kernel_B is not None:
        Q = model.bias_operator()(np.eye(my)).T * wy[None, :]
        blocks.append(np.tile(Q, (n, 1)))
    if model.null_B:
        blocks.append(np.tile(model.null_B_values().T, (n, 1)))
    return np.concatenate(blocks, axis=1), Kmat


def solve_direct(model, F, U):
    """Minimize the full-batch penalized risk by its normal equations.

    Dense in the number of grid points, so meant for small grids. Writes the
    solution into ``model`` and returns it.
    """
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    n = F.shape[0]
    mx, my = model.x_grid.size, model.y_grid.size
    wy = model.y_grid.weights
    outer = model.weight_outer.ravel()
    A, Kmat = _design(model, F)
    sw = np.sqrt(np.tile(wy, n) / n)
    As = A * sw[:, None]
    H = As.T @ As
    g = As.T @ (U.ravel() * sw)
    P = np.zeros_like(H)
    nG = mx * my
    P[:nG, :nG] = model.lam * (outer[:, None] * Kmat * outer[None, :])
    off = nG + len(model.null_G)
    if model.bias and model.kernel_B is not None:
        Q = model.bias_operator()(np.eye(my)).T
        P[off : off + my, off : off + my] = model.rho * (wy[:, None] * Q * wy[None, :])
    theta, *_ = np.linalg.lstsq(H + P, g, rcond=1e-13)
    parts = {"W": theta[:nG].reshape(mx, my)}
    pos = nG
    if model.null_G:
        parts["d"] = theta[pos : pos + len(model.null_G)]
        pos += len(model.null_G)
    if model.bias and model.kernel_B is not None:
        parts["w"] = theta[pos : pos + my]
        pos += my
    if model.null_B:
        parts["q"] = theta[pos : pos + len(model.null_B)]
    model.set_params_dict(parts)
    return model


# ---------------------------------------------------------------------------
# Rate study


def convergence_study(n_list=(50, 100, 200, 400), trials=10, m=24, n_test=1000, lam0=1e-3,
                      rate=None, n_ref=50, sigma=1.0, noise=0.05, seed=0, n_terms=100):
    """Excess prediction risk against n on a well-specified problem.

    Inputs are Brownian bridges on [0, 1]; the true Green's function is the
    Poisson one (an element of the Dirichlet Sobolev space on [0, 1]^2) and
    outputs carry additive white noise of std ``noise`` per grid value. Each
    trial fits the penalized estimator with the Dirichlet kernel and
    ``lam(n) = lam0 (n / n_ref)^(-r / (r + 1))`` by the direct solver, then
    measures the excess risk ``|T_hat(F) - T(F)|^2`` on ``n_test`` fresh
    inputs. ``r`` defaults to the fitted decay rate of the joint spectrum.

    Returns a dict with the table rows ``(n, mean, stderr)``, the fitted
    log-log slope and the rate used.
    """
    from .estimator import GreensModel
    from .grid import make_uniform_grid
    from .kernels import BrownianBridgeCov, Sobolev1Dirichlet
    from .pde_data import analytic_green
    from .spectral import fit_decay_rate, mercer_eig, sim_diag_commuting
    from .stochastic import sample_brownian_bridge

    rng = make_rng(seed)
    grid = make_uniform_grid((0.0, 1.0), m, "interior")
    x = grid.points[:, 0]
    G_true = analytic_green("poisson1d", x[:, None], x[None, :])
    kernel = Sobolev1Dirichlet(n_terms, 2)
    if rate is None:
        mu = mercer_eig(BrownianBridgeCov(sigma**2), grid, m).eigenvalues
        rho = 1.0 / (np.pi**2 * (np.arange(1, m + 1)[:, None] ** 2 + np.arange(1, m + 1)[None, :] ** 2))
        gamma = sim_diag_commuting(mu, rho)["gamma"]
        rate = fit_decay_rate(gamma[gamma > 0][: m * m // 2])
    rate = float(rate)
    expo = -rate / (rate + 1.0)

    def sample(k):
        F = sample_brownian_bridge(grid, 100, sigma, rng=rng, size=k)
        clean = (F * grid.weights) @ G_true
        return F, clean

    F_test, U_test = sample(n_test)
    rows = []
    for n in n_list:
        lam = lam0 * (n / n_ref) ** expo
        errs = []
        for _ in range(int(trials)):
            F, clean = sample(n)
            U = clean + noise * rng.standard_normal(clean.shape)
            model = GreensModel(kernel, grid, grid, lam=lam)
            solve_direct(model, F, U)
            pred = forward(model, F_test)
            errs.append(mse(pred, U_test, grid))  # U_test is noiseless: excess risk
        errs = np.asarray(errs)
        se = float(errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else 0.0
        rows.append((int(n), float(errs.mean()), se, float(lam)))
    ns = np.array([r[0] for r in rows], dtype=float)
    means = np.array([r[1] for r in rows])
    slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0]) if len(rows) > 1 else float("nan")
    return {"rows": rows, "slope": slope, "rate": rate, "target_slope": expo}
