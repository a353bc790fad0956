import numpy as np
import pytest

from greenlearn.estimator import GreensModel, forward
from greenlearn.grid import make_tensor_grid, make_uniform_grid
from greenlearn.kernels import (
    Convolutional,
    Gaussian,
    Sobolev1Dirichlet,
    SobolevTail,
    causal_mask,
    symmetrize,
)
from greenlearn.training import (
    AdamState,
    TrainConfig,
    adam_step,
    gradients,
    mse,
    penalized_risk,
    per_sample_rse,
    rse,
    solve_direct,
    solve_ridge_exact,
    train,
)


def test_mse_and_rse_weighted():
    g = make_uniform_grid((0, 1), 4)
    U = np.ones((2, 4))
    assert mse(U, U, g) == 0.0
    assert rse(np.zeros((2, 4)), U, g) == pytest.approx(1.0)
    assert mse(np.zeros((2, 4)), U, g) == pytest.approx(g.weights.sum())
    np.testing.assert_allclose(per_sample_rse(0.5 * U, U, g), [0.25, 0.25])


def test_metric_errors():
    g = make_uniform_grid((0, 1), 4)
    with pytest.raises(ValueError):
        mse(np.zeros((2, 4)), np.zeros((3, 4)), g)
    with pytest.raises(ValueError):
        rse(np.zeros((0, 4)), np.zeros((0, 4)), g)
    with pytest.raises(ZeroDivisionError):
        rse(np.ones((2, 4)), np.vstack([np.ones(4), np.zeros(4)]), g)


def _check_gradient(model, rng, n=4, probes=5):
    P = {k: rng.normal(size=v.shape) for k, v in model.get_params_dict().items()}
    model.set_params_dict(P)
    F = rng.normal(size=(n, model.x_grid.size))
    U = rng.normal(size=(n, model.y_grid.size))
    risk, g = gradients(model, F, U)
    assert risk == pytest.approx(penalized_risk(model, F, U), rel=1e-12)
    for key in model.PARAMS:
        v = getattr(model, key)
        for _ in range(probes if v.size else 0):
            idx = tuple(rng.integers(0, s) for s in v.shape)
            h = 1e-5 * max(1.0, abs(v[idx]))
            old = v[idx]
            v[idx] = old + h
            rp = penalized_risk(model, F, U)
            v[idx] = old - h
            rm = penalized_risk(model, F, U)
            v[idx] = old
            fd = (rp - rm) / (2 * h)
            assert abs(fd - g[key][idx]) <= 1e-5 * max(abs(fd), abs(g[key][idx])) + 1e-9 * abs(risk), key


@pytest.mark.parametrize("case", ["gauss_tail", "sobolev_null", "symmetric", "causal", "conv"])
def test_gradient_matches_central_differences(case, rng):
    x = make_uniform_grid((0, 1), 9)
    y = make_uniform_grid((0, 1), 7)
    st = make_tensor_grid([make_uniform_grid((0, 1), 5), make_uniform_grid((0, 1), 4)])
    sym = symmetrize(Gaussian((0.05,) * 4), (1,), (3,))
    models = {
        "gauss_tail": lambda: GreensModel(Gaussian((0.01, 0.02)), x, y, kernel_B=SobolevTail(1), null_B=1),
        "sobolev_null": lambda: GreensModel(Sobolev1Dirichlet(30), x, y, kernel_B=Gaussian((0.01,)),
                                            null_G=2, null_B=2),
        "symmetric": lambda: GreensModel(sym, st, st),
        "causal": lambda: GreensModel(causal_mask(sym, 1, 3), st, st, kernel_B=Gaussian((0.1, 0.1)), null_B=1),
        "conv": lambda: GreensModel(Convolutional(Gaussian((0.05,))), x, y),
    }
    m = models[case]()
    m.lam, m.rho = 0.3, 0.2
    _check_gradient(m, rng)


def test_adam_first_step_is_lr_sign():
    p = {"a": np.array([1.0, -2.0, 0.0])}
    cfg = TrainConfig(learning_rate=0.1)
    adam_step(p, {"a": np.array([3.0, -0.5, 0.0])}, AdamState(p), cfg)
    np.testing.assert_allclose(p["a"], [0.9, -1.9, 0.0], atol=1e-8)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)


def test_train_decreases_risk_and_is_seeded(rng):
    g = make_uniform_grid((0, 1), 12)
    G = np.minimum.outer(g.points[:, 0], g.points[:, 0]) * (1 - np.maximum.outer(g.points[:, 0], g.points[:, 0]))
    F = rng.normal(size=(30, 12))
    U = (F * g.weights) @ G
    runs = []
    for _ in range(2):
        m = GreensModel(Gaussian((0.05, 0.05)), g, g, lam=1e-6)
        h = train(m, F, U, TrainConfig(epochs=60, batch_size=8, learning_rate=0.05, seed=3), record_every=20)
        runs.append((h, m.W.copy()))
    h = runs[0][0]
    assert h["epoch"] == [20, 40, 60]
    assert h["risk"][-1] < 0.1 * mse(np.zeros_like(U), U, g)
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


def test_direct_solver_is_stationary(rng):
    g = make_uniform_grid((0, 1), 8)
    m = GreensModel(Sobolev1Dirichlet(30), g, g, kernel_B=Gaussian((0.1,)), null_G=1, null_B=1, lam=1e-2, rho=1e-2)
    F = rng.normal(size=(12, 8))
    U = rng.normal(size=(12, 8))
    solve_direct(m, F, U)
    _, grads = gradients(m, F, U)
    scale = penalized_risk(m, F, U)
    for k, v in grads.items():
        assert np.max(np.abs(v), initial=0.0) < 1e-7 * max(scale, 1.0), k


def test_ridge_closed_form_agrees_with_direct(rng):
    g = make_uniform_grid((0, 1), 10)
    F = rng.normal(size=(6, 10))
    U = rng.normal(size=(6, 10))
    k = Gaussian((0.1, 0.1))
    sol = solve_ridge_exact(k, None, F, U, g, g, 1e-2)
    m = GreensModel(k, g, g, lam=1e-2)
    m.set_params_dict({"W": sol.W})
    m2 = GreensModel(k, g, g, lam=1e-2)
    solve_direct(m2, F, U)
    r1, r2 = penalized_risk(m, F, U), penalized_risk(m2, F, U)
    assert r1 == pytest.approx(r2, rel=1e-8)
    np.testing.assert_allclose(forward(m, F), forward(m2, F), atol=1e-6 * np.abs(U).max())
    with pytest.raises(ValueError):
        solve_ridge_exact(k, None, F, U, g, g, 0.0)
