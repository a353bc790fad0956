import numpy as np
import pytest

from greenlearn.grid import make_uniform_grid
from greenlearn.kernels import BrownianBridgeCov, Gaussian
from greenlearn.spectral import (
    cantor_enumerate,
    cantor_index,
    cantor_order_products,
    cantor_pair,
    cantor_unpair,
    fit_decay,
    fit_decay_rate,
    mercer_eig,
    quadratic_form_check,
    sim_diag_commuting,
    tensor_eig_enumerate,
)


def test_cantor_pair_small_values():
    assert [cantor_pair(1, 1), cantor_pair(2, 1), cantor_pair(1, 2), cantor_pair(3, 1)] == [1, 2, 3, 4]
    assert cantor_unpair(5) == (2, 2)


def test_cantor_round_trip_and_bijection():
    seen = {cantor_pair(a, b) for a in range(1, 40) for b in range(1, 40) if a + b <= 40}
    assert seen == set(range(1, len(seen) + 1))
    for n in range(1, 500):
        assert cantor_pair(*cantor_unpair(n)) == n
        assert cantor_index(cantor_enumerate(n, 3)) == n


def test_cantor_rejects_nonpositive():
    with pytest.raises(ValueError):
        cantor_pair(0, 1)
    with pytest.raises(ValueError):
        cantor_unpair(0)
    with pytest.raises(ValueError):
        cantor_index(())


def test_brownian_bridge_mercer_spectrum():
    g = make_uniform_grid((0, 1), 300, "interior")
    rep = mercer_eig(BrownianBridgeCov(1.0), g, 10)
    k = np.arange(1, 11)
    np.testing.assert_allclose(rep.eigenvalues, 1.0 / (np.pi * k) ** 2, rtol=1e-2)  # rectangle weights carry an O(1/m) bias
    gram = (rep.eigenvectors * g.weights[:, None]).T @ rep.eigenvectors
    np.testing.assert_allclose(gram, np.eye(10), atol=1e-10)
    assert rep.to_rows()[0][0] == 1


def test_mercer_rejects_indefinite_and_bad_sizes():
    g = make_uniform_grid((0, 1), 4)
    with pytest.raises(np.linalg.LinAlgError):
        mercer_eig(-np.eye(4), g)
    with pytest.raises(ValueError):
        mercer_eig(np.eye(3), g)
    with pytest.raises(ValueError):
        mercer_eig(Gaussian((0.1,)), g, top_k=5)


def test_tensor_enumeration_sorted_products():
    a, b = np.array([1.0, 0.5, 0.1]), np.array([2.0, 0.3])
    vals, idx = tensor_eig_enumerate([a, b], count=4, return_index=True)
    np.testing.assert_allclose(vals, [2.0, 1.0, 0.3, 0.2])
    assert idx[1].tolist() == [2, 1]
    co = cantor_order_products([a, b], 6)
    np.testing.assert_allclose(sorted(co, reverse=True), tensor_eig_enumerate([a, b]))


def test_sim_diag_commuting():
    mu = np.array([1.0, 0.25])
    rho = np.array([[1.0, 0.5], [0.5, 0.2]])
    out = sim_diag_commuting(mu, rho)
    np.testing.assert_allclose(out["gamma"], [1.0, 0.5, 0.125, 0.05])
    np.testing.assert_allclose(out["omega"], [1.0, 2.0])
    with pytest.raises(ValueError):
        sim_diag_commuting(np.array([1.0, 0.0]), rho)


def test_fit_decay_recovers_power_law():
    k = np.arange(1, 101)
    r, c, res = fit_decay(3.0 * k**-2.5)
    assert r == pytest.approx(2.5)
    assert c == pytest.approx(np.log(3.0))
    assert res < 1e-12
    assert fit_decay_rate(k**-1.0, trim=False) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        fit_decay([1.0, 0.5, 0.0, 0.1, 0.1])
    with pytest.raises(ValueError):
        fit_decay([1.0, 0.5])


def test_quadratic_forms_match_diagonal_forms():
    out = quadratic_form_check(n_modes=12, m=300)
    assert out["cov_rel_err"] < 1e-2
    assert out["energy_rel_err"] < 1e-2
