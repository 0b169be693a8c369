import csv

import numpy as np
import pytest

from helpers import random_gaussian_model
from multispat import lgm
from multispat.areal import AdjacencyGraph
from multispat.oracle import (
    DenseModel,
    effective_sample_size,
    exact_gaussian_posterior,
    gaussian_log_marginal,
    mh_sample,
    quadrature_1d,
)
from multispat.spde import PcPriorSpec, pc_range_log_density
from multispat.stack import stack_areal, stack_geostat


def scalar_model(values):
    stack = stack_geostat(values, 0, 1, {"x": 1.0})
    return lgm.assemble(stack, [lgm.iid("x", 1, precision=1.0)], [lgm.Gaussian(precision=1.0)])


def test_textbook_conjugacy():
    mean, cov = exact_gaussian_posterior(DenseModel.from_model(scalar_model([2.0]), []))
    assert mean[0] == pytest.approx(1.0, abs=1e-14)
    assert cov[0, 0] == pytest.approx(0.5, abs=1e-14)


def test_no_observations_returns_prior():
    mean, cov = exact_gaussian_posterior(DenseModel.from_model(scalar_model([None, None]), []))
    assert mean[0] == 0.0 and cov[0, 0] == pytest.approx(1.0)


def test_marginal_likelihood_scalar():
    # y ~ N(0, 2) marginally
    lm = gaussian_log_marginal(DenseModel.from_model(scalar_model([2.0]), []))
    assert lm == pytest.approx(-0.5 * np.log(2 * np.pi * 2.0) - 1.0, abs=1e-12)


def test_constraints_are_respected():
    model = random_gaussian_model(1)
    mean, cov = exact_gaussian_posterior(DenseModel.from_model(model, []))
    np.testing.assert_allclose(model.constraints @ mean, 0.0, atol=1e-10)
    np.testing.assert_allclose(model.constraints @ cov @ model.constraints.T, 0.0, atol=1e-8)


def test_dense_prior_matches_sparse_assembly():
    g = AdjacencyGraph.lattice(3, 2)
    stack = stack_areal([[1, 2]] * 6, np.ones((6, 2)), effects={"a": "factor", "u": [0], "v": [1]})
    model = lgm.assemble(stack, [lgm.intercept("a", 2), lgm.besag("u", g), lgm.iid("v", 6)],
                         ["poisson", "poisson"])
    theta = np.array([0.3, -1.2])
    dense = DenseModel.from_model(model, theta).Q
    np.testing.assert_allclose(dense, model.prior_precision(theta).toarray(), rtol=1e-13, atol=1e-18)


def test_dim_guard():
    g = AdjacencyGraph.lattice(15, 15)
    stack = stack_areal(np.ones((225, 1)), np.ones(225), effects={"u": [0]})
    model = lgm.assemble(stack, [lgm.besag("u", g)], ["poisson"])
    with pytest.raises(ValueError):
        mh_sample(model, iterations=10)


class TestQuadrature:
    def test_standard_normal(self):
        r = quadrature_1d(lambda x: -0.5 * x * x, -10, 10, n=2001)
        assert abs(r.mean) < 1e-10
        assert r.var == pytest.approx(1.0, abs=1e-8)
        assert r.log_norm == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-8)

    def test_exponential(self):
        r = quadrature_1d(lambda x: -x, 0, 50, n=2001)
        assert r.mean == pytest.approx(1.0, abs=1e-8)

    def test_pc_range_cdf(self):
        spec = PcPriorSpec(1.0, 0.5, 1.0, 0.5)
        # integrate over log r, where the density is smooth
        f = lambda t: float(pc_range_log_density(np.exp(t), spec)) + t
        below = quadrature_1d(f, -8.0, 0.0, n=20001)
        assert np.exp(below.log_norm) == pytest.approx(0.5, abs=1e-6)


def test_effective_sample_size():
    rng = np.random.default_rng(0)
    white = rng.normal(size=20000)
    assert effective_sample_size(white)[0] == pytest.approx(20000, rel=0.1)
    ar = np.zeros(20000)
    for i in range(1, len(ar)):
        ar[i] = 0.9 * ar[i - 1] + white[i]
    # AR(1) with rho 0.9 has integrated autocorrelation time 19
    assert effective_sample_size(ar)[0] == pytest.approx(20000 / 19, rel=0.25)


class TestMetropolis:
    def test_conjugate_within_three_mcse(self):
        res = mh_sample(scalar_model([2.0]), iterations=40000, seed=3)
        assert abs(res.latent_mean[0] - 1.0) < 3 * res.latent_mcse[0]
        assert np.var(res.latent[:, 0]) == pytest.approx(0.5, rel=0.1)
        assert not res.warning
        assert 0.1 <= res.acceptance_rate <= 0.6

    def test_deterministic(self):
        model = scalar_model([2.0, 1.0])
        a = mh_sample(model, iterations=3000, seed=11)
        b = mh_sample(model, iterations=3000, seed=11)
        np.testing.assert_array_equal(a.latent, b.latent)
        c = mh_sample(model, iterations=3000, seed=12)
        assert not np.array_equal(a.latent, c.latent)

    def test_hyper_chain_and_csv(self, tmp_path):
        g = AdjacencyGraph.lattice(2, 2)
        stack = stack_areal([[3], [5], [2], [8]], np.full(4, 4.0), effects={"a": "factor", "u": [0]})
        model = lgm.assemble(stack, [lgm.intercept("a"), lgm.besag("u", g)], ["poisson"])
        res = mh_sample(model, iterations=4000, seed=0)
        assert res.latent.shape == (3000, 5) and res.theta.shape == (3000, 1)
        np.testing.assert_allclose(res.latent[:, 1:].sum(axis=1), 0.0, atol=1e-10)
        path = tmp_path / "chain.csv"
        res.to_csv(path, theta_names=["u.precision"])
        rows = list(csv.reader(path.open()))
        assert rows[0][-1] == "u.precision" and len(rows) == 3001
        assert float(rows[1][0]) == res.latent[0, 0]
