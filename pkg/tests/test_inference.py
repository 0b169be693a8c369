import numpy as np
import pytest
import scipy.sparse as sp

from helpers import random_gaussian_model, toy_model
from multispat import inference, lgm
from multispat.areal import AdjacencyGraph
from multispat.exceptions import ConvergenceError
from multispat.geometry import Polygon, build_mesh, projector_matrix
from multispat.oracle import DenseModel, exact_gaussian_posterior, gaussian_log_marginal, quadrature_1d
from multispat.spde import PcPriorSpec
from multispat.stack import StackedData, stack_areal, stack_geostat


def conjugate_model(n=40, seed=5, diffuse_precision=0.01):
    rng = np.random.default_rng(seed)
    y = 1.5 + rng.normal(scale=0.5, size=n)
    stack = stack_geostat(y, 0, 1, {"b": 1.0})
    model = lgm.assemble(stack, [lgm.intercept("b")], [lgm.Gaussian()],
                         diffuse_precision=diffuse_precision)
    return model, y


class TestGaussianApprox:
    def test_poisson_single_area(self):
        stack = stack_areal([[4]], [[2.0]], effects={"b": "factor"})
        model = lgm.assemble(stack, [lgm.intercept("b")], ["poisson"])
        ga = inference.gaussian_approx(model, [])
        # y = E exp(eta) at the mode: 4 = 2 exp(eta), up to the diffuse prior
        assert ga.mode[0] == pytest.approx(np.log(2.0), abs=1e-6)

    def test_empty_data(self):
        g = AdjacencyGraph.lattice(3, 1)
        stack = stack_areal(np.ma.masked_all((3, 1)), np.ones(3), effects={"u": [0]})
        model = lgm.assemble(stack, [lgm.besag("u", g, precision=2.0)], ["poisson"])
        ga = inference.gaussian_approx(model, [])
        np.testing.assert_array_equal(ga.mode, 0.0)
        assert abs(ga.precision - model.prior_precision([])).max() == 0

    def test_gaussian_one_step(self):
        model = random_gaussian_model(3)
        ga = inference.gaussian_approx(model, [])
        mean, _ = exact_gaussian_posterior(DenseModel.from_model(model, []))
        np.testing.assert_allclose(ga.mode, mean, rtol=0, atol=1e-10)
        assert ga.iterations <= 2

    def test_non_convergence_carries_iterate(self):
        stack = stack_areal([[400]], [[1e-3]], effects={"b": "factor"})
        model = lgm.assemble(stack, [lgm.intercept("b")], ["poisson"])
        with pytest.raises(ConvergenceError) as err:
            inference.gaussian_approx(model, [], max_iter=2)
        assert err.value.last is not None


class TestLogPosteriorHyper:
    def test_conjugate_curve(self):
        model, _ = conjugate_model()
        thetas = np.linspace(0.0, 3.0, 21)
        lp = np.array([inference.log_posterior_hyper(model, [t]) for t in thetas])
        exact = np.array([gaussian_log_marginal(DenseModel.from_model(model, [t]))
                          + model.log_hyper_prior([t]) for t in thetas])
        np.testing.assert_allclose(lp, exact, rtol=0, atol=1e-8)

    def test_location_shift(self):
        model, y = conjugate_model(diffuse_precision=1e-6)
        shifted = lgm.assemble(stack_geostat(y + 10.0, 0, 1, {"b": 1.0}),
                               [lgm.intercept("b")], [lgm.Gaussian()])
        thetas = np.linspace(0.5, 2.5, 9)
        d = [inference.log_posterior_hyper(shifted, [t]) - inference.log_posterior_hyper(model, [t])
             for t in thetas]
        # the diffuse intercept prior leaves a tiny theta dependence
        assert np.ptp(d) < 1e-3

    def test_extremes(self):
        model, _ = conjugate_model()
        mid = inference.log_posterior_hyper(model, [1.5])
        assert inference.log_posterior_hyper(model, [-10.0]) < mid - 100
        assert inference.log_posterior_hyper(model, [12.0]) < mid - 100


class TestExploreHyper:
    def test_one_hyper_grid(self):
        model, _ = conjugate_model()
        grid = inference.explore_hyper(model, prune=0.0)
        assert grid.points.shape == (5, 1)
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(grid.z_points.ravel(), [-2, -1, 0, 1, 2])

    def test_conjugate_mean_vs_quadrature(self):
        model, _ = conjugate_model()
        grid = inference.explore_hyper(model)
        grid_mean = float(grid.weights @ np.exp(grid.points[:, 0]))
        cache = {}

        def lp(t):
            if t not in cache:
                cache[t] = inference.log_posterior_hyper(model, [t])
            return cache[t]

        p = quadrature_1d(lp, -2.0, 5.0, n=10001)
        q = quadrature_1d(lambda t: lp(t) + t, -2.0, 5.0, n=10001)
        exact_mean = np.exp(q.log_norm - p.log_norm)
        assert grid_mean == pytest.approx(exact_mean, rel=0.02)

    def test_symmetric_weights(self, monkeypatch):
        model, _ = conjugate_model()
        monkeypatch.setattr(inference, "log_posterior_hyper",
                            lambda m, theta, ga=None, x0=None: -(theta[0] - 0.3) ** 2 / 0.5)
        grid = inference.explore_hyper(model, init=[0.3], prune=0.0)
        assert grid.mode[0] == 0.3
        np.testing.assert_allclose(grid.weights, grid.weights[::-1], atol=1e-9)
        np.testing.assert_allclose(grid.scale, [[0.5]], rtol=1e-6)

    def test_bad_init(self):
        model, _ = conjugate_model()
        with pytest.raises(ValueError):
            inference.explore_hyper(model, init=[np.nan])


class TestFit:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_oracle(self, seed):
        model = random_gaussian_model(seed)
        res = inference.fit(model)
        mean, cov = exact_gaussian_posterior(DenseModel.from_model(model, []))
        np.testing.assert_allclose(res.latent_mean, mean, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(res.latent_sd, np.sqrt(np.diag(cov)), rtol=1e-8, atol=1e-12)
        Z = model.Z.toarray()
        np.testing.assert_allclose(res.predictor_mean, Z @ mean, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(res.predictor_sd, np.sqrt(np.einsum("ij,jk,ik->i", Z, cov, Z)),
                                   rtol=1e-7, atol=1e-10)

    def test_conjugate_marginal_likelihood(self):
        model, _ = conjugate_model()
        res = inference.fit(model, z_scores=np.arange(-6, 6.01, 0.25))
        p = quadrature_1d(lambda t: inference.log_posterior_hyper(model, [t]), -3.0, 6.0, n=2001)
        assert res.log_marginal_likelihood == pytest.approx(p.log_norm, abs=1e-2)

    def test_takahashi_matches_solve(self):
        mesh = build_mesh(Polygon.square(), max_edge_inner=0.15)
        rng = np.random.default_rng(4)
        A = projector_matrix(mesh, rng.uniform(size=(30, 2)))
        stack = stack_geostat(rng.normal(size=30), 0, 1, {"b": 1.0, "u": A})
        model = lgm.assemble(stack, [lgm.intercept("b"),
                                     lgm.spde_effect("u", mesh, PcPriorSpec(0.3, 0.5, 1, 0.05))],
                             [lgm.Gaussian(precision=4.0)])
        ga = inference.gaussian_approx(model, model.theta0)
        a = inference.marginal_variances(ga, model.constraints, "solve")
        b = inference.marginal_variances(ga, model.constraints, "takahashi")
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
        with pytest.raises(ValueError):
            inference.marginal_variances(ga, model.constraints, "magic")

    def test_row_permutation(self):
        model = toy_model()
        st = model.stack
        perm = np.random.default_rng(0).permutation(st.n_rows)
        shuffled = StackedData(st.response[perm], st.exposure[perm],
                               {k: B[perm] for k, B in st.blocks.items()}, (("all", 0, st.n_rows),))
        other = lgm.assemble(shuffled, model.effects, model.families)
        a = inference.fit(model)
        b = inference.fit(other)
        np.testing.assert_allclose(a.latent_mean, b.latent_mean, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(a.predictor_mean[perm], b.predictor_mean, rtol=1e-6, atol=1e-8)

    def test_exposure_scaling(self):
        counts = [[30], [12], [51], [7]]
        res = []
        for c in (1.0, 5.0):
            stack = stack_areal(counts, np.full(4, 10.0 * c), effects={"b": "factor"})
            model = lgm.assemble(stack, [lgm.intercept("b")], ["poisson"])
            res.append(inference.fit(model).latent_mean[0])
        assert res[1] - res[0] == pytest.approx(-np.log(5.0), abs=2e-2)

    def test_copy_rows_equal_target(self):
        model = toy_model()
        res = inference.fit(model)
        u = res.latent_mean[model.latent_slice("u")]
        Z = model.Z.toarray()
        sl = model.latent_slice("u")
        np.testing.assert_allclose(Z[4:, sl] @ u, Z[:4, sl] @ u, atol=1e-12)

    def test_predict_rows(self):
        model = toy_model()
        res = inference.fit(model)
        m, s = res.predict_rows("second")
        np.testing.assert_array_equal(m, res.predictor_mean[4:])
        np.testing.assert_array_equal(s, res.predictor_sd[4:])
        with pytest.raises(KeyError):
            res.predict_rows("third")

    def test_threads_do_not_change_results(self):
        model = toy_model()
        a = inference.fit(model, threads=1)
        b = inference.fit(model, threads=4)
        np.testing.assert_array_equal(a.latent_mean, b.latent_mean)
        np.testing.assert_array_equal(a.latent_sd, b.latent_sd)
