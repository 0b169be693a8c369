"""Model builders shared by the test modules."""

import numpy as np

from multispat import lgm
from multispat.areal import AdjacencyGraph
from multispat.stack import stack_areal

# 4-area, 2-disease shared-component toy
TOY_EDGES = [(0, 1), (1, 2), (2, 3), (0, 2)]
TOY_EXPECTED = 1000.0


def random_gaussian_model(seed):
    """All-Gaussian areal model with fixed hyperparameters, missing data and a copy."""
    rng = np.random.default_rng(seed)
    nx, ny = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    g = AdjacencyGraph.lattice(nx, ny)
    n = g.n
    y = rng.normal(size=(n, 2)) + np.array([1.0, -0.5])
    obs = np.ma.array(y, mask=rng.uniform(size=(n, 2)) < 0.2)
    stack = stack_areal(obs, np.ones((n, 2)),
                        effects={"alpha": "factor", "u": [0], "uc": [1], "v": [1], "e": [0, 1]})
    effects = [
        lgm.intercept("alpha", 2),
        lgm.besag("u", g, precision=float(rng.uniform(0.5, 5))),
        lgm.copy("uc", "u"),
        lgm.besag("v", g, precision=float(rng.uniform(0.5, 5))),
        lgm.iid("e", n, precision=float(rng.uniform(1, 20))),
    ]
    fams = [lgm.Gaussian(precision=float(p)) for p in rng.uniform(0.5, 4, size=2)]
    return lgm.assemble(stack, effects, fams)


def toy_counts(seed=2024):
    """Counts of the shared-component toy: eta_1 = 0.1 + u, eta_2 = -0.2 + u + v."""
    rng = np.random.default_rng(seed)
    u = np.array([0.3, -0.2, 0.1, -0.2])
    v = np.array([0.15, 0.05, -0.1, -0.1])
    eta = np.column_stack([0.1 + u, -0.2 + u + v])
    return rng.poisson(TOY_EXPECTED * np.exp(eta)).astype(float)


def toy_model(counts=None):
    counts = toy_counts() if counts is None else counts
    g = AdjacencyGraph.from_edges(4, TOY_EDGES)
    stack = stack_areal(counts, np.full((4, 2), TOY_EXPECTED),
                        effects={"alpha": "factor", "u": [0], "u_copy": [1], "v": [1]},
                        tags=["first", "second"])
    effects = [lgm.intercept("alpha", 2), lgm.besag("u", g), lgm.copy("u_copy", "u"),
               lgm.besag("v", g)]
    return lgm.assemble(stack, effects, ["poisson", "poisson"])
