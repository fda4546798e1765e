import os

import hypothesis
import numpy as np
import pytest

from liqgame import CostParams, ExpMixture, build_grid, solve, solve_A

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=400, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=8, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

np.seterr(all="raise", under="ignore")


@pytest.fixture(scope="session")
def params():
    return CostParams()


@pytest.fixture(scope="session")
def mixture():
    return ExpMixture()


@pytest.fixture(scope="session")
def bundle(params):
    return solve_A(params, build_grid(params.T))


@pytest.fixture(scope="session")
def solutions(params, mixture, bundle):
    return {m: solve(params, mixture, m, bundle=bundle)
            for m in ("trading", "dropout", "unconstrained")}


@pytest.fixture(scope="session")
def sol(solutions):
    return solutions["trading"]
