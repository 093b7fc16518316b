import numpy as np
import pytest

from pareto_beam import channel as chan
from pareto_beam import optimizer as opt
from pareto_beam.manifold import SimplexPoint, StiefelPoint, random_stiefel


def make_params(ch, rb, rng, interior=True):
    """Random feasible search point; interior keeps powers off the boundary."""
    exact = ch.N >= sum(ch.M)
    us, ls = [], []
    for i in range(ch.K):
        us.append(random_stiefel(rng, rb[i].rank_m, ch.M[i]))
        lam = rng.dirichlet(np.ones(ch.M[i])) * ch.P[i]
        if interior:
            lam = 0.7 * lam + 0.3 * ch.P[i] / ch.M[i]
            if exact:
                lam *= ch.P[i] / lam.sum()
        ls.append(SimplexPoint(lam, ch.P[i], exact_budget=exact))
    return opt.BeamParams(U=tuple(us), lam=tuple(ls))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_user_channel():
    return chan.generate_channels(2, 5, (2, 2), (5.0, 5.0), seed=7)


@pytest.fixture
def three_user_channel():
    return chan.generate_channels(3, 8, (2, 2, 2), (10.0, 10.0, 10.0), seed=11)
