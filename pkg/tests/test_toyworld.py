"""Exact bias, variance and gradient-bias identities on the enumerable toy world."""
import numpy as np
import pytest

from opfv.policy import SoftmaxPolicy, opfv_pg

from _toyworld import TARGET, bias_formula, exact_moments, make_toyworld, time_factors, variance_formula


@pytest.mark.parametrize("n_contexts", [1, 2])
@pytest.mark.parametrize("seed", range(5))
def test_bias_identity(n_contexts, seed):
    world = make_toyworld(n_contexts, seed)
    mean, _ = exact_moments(world, world.reward_model())
    assert abs((mean - world.true_value()) - bias_formula(world, world.fhat)) < 1e-10


@pytest.mark.parametrize("n_contexts", [1, 2])
def test_oracle_model_is_unbiased(n_contexts):
    world = make_toyworld(n_contexts, 11)
    mean, _ = exact_moments(world, world.oracle_model())
    assert abs(mean - world.true_value()) < 1e-12


@pytest.mark.parametrize("n_contexts", [1, 2])
@pytest.mark.parametrize("seed", range(5))
def test_variance_identity_with_oracle_model(n_contexts, seed):
    world = make_toyworld(n_contexts, seed)
    _, var = exact_moments(world, world.oracle_model())
    total, terms = variance_formula(world, world.q)
    # with the true reward table only the noise and context terms survive
    assert terms[1] == pytest.approx(0.0, abs=1e-14) and terms[2] == pytest.approx(0.0, abs=1e-14)
    if n_contexts > 1:
        assert terms[3] > 0
    assert abs(var - total) < 1e-10


def test_gradient_bias_identity():
    world = make_toyworld(2, 3)
    policy = SoftmaxPolicy(1, 2, 0, np.array([0.7, -0.4, 0.2, 0.1]))
    # the evaluation policy is the parametric one, so the tables must use it too
    world.pie = policy.action_dist(world.contexts)
    data, prob = world.enumerate()
    grads = np.array([
        opfv_pg(data.subset([i]), policy, TARGET, world.phi, world.reward_model(), world.time_distribution)
        for i in range(data.n_rounds)
    ])
    expected_grad = prob @ grads
    # true gradient of V_{t'} = sum_x p(x) sum_a pi(a|x) q(x, t', a)
    scores = policy.score(np.repeat(world.contexts, 2, axis=0), np.tile([0, 1], len(world.p_x)))
    scores = scores.reshape(len(world.p_x), 2, -1)
    true_grad = np.einsum("x,xa,xa,xak->k", world.p_x, world.pie, world.q[:, 4, :], scores)
    tf = time_factors(world)
    bias = np.zeros_like(true_grad)
    for i in range(len(world.p_x)):
        for j in range(4):
            for a in range(2):
                dq = world.q[i, j, a] - world.q[i, 4, a]
                df = world.fhat[i, j, a] - world.fhat[i, 4, a]
                bias += world.p_x[i] * world.p_t[j] * world.pie[i, a] * tf[j] * (dq - df) * scores[i, a]
    np.testing.assert_allclose(expected_grad - true_grad, bias, atol=1e-10, rtol=0)
