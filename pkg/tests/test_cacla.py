import numpy as np
import pytest

from latent_imagination.approximator import adam_update, mse_and_grad
from latent_imagination.cacla import (
    ActorCritic, actor_update, critic_update, policy_sample, td_error, td_targets,
)

from helpers import central_difference, chain_dp_values, max_relative_error


def make_ac(latent_dim=4, action_dim=2, seed=0, **kw):
    return ActorCritic(latent_dim, action_dim, hidden=8, rng=np.random.default_rng(seed), **kw)


def constant_critic(ac, value, target_value=None):
    """Force critic (and target) to output constants via zero weights."""
    for net, v in ((ac.critic, value), (ac.target_critic, value if target_value is None else target_value)):
        net.params[:] = 0.0
        net.layers[-1].b[...] = v


def batch_of(phi, a, r, phi_next, terminal):
    return {
        "phi": np.asarray(phi, dtype=float), "a": np.asarray(a, dtype=float),
        "r": np.asarray(r, dtype=float), "phi_next": np.asarray(phi_next, dtype=float),
        "terminal": np.asarray(terminal, dtype=bool),
    }


def test_zero_noise_policy_is_actor_mean():
    ac = make_ac(sigma_policy=0.0)
    phi = np.linspace(-1, 1, 4)
    np.testing.assert_array_equal(policy_sample(ac, phi, np.random.default_rng(0)),
                                  ac.actor.forward(phi))


def test_policy_noise_std():
    ac = make_ac(sigma_policy=0.35)
    phi = np.zeros(4)
    rng = np.random.default_rng(1)
    mean = ac.actor.forward(phi)
    samples = np.array([policy_sample(ac, phi, rng, clip=False) for _ in range(100_000)])
    assert np.abs(samples.std(axis=0) - 0.35).max() < 0.02
    np.testing.assert_allclose(samples.mean(axis=0), mean, atol=0.01)


def test_policy_samples_stay_in_box():
    ac = make_ac(sigma_policy=2.0)
    rng = np.random.default_rng(2)
    for phi in rng.normal(size=(500, 4)):
        a = policy_sample(ac, phi, rng)
        assert np.all(np.abs(a) <= 1.0)


def test_actor_output_dim_and_tanh():
    ac = make_ac(action_dim=3)
    assert ac.actor.n_out == 3 and ac.actor.activations[-1] == "tanh"
    assert ac.critic.n_out == 1 and ac.critic.activations[-1] == "linear"
    assert ac.target_critic.params.shape == ac.critic.params.shape


def test_td_error_gamma_zero():
    ac = make_ac(gamma=0.0)
    constant_critic(ac, 0.0, target_value=123.0)
    res = td_error(ac, np.zeros(4), np.zeros(2), 1.0, np.zeros(4))
    assert (res.delta, res.target) == (1.0, 1.0)


def test_td_error_hand_substitution():
    ac = make_ac(gamma=0.99)
    constant_critic(ac, 2.0, target_value=0.0)
    res = td_error(ac, np.zeros(4), np.zeros(2), 10.0, np.zeros(4))
    assert res.delta == pytest.approx(8.0)
    assert res.target == pytest.approx(10.0)


def test_terminal_target_ignores_bootstrap():
    ac = make_ac(gamma=0.9)
    constant_critic(ac, 0.0, target_value=50.0)
    assert td_error(ac, np.zeros(4), np.zeros(2), 3.0, np.ones(4), terminal=True).target == 3.0
    constant_critic(ac, 0.0, target_value=-7.0)
    assert td_error(ac, np.zeros(4), np.zeros(2), 3.0, np.ones(4), terminal=True).target == 3.0


def test_critic_update_at_fixed_point_is_noop():
    ac = make_ac(gamma=0.0)
    constant_critic(ac, 1.5)
    b = batch_of(np.ones((3, 4)), np.zeros((3, 2)), [1.5] * 3, np.zeros((3, 4)), [False] * 3)
    before = ac.critic.params.tobytes()
    loss, abs_delta = critic_update(ac, b)
    assert loss == 0.0 and np.all(abs_delta == 0)
    assert ac.critic.params.tobytes() == before


def test_critic_update_empty_batch():
    ac = make_ac()
    b = batch_of(np.zeros((0, 4)), np.zeros((0, 2)), [], np.zeros((0, 4)), [])
    before = ac.critic.params.tobytes()
    assert critic_update(ac, b)[0] == 0.0
    assert ac.critic.params.tobytes() == before


def test_critic_gradient_single_sample_matches_fd():
    ac = make_ac(seed=3)
    rng = np.random.default_rng(3)
    phi, phi_next = rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    target = td_targets(ac, np.array([0.7]), phi_next, np.array([False]))
    _, grads = mse_and_grad(ac.critic, phi, target[:, None])
    fd = central_difference(lambda: float((target[0] - ac.critic.forward(phi)[0, 0]) ** 2),
                            ac.critic.params)
    assert max_relative_error(grads, fd) < 1e-4


def test_unit_importance_weights_equal_unweighted():
    rng = np.random.default_rng(4)
    b = batch_of(rng.normal(size=(6, 4)), rng.normal(size=(6, 2)), rng.normal(size=6),
                 rng.normal(size=(6, 4)), [False] * 6)
    a1, a2 = make_ac(seed=5), make_ac(seed=5)
    l1, d1 = critic_update(a1, b)
    l2, d2 = critic_update(a2, b, weights=np.ones(6))
    assert l1 == l2
    assert a1.critic.params.tobytes() == a2.critic.params.tobytes()


def test_actor_untouched_when_all_td_errors_non_positive():
    ac = make_ac(gamma=0.0)
    constant_critic(ac, 5.0)
    rng = np.random.default_rng(6)
    b = batch_of(rng.normal(size=(8, 4)), rng.uniform(-1, 1, size=(8, 2)),
                 rng.uniform(-3, 5, size=8), rng.normal(size=(8, 4)), [False] * 8)
    before = ac.actor.params.tobytes()
    assert actor_update(ac, b) == (0, 0.0)
    assert ac.actor.params.tobytes() == before


def test_actor_fixed_point_no_update():
    ac = make_ac(gamma=0.0)
    constant_critic(ac, 0.0)
    phi = np.ones((1, 4))
    b = batch_of(phi, ac.actor.forward(phi), [1.0], np.zeros((1, 4)), [False])
    before = ac.actor.params.tobytes()
    n, loss = actor_update(ac, b)
    assert n == 1 and loss == 0.0
    assert ac.actor.params.tobytes() == before


def test_actor_scalar_regression_loss_and_gradient():
    ac = make_ac(latent_dim=3, action_dim=1, gamma=0.0)
    constant_critic(ac, 0.0)
    ac.actor.params[:] = 0.0  # Ac(phi) = tanh(0) = 0
    phi = np.array([[0.2, -0.1, 0.4]])
    a = np.array([[1.0]])
    loss, grads = mse_and_grad(ac.actor, phi, a)
    assert loss == pytest.approx(1.0)
    ac.actor.params[:] = np.random.default_rng(7).normal(size=ac.actor.param_count) * 0.3
    _, grads = mse_and_grad(ac.actor, phi, a)
    fd = central_difference(lambda: float((a[0, 0] - ac.actor.forward(phi)[0, 0]) ** 2),
                            ac.actor.params)
    assert max_relative_error(grads, fd) < 1e-4
    n, _ = actor_update(ac, batch_of(phi, a, [1.0], np.zeros((1, 3)), [False]))
    assert n == 1


def test_actor_update_uses_only_positive_td_samples():
    ac = make_ac(gamma=0.0, seed=8)
    constant_critic(ac, 0.0)
    rng = np.random.default_rng(8)
    phi = rng.normal(size=(6, 4))
    a = rng.uniform(-1, 1, size=(6, 2))
    r = np.array([1.0, -1.0, 2.0, 0.0, -3.0, 0.5])
    b = batch_of(phi, a, r, np.zeros((6, 4)), [False] * 6)
    ref = make_ac(gamma=0.0, seed=8)
    keep = r > 0
    expected_loss, expected_grads = mse_and_grad(ref.actor, phi[keep], a[keep])
    n, loss = actor_update(ac, b)
    assert n == 3 and loss == pytest.approx(expected_loss)
    # reference per-sample computation of the same step
    per_sample = [mse_and_grad(ref.actor, phi[i], a[i])[1] for i in np.flatnonzero(keep)]
    np.testing.assert_allclose(expected_grads, np.mean(per_sample, axis=0), rtol=1e-12)
    adam_update(ref.actor, expected_grads, ref.actor_adam)
    assert ac.actor.params.tobytes() == ref.actor.params.tobytes()


def test_chain_dp_oracle_hand_values():
    v = chain_dp_values(1.0, 0.9)
    np.testing.assert_allclose(v[:4], [0.9 ** 3, 0.9 ** 2, 0.9, 1.0])
