import numpy as np
import pytest

from csac import critic, diffcore, policy, sac_reference
from csac.agent import make_config
from csac.buffer import Batch
from csac.critic import TwinCritics, regularized_bootstrap


def make_batch(rng, n=8, obs_dim=3, act_dim=1, terminal_mask=None):
    terminals = np.zeros(n, dtype=bool) if terminal_mask is None else terminal_mask
    return Batch(
        states=rng.normal(size=(n, obs_dim)),
        actions=rng.uniform(-1.0, 1.0, size=(n, act_dim)),
        rewards=rng.normal(size=n),
        next_states=rng.normal(size=(n, obs_dim)),
        terminals=terminals,
        truncateds=np.zeros(n, dtype=bool),
    )


def make_setup(seed=0, obs_dim=3, act_dim=1):
    rng = np.random.default_rng(seed)
    pol = policy.make_policy(obs_dim, np.full(act_dim, -1.0), np.full(act_dim, 1.0),
                             (8, 8), rng)
    critics = TwinCritics.make(obs_dim, act_dim, (8, 8), rng)
    return pol, critics


def test_q_min_zero_critics():
    zero = diffcore.Mlp([4, 1], [np.zeros((1, 4))], [np.zeros(1)])
    critics = TwinCritics(zero, zero.copy())
    assert critic.q_min(critics, np.zeros(3), np.zeros(1)) == 0.0


def test_q_min_identical_twins_equals_either():
    rng = np.random.default_rng(1)
    q = diffcore.init_mlp([4, 6, 1], rng)
    critics = TwinCritics(q, q.copy())
    obs, act = rng.normal(size=3), rng.normal(size=1)
    qm = critic.q_min(critics, obs, act)
    q1, _ = critic.q_forward(critics.q1, obs, act)
    assert qm == q1


def test_q_min_matches_double_evaluation():
    _, critics = make_setup(2)
    rng = np.random.default_rng(3)
    obs, act = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))
    qm = critic.q_min(critics, obs, act)
    q1, _ = critic.q_forward(critics.q1, obs, act)
    q2, _ = critic.q_forward(critics.q2, obs, act)
    assert np.array_equal(qm, np.minimum(q1, q2))
    # targets initialized as exact copies of the online nets
    assert np.array_equal(critic.q_min(critics, obs, act, use_targets=True), qm)


def test_bootstrap_arithmetic_examples():
    # direct substitution: r=1, gamma=0.99, minQ=2, logp=-1, logp_prev=-1
    y = 1.0 + 0.99 * regularized_bootstrap(2.0, -1.0, -1.0, 0.2, 0.5)
    assert y == pytest.approx(3.178, abs=1e-12)
    # same with logp_prev=-2: KL term 0.5 * 1
    y = 1.0 + 0.99 * regularized_bootstrap(2.0, -1.0, -2.0, 0.2, 0.5)
    assert y == pytest.approx(2.683, abs=1e-12)


def test_td_target_terminal_is_reward():
    pol, critics = make_setup(4)
    rng = np.random.default_rng(5)
    terminals = np.array([True, False, True, False, False, False, False, False])
    batch = make_batch(rng, terminal_mask=terminals)
    noise = rng.standard_normal((len(batch), 1))
    y = critic.td_target(batch, pol, policy.snapshot(pol), make_config(0.2, 0.5),
                         0.99, critics, noise)
    assert np.array_equal(y[terminals], batch.rewards[terminals])
    assert not np.array_equal(y[~terminals], batch.rewards[~terminals])


def test_td_target_matches_independent_recomputation():
    pol, critics = make_setup(6)
    rng = np.random.default_rng(7)
    batch = make_batch(rng, n=16)
    noise = rng.standard_normal((16, 1))
    prev = policy.snapshot(pol)
    cfg = make_config(0.2, 0.5)
    y = critic.td_target(batch, pol, prev, cfg, 0.99, critics, noise)

    # recompose from the public policy/critic surfaces
    next_action, pre, logp = policy.sample(pol, batch.next_states, noise)
    logp_prev = np.maximum(prev.log_prob(batch.next_states, pre), -100.0)
    qmin = critic.q_min(critics, batch.next_states, next_action, use_targets=True)
    expected = batch.rewards + 0.99 * (qmin - 0.2 * logp - 0.5 * (logp - logp_prev))
    np.testing.assert_allclose(y, expected, rtol=1e-12)


def test_td_target_tau_zero_matches_sac_reference_bitwise():
    pol, critics = make_setup(8)
    rng = np.random.default_rng(9)
    for trial in range(5):
        batch = make_batch(rng, n=32)
        noise = rng.standard_normal((32, 1))
        y_csac = critic.td_target(batch, pol, policy.snapshot(pol),
                                  make_config(0.2, 0.0), 0.99, critics, noise)
        y_sac = sac_reference.sac_td_target(batch, pol, critics, 0.2, 0.99, noise)
        assert np.array_equal(y_csac, y_sac)


def test_td_target_detached_from_critic_updates():
    pol, critics = make_setup(10)
    rng = np.random.default_rng(11)
    batch = make_batch(rng, n=8)
    noise = rng.standard_normal((8, 1))
    prev = policy.snapshot(pol)
    cfg = make_config(0.2, 0.5)
    y1 = critic.td_target(batch, pol, prev, cfg, 0.99, critics, noise)
    # one critic regression step; target networks untouched
    res = critic.critic_loss(critics, batch, y1)
    opt = diffcore.adam_init(critics.q1, 3e-4)
    diffcore.optimizer_step(opt, critics.q1, res.grads1)
    y2 = critic.td_target(batch, pol, prev, cfg, 0.99, critics, noise)
    assert np.array_equal(y1, y2)


def test_td_target_constant_shift_of_targets():
    pol, critics = make_setup(12)
    rng = np.random.default_rng(13)
    terminals = np.zeros(8, dtype=bool)
    terminals[2] = True
    batch = make_batch(rng, terminal_mask=terminals)
    noise = rng.standard_normal((8, 1))
    prev = policy.snapshot(pol)
    cfg = make_config(0.2, 0.5)
    gamma = 0.97
    y = critic.td_target(batch, pol, prev, cfg, gamma, critics, noise)
    c = 1.7
    critics.target_q1.biases[-1] += c
    critics.target_q2.biases[-1] += c
    y_shift = critic.td_target(batch, pol, prev, cfg, gamma, critics, noise)
    np.testing.assert_allclose(y_shift[~terminals], y[~terminals] + gamma * c, rtol=1e-12)
    assert np.array_equal(y_shift[terminals], y[terminals])


def test_td_target_non_finite_reports_offending_transition():
    pol, critics = make_setup(14)
    rng = np.random.default_rng(15)
    batch = make_batch(rng, n=4)
    batch.rewards[2] = np.inf
    noise = rng.standard_normal((4, 1))
    with pytest.raises(diffcore.NumericError, match="index 2"):
        critic.td_target(batch, pol, policy.snapshot(pol), make_config(0.2, 0.5),
                         0.99, critics, noise)


def test_critic_loss_zero_residual():
    pol, critics = make_setup(16)
    rng = np.random.default_rng(17)
    batch = make_batch(rng, n=8)
    q1, _ = critic.q_forward(critics.q1, batch.states, batch.actions)
    res = critic.critic_loss(critics, batch, q1)
    assert res.loss1 == 0.0
    assert all(np.array_equal(g, np.zeros_like(g)) for g in res.grads1.d_weights)


def test_critic_loss_single_transition_arithmetic():
    # batch of one with residual 0.5 -> loss 0.25; use a constant-output critic
    q_net = diffcore.Mlp([4, 1], [np.zeros((1, 4))], [np.array([3.178])])
    critics = TwinCritics(q_net, q_net.copy())
    batch = Batch(states=np.zeros((1, 3)), actions=np.zeros((1, 1)),
                  rewards=np.zeros(1), next_states=np.zeros((1, 3)),
                  terminals=np.zeros(1, bool), truncateds=np.zeros(1, bool))
    res = critic.critic_loss(critics, batch, np.array([2.678]))
    assert res.loss1 == pytest.approx(0.25, abs=1e-12)
    assert res.loss2 == pytest.approx(0.25, abs=1e-12)


def test_critic_losses_are_decoupled():
    # gradients of loss1 touch only q1: q2 parameters see exactly zero
    pol, critics = make_setup(18)
    rng = np.random.default_rng(19)
    batch = make_batch(rng, n=8)
    res = critic.critic_loss(critics, batch, rng.normal(size=8))
    q2_before = [w.copy() for w in critics.q2.weights]
    opt = diffcore.adam_init(critics.q1, 1e-2)
    diffcore.optimizer_step(opt, critics.q1, res.grads1)
    for b, a in zip(q2_before, critics.q2.weights):
        assert np.array_equal(b, a)


def test_critic_loss_gradient_matches_finite_differences():
    pol, critics = make_setup(20)
    rng = np.random.default_rng(21)
    batch = make_batch(rng, n=16)
    targets = rng.normal(size=16)

    def loss_fn(net):
        res = critic.critic_loss(critics, batch, targets)
        return res.loss1, res.grads1

    err = diffcore.gradient_check(critics.q1, loss_fn, 60, np.random.default_rng(22))
    assert err < 1e-4


def test_q_min_rejects_non_finite_output():
    # finite parameters can still overflow the forward pass
    hot = diffcore.Mlp([2, 1], [np.full((1, 2), 1e308)], [np.zeros(1)])
    critics = TwinCritics(hot, hot.copy())
    with pytest.raises(diffcore.NumericError):
        critic.q_min(critics, np.array([10.0]), np.array([10.0]))


def test_twin_targets_only_change_via_polyak():
    _, critics = make_setup(23)
    before = [w.copy() for w in critics.target_q1.weights]
    critics.q1.weights[0] += 1.0
    for b, a in zip(before, critics.target_q1.weights):
        assert np.array_equal(b, a)
    critics.polyak(0.5)
    assert not np.array_equal(before[0], critics.target_q1.weights[0])
