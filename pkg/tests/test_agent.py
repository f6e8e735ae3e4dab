import numpy as np
import pytest

from csac import agent as agent_mod
from csac import critic, diffcore, policy, sac_reference
from csac.agent import CsacAgent, actor_loss, make_config, preference
from csac.buffer import Batch, ReplayBuffer, Transition

OBS_DIM, ACT_DIM = 3, 1
LOW, HIGH = [-2.0], [2.0]


def make_agent(sigma=0.2, tau=0.5, seed=0, **kwargs):
    return CsacAgent(OBS_DIM, LOW, HIGH, make_config(sigma, tau), seed=seed, **kwargs)


def fill_buffer(n=600, seed=0, capacity=10_000):
    buf = ReplayBuffer(capacity)
    rng = np.random.default_rng(seed)
    for _ in range(n):
        buf.push(Transition(rng.normal(size=OBS_DIM), rng.uniform(-2, 2, ACT_DIM),
                            float(rng.normal()), rng.normal(size=OBS_DIM),
                            False, False))
    return buf


# --- regularization config ---

def test_make_config_paper_defaults():
    cfg = make_config(0.2, 0.5)
    assert cfg.alpha == pytest.approx(5.0 / 7.0, abs=1e-12)
    assert cfg.beta == pytest.approx(1.0 / 0.7, abs=1e-12)


def test_make_config_tau_zero_is_sac_case():
    cfg = make_config(0.2, 0.0)
    assert cfg.alpha == 0.0
    assert cfg.beta == pytest.approx(5.0, abs=1e-12)


def test_make_config_pure_relative_entropy():
    cfg = make_config(0.0, 1.0)
    assert cfg.alpha == 1.0
    assert cfg.beta == 1.0


def test_make_config_identity_holds():
    for sigma, tau in ((0.2, 0.5), (1.3, 0.0), (0.0, 2.0), (0.007, 31.0)):
        cfg = make_config(sigma, tau)
        assert 0.0 <= cfg.alpha < 1.0 or (sigma == 0.0 and cfg.alpha == 1.0)
        assert cfg.beta > 0
        assert cfg.alpha + sigma * cfg.beta == pytest.approx(1.0, abs=1e-15)


def test_make_config_rejects_degenerate_pairs():
    with pytest.raises(ValueError):
        make_config(0.0, 0.0)
    with pytest.raises(ValueError):
        make_config(-0.1, 0.5)
    with pytest.raises(ValueError):
        make_config(0.1, -0.5)


# --- preference ---

def test_preference_direct_substitution():
    # tau=0.5, log pi_prev=-1, min Q=2 -> 1.5, via stubbed pieces
    ag = make_agent(tau=0.5, seed=1)

    class FixedPrev:
        def log_prob_action(self, obs, action):
            return np.float64(-1.0)

    ag.prev_policy = FixedPrev()
    ag.critics.q1 = diffcore.Mlp([4, 1], [np.zeros((1, 4))], [np.array([2.0])])
    ag.critics.q2 = diffcore.Mlp([4, 1], [np.zeros((1, 4))], [np.array([2.5])])
    assert preference(ag, np.zeros(OBS_DIM), np.zeros(ACT_DIM)) == pytest.approx(1.5, abs=1e-12)


def test_preference_tau_zero_is_min_q():
    ag = make_agent(tau=0.0, seed=2)
    obs, act = np.zeros(OBS_DIM), np.array([0.3])
    expected = critic.q_min(ag.critics, obs, act)
    assert preference(ag, obs, act) == pytest.approx(float(expected), abs=1e-15)


def test_preference_uniform_prev_density():
    # uniform density over [-1, 1] has log density -ln 2
    ag = CsacAgent(OBS_DIM, [-1.0], [1.0], make_config(0.2, 0.5), seed=3)

    class UniformPrev:
        def log_prob_action(self, obs, action):
            return np.float64(-np.log(2.0))

    ag.prev_policy = UniformPrev()
    obs, act = np.zeros(OBS_DIM), np.array([0.1])
    qmin = float(critic.q_min(ag.critics, obs, act))
    assert preference(ag, obs, act) == pytest.approx(qmin - 0.5 * np.log(2.0), abs=1e-12)


# --- actor loss ---

def test_actor_loss_direct_substitution_formula():
    # sigma=0.2, tau=0.5, log pi=-1, log pi_prev=-1, min Q=2 -> -2.2
    val = (0.5 + 0.2) * (-1.0) - 0.5 * (-1.0) - 2.0
    assert val == pytest.approx(-2.2, abs=1e-12)


def test_actor_loss_matches_independent_recomposition():
    ag = make_agent(seed=4)
    ag.prev_policy = policy.snapshot(
        policy.make_policy(OBS_DIM, LOW, HIGH, (8, 8), np.random.default_rng(99)))
    rng = np.random.default_rng(5)
    states = rng.normal(size=(16, OBS_DIM))
    noise = rng.standard_normal((16, ACT_DIM))
    batch = Batch(states=states, actions=np.zeros((16, ACT_DIM)), rewards=np.zeros(16),
                  next_states=states, terminals=np.zeros(16, bool),
                  truncateds=np.zeros(16, bool))
    res = actor_loss(ag, batch, noise)

    action, pre, logp = policy.sample(ag.policy, states, noise)
    logp_prev = np.maximum(ag.prev_policy.log_prob(states, pre), -100.0)
    qmin = critic.q_min(ag.critics, states, action)
    expected = np.mean(0.7 * logp - 0.5 * logp_prev - qmin)
    assert res.loss == pytest.approx(float(expected), rel=1e-12)
    assert res.entropy_est == pytest.approx(float(np.mean(-logp)), rel=1e-12)


def test_actor_loss_tau_zero_matches_sac_value_and_grads():
    ag = make_agent(tau=0.0, seed=6)
    rng = np.random.default_rng(7)
    states = rng.normal(size=(16, OBS_DIM))
    noise = rng.standard_normal((16, ACT_DIM))
    res = agent_mod._actor_loss_parts(ag.policy, ag.prev_policy, ag.critics,
                                      ag.cfg, states, noise)
    sac_loss, sac_grads, _ = sac_reference.sac_actor_loss_and_grads(
        ag.policy, ag.critics, 0.2, states, noise)
    assert res.loss == sac_loss
    for a, b in zip(res.grads.d_weights, sac_grads.d_weights):
        assert np.array_equal(a, b)


def test_actor_loss_gradient_matches_finite_differences():
    ag = make_agent(seed=8)
    ag.prev_policy = policy.snapshot(
        policy.make_policy(OBS_DIM, LOW, HIGH, (8, 8), np.random.default_rng(100)))
    rng = np.random.default_rng(9)
    states = rng.normal(size=(12, OBS_DIM))
    noise = rng.standard_normal((12, ACT_DIM))

    def loss_fn(net):
        res = agent_mod._actor_loss_parts(ag.policy, ag.prev_policy, ag.critics,
                                          ag.cfg, states, noise)
        return res.loss, res.grads

    err = diffcore.gradient_check(ag.policy.net, loss_fn, 80, np.random.default_rng(10))
    assert err < 1e-4


def test_actor_loss_critic_shift_moves_loss_not_gradient():
    ag = make_agent(seed=11)
    rng = np.random.default_rng(12)
    states = rng.normal(size=(8, OBS_DIM))
    noise = rng.standard_normal((8, ACT_DIM))
    base = agent_mod._actor_loss_parts(ag.policy, ag.prev_policy, ag.critics,
                                       ag.cfg, states, noise)
    c = 2.31
    ag.critics.q1.biases[-1] += c
    ag.critics.q2.biases[-1] += c
    shifted = agent_mod._actor_loss_parts(ag.policy, ag.prev_policy, ag.critics,
                                          ag.cfg, states, noise)
    assert shifted.loss == pytest.approx(base.loss - c, rel=1e-12)
    for a, b in zip(base.grads.d_weights, shifted.grads.d_weights):
        assert np.array_equal(a, b)
    for a, b in zip(base.grads.d_biases, shifted.grads.d_biases):
        assert np.array_equal(a, b)


def test_actor_loss_touches_only_policy_parameters():
    ag = make_agent(seed=13)
    buf = fill_buffer(seed=14)
    rng = np.random.default_rng(15)
    critic_params = [w.copy() for w in ag.critics.q1.weights + ag.critics.q2.weights]
    snap_params = [w.copy() for w in ag.prev_policy.net.weights]
    batch = buf.sample(32, rng)
    res = actor_loss(ag, batch, rng.standard_normal((32, ACT_DIM)))
    diffcore.optimizer_step(ag.actor_opt, ag.policy.net, res.grads)
    for before, after in zip(critic_params, ag.critics.q1.weights + ag.critics.q2.weights):
        assert np.array_equal(before, after)
    for before, after in zip(snap_params, ag.prev_policy.net.weights):
        assert np.array_equal(before, after)


# --- update step ---

def test_update_step_refreshes_snapshot_first():
    ag = make_agent(seed=16)
    buf = fill_buffer(seed=17)
    rng = np.random.default_rng(18)
    assert ag.prev_policy.taken_at_update == -1
    for expected_stamp in range(3):
        ag.update_step(buf.sample(32, rng))
        assert ag.prev_policy.taken_at_update == expected_stamp
        assert ag.update_count == expected_stamp + 1
    # snapshot anchors to the policy as it stood at the start of the step,
    # i.e. it reflects every earlier actor update but not this step's
    assert ag.prev_policy.taken_at_update == ag.update_count - 1


def test_update_step_kl_diag_zero_without_intervening_update():
    ag = make_agent(seed=19)
    rng = np.random.default_rng(20)
    states = rng.normal(size=(16, OBS_DIM))
    noise = rng.standard_normal((16, ACT_DIM))
    ag.prev_policy = policy.snapshot(ag.policy)
    res = agent_mod._actor_loss_parts(ag.policy, ag.prev_policy, ag.critics,
                                      ag.cfg, states, noise)
    logp_now = policy.log_prob(ag.policy, states, res.pre_squash)
    kl = np.mean(np.clip(logp_now - res.log_prob_prev, -100, 100))
    assert kl == 0.0


def test_update_step_kl_diag_nonzero_after_update():
    ag = make_agent(seed=21)
    buf = fill_buffer(seed=22)
    rng = np.random.default_rng(23)
    metrics = ag.update_step(buf.sample(64, rng))
    assert metrics["kl_est"] != 0.0
    assert abs(metrics["kl_est"]) <= 100.0


def test_update_step_identical_transitions_with_identical_twins():
    # symmetric twins regress identically when initialized identically
    ag = make_agent(seed=24)
    ag.critics.q2 = ag.critics.q1.copy()
    ag.critics.target_q2 = ag.critics.target_q1.copy()
    one = Transition(np.ones(OBS_DIM), np.array([0.5]), 1.0, np.ones(OBS_DIM), False, False)
    buf = ReplayBuffer(100)
    for _ in range(50):
        buf.push(one)
    metrics = ag.update_step(buf.sample(32, np.random.default_rng(25)))
    assert metrics["critic_loss_1"] == metrics["critic_loss_2"]


def test_update_step_deterministic_run_to_run():
    def run():
        ag = make_agent(seed=26)
        buf = fill_buffer(seed=27)
        rng = np.random.default_rng(28)
        out = []
        for _ in range(5):
            out.append(ag.update_step(buf.sample(32, rng)))
        return ag, out

    ag1, m1 = run()
    ag2, m2 = run()
    assert m1 == m2
    for a, b in zip(ag1.policy.net.weights, ag2.policy.net.weights):
        assert np.array_equal(a, b)


def test_update_step_polyak_moves_targets():
    ag = make_agent(seed=29)
    buf = fill_buffer(seed=30)
    before = [w.copy() for w in ag.critics.target_q1.weights]
    ag.update_step(buf.sample(32, np.random.default_rng(31)))
    assert not all(np.array_equal(b, a) for b, a in
                   zip(before, ag.critics.target_q1.weights))


def test_act_contracts():
    ag = make_agent(seed=32)
    obs = np.array([0.2, -0.1, 0.5])
    a1 = ag.act(obs, explore=False)
    a2 = ag.act(obs, explore=False)
    assert np.array_equal(a1, a2)

    ag_a = make_agent(seed=33)
    ag_b = make_agent(seed=33)
    s1 = ag_a.act(obs, explore=True)
    s2 = ag_b.act(obs, explore=True)
    assert np.array_equal(s1, s2)

    rng = np.random.default_rng(34)
    for _ in range(200):
        a = ag.act(rng.normal(size=OBS_DIM), explore=True)
        assert -2.0 < a[0] < 2.0
    assert ag.act_explore_calls == 200
    assert ag.act_eval_calls == 2


# --- tau = 0 equivalence with the independent SAC reference ---

def test_tau_zero_update_trajectories_bitwise_identical_to_sac():
    csac = CsacAgent(OBS_DIM, LOW, HIGH, make_config(0.2, 0.0), seed=123)
    sac = sac_reference.SacAgent(OBS_DIM, LOW, HIGH, sigma=0.2, seed=123)
    buf_c, buf_s = fill_buffer(seed=9), fill_buffer(seed=9)
    rng_c, rng_s = np.random.default_rng(55), np.random.default_rng(55)
    for step in range(100):
        csac.update_step(buf_c.sample(64, rng_c))
        sac.update_step(buf_s.sample(64, rng_s))
    pairs = [(csac.policy.net, sac.policy.net),
             (csac.critics.q1, sac.critics.q1),
             (csac.critics.q2, sac.critics.q2),
             (csac.critics.target_q1, sac.critics.target_q1),
             (csac.critics.target_q2, sac.critics.target_q2)]
    for net_c, net_s in pairs:
        for a, b in zip(net_c.weights + net_c.biases, net_s.weights + net_s.biases):
            assert np.array_equal(a, b)


def test_update_step_rejects_non_finite_reward():
    ag = make_agent(seed=35)
    buf = ReplayBuffer(100)
    rng = np.random.default_rng(36)
    for i in range(50):
        buf.push(Transition(rng.normal(size=OBS_DIM), np.zeros(ACT_DIM),
                            np.inf if i == 10 else 0.0,
                            rng.normal(size=OBS_DIM), False, False))
    with pytest.raises(diffcore.NumericError):
        for _ in range(20):
            ag.update_step(buf.sample(50, np.random.default_rng(37)))


# --- checkpointing ---

def test_agent_checkpoint_round_trip(tmp_path):
    ag = make_agent(seed=38)
    buf = fill_buffer(seed=39)
    rng = np.random.default_rng(40)
    for _ in range(3):
        ag.update_step(buf.sample(32, rng))
    path = tmp_path / "agent.json"
    diffcore.write_checkpoint(path, {"agent": ag.to_payload()})
    restored = CsacAgent.from_payload(diffcore.read_checkpoint(path)["agent"])
    obs = np.array([0.3, 0.1, -0.7])
    assert np.array_equal(ag.act(obs, explore=False), restored.act(obs, explore=False))
    # identical rng state: stochastic actions also agree
    assert np.array_equal(ag.act(obs, explore=True), restored.act(obs, explore=True))
    assert restored.update_count == ag.update_count
    # continued updates remain identical
    m1 = ag.update_step(buf.sample(32, np.random.default_rng(41)))
    m2 = restored.update_step(buf.sample(32, np.random.default_rng(41)))
    assert m1 == m2
