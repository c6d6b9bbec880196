import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtbeam import agent as ag, nncore
from dtbeam.agent import (AgentConfig, BufferNotReady, DDPGAgent, NoiseSchedule, ReplayBuffer,
                          actor_backward, actor_forward, decode_action, decode_angles,
                          decode_ratio)
from dtbeam.env import EnvConfig

SMALL = EnvConfig(n_bs=4, n_ue=3, n_h=4, n_v=4)
TINY_CFG = AgentConfig(hidden=16, critic_hidden=16, batch_size=8, buffer_capacity=200)


def make_actor(n_ue=3, n_bs=10, mode="learned", seed=0, hidden=16):
    cfg = AgentConfig(hidden=hidden, ratio_mode=mode)
    return ag.ActorNet.build(n_ue, n_bs, cfg, np.random.default_rng(seed))


# --- actor -----------------------------------------------------------------------------

def test_actor_output_shapes():
    actor = make_actor(3, 10)
    out = actor_forward(actor, np.zeros(3 * 11))
    assert out.bs.shape == (1, 3, 10)
    assert out.angles.shape == (1, 3, 2)
    assert out.ratio.shape == (1, 10)
    np.testing.assert_allclose(out.bs.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(np.abs(out.angles) < 1) and np.all(np.abs(out.ratio) < 1)


def test_actor_head_dimensions():
    actor = make_actor(3, 10, hidden=32)
    assert all(h.n_in == 32 for h in actor.bs_heads)
    assert all(h.n_in == 32 + 10 for h in actor.angle_heads)
    assert actor.ratio_head.n_in == 3 * 10 + 2 * 3 and actor.ratio_head.n_out == 10
    assert make_actor(mode="none").ratio_head is None


def test_zero_bs_heads_uniform():
    actor = make_actor(3, 4)
    for h in actor.bs_heads:
        for layer in h.layers:
            layer.weight[...] = 0
            layer.bias[...] = 0
    out = actor_forward(actor, np.random.default_rng(0).normal(size=15))
    np.testing.assert_allclose(out.bs, 0.25, atol=1e-15)


def test_actor_rejects_wrong_width():
    with pytest.raises(ValueError):
        actor_forward(make_actor(3, 10), np.zeros(20))


def test_ratio_head_sees_noised_angles():
    actor = make_actor(2, 3)
    s = np.random.default_rng(1).normal(size=8)
    noise = np.array([[0.3, -0.2], [0.1, 0.4]])
    out = actor_forward(actor, s, angle_noise=noise)
    z = np.concatenate([out.bs.ravel(), np.clip(out.angles + noise, -1, 1).ravel()])
    np.testing.assert_allclose(out.ratio[0], nncore.forward(actor.ratio_head, z), atol=1e-14)


def _actor_loss(actor, s, noise, w_bs, w_ang, w_r):
    out = actor_forward(actor, s, angle_noise=noise)
    return float(np.sum(w_bs * out.bs) + np.sum(w_ang * out.angles_tilde)
                 + np.sum(w_r * out.ratio))


@pytest.mark.parametrize("seed", range(3))
def test_actor_backward_matches_fd(seed):
    rng = np.random.default_rng(seed)
    actor = make_actor(2, 3, seed=seed, hidden=6)
    s = rng.normal(size=(4, 8))
    noise = rng.normal(scale=0.3, size=(4, 2, 2))
    w_bs, w_ang, w_r = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 2, 2)), rng.normal(size=(4, 3))
    out = actor_forward(actor, s, angle_noise=noise, record=True)
    grads = actor_backward(actor, out, w_bs, w_ang, w_r)
    h = 1e-6
    for p, g in zip(actor.params, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = _actor_loss(actor, s, noise, w_bs, w_ang, w_r)
            p[i] = old - h
            dn = _actor_loss(actor, s, noise, w_bs, w_ang, w_r)
            p[i] = old
            fd = (up - dn) / (2 * h)
            assert abs(g[i] - fd) <= 1e-4 * max(1e-3, abs(fd) + abs(g[i]))


def test_actor_backward_needs_tapes():
    actor = make_actor()
    out = actor_forward(actor, np.zeros(33))
    with pytest.raises(ValueError):
        actor_backward(actor, out, out.bs, out.angles)


# --- critic ---------------------------------------------------------------------------------

def test_critic_scalar_and_deterministic():
    rng = np.random.default_rng(0)
    critic = ag.build_critic(15, 7, TINY_CFG, rng)
    s, a = rng.normal(size=(5, 15)), rng.normal(size=(5, 7))
    q1, q2 = ag.critic_forward(critic, s, a), ag.critic_forward(critic, s, a)
    assert q1.shape == (5,)
    np.testing.assert_array_equal(q1, q2)


def test_critic_action_gradient_fd():
    rng = np.random.default_rng(1)
    critic = ag.build_critic(6, 4, TINY_CFG, rng)
    s, a = rng.normal(size=6), rng.normal(size=4)
    tape = nncore.record(critic, np.concatenate([s, a]))
    _, g_in = nncore.backward(tape)
    h = 1e-6
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (ag.critic_forward(critic, s, a + e)[0] - ag.critic_forward(critic, s, a - e)[0]) / (2 * h)
        assert g_in[6 + k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


# --- decoding ----------------------------------------------------------------------------------

def test_decode_examples():
    theta, phi = decode_angles([0.0, 0.0])
    assert theta == pytest.approx(3 * np.pi / 4) and phi == 0.0
    assert decode_ratio(-1.0) == pytest.approx(8.0)
    assert decode_ratio(1.0) == pytest.approx(40.0)
    assert decode_ratio(0.0) == pytest.approx(24.0)


def test_decode_ranges_million():
    rng = np.random.default_rng(0)
    raw = np.tanh(rng.normal(scale=3.0, size=(10**6, 3)))
    noisy = raw + rng.normal(scale=0.5, size=raw.shape)
    theta, phi = decode_angles(np.clip(noisy[:, :2], -1, 1))
    r = decode_ratio(np.clip(noisy[:, 2], -1, 1))
    assert np.all((theta >= np.pi / 2) & (theta <= np.pi))
    assert np.all((phi >= -np.pi / 2) & (phi <= np.pi / 2))
    assert np.all((r >= 8.0) & (r <= 40.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_argmax_invariant_to_logit_scaling(seed, c):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(1, 3, 5))
    def sm(x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    base = ag.ActorOutput(sm(logits), np.zeros((1, 3, 2)), np.zeros((1, 3, 2)), None)
    scaled = ag.ActorOutput(sm(c * logits), np.zeros((1, 3, 2)), np.zeros((1, 3, 2)), None)
    a1, _ = decode_action(base, ratio_mode="none")
    a2, _ = decode_action(scaled, ratio_mode="none")
    np.testing.assert_array_equal(a1.bs, a2.bs)


def test_bs_tie_breaks_low():
    out = ag.ActorOutput(np.full((1, 2, 4), 0.25), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), None)
    a, _ = decode_action(out, ratio_mode="none")
    np.testing.assert_array_equal(a.bs, [0, 0])


def test_decode_modes_and_encoding():
    actor = make_actor(3, 4)
    out = actor_forward(actor, np.zeros(15))
    a, enc = decode_action(out, ratio_noise=np.full(4, 5.0), ratio_mode="learned")
    np.testing.assert_array_equal(a.ratio_db, 40.0)
    assert enc.shape == (3 * 4 + 6 + 4,)
    np.testing.assert_array_equal(enc[-4:], 1.0)
    a, enc = decode_action(out, ratio_mode="fixed", fixed_ratio_db=26.0)
    np.testing.assert_array_equal(a.ratio_db, 26.0)
    a, _ = decode_action(out, ratio_mode="none")
    assert a.ratio_db is None


def test_deterministic_without_exploration():
    agent = DDPGAgent(SMALL, TINY_CFG, np.random.SeedSequence(0))
    obs = np.random.default_rng(0).uniform(-1, 1, SMALL.obs_dim)
    a1, e1 = agent.act(obs, explore=False)
    a2, e2 = agent.act(obs, explore=False)
    np.testing.assert_array_equal(e1, e2)
    np.testing.assert_array_equal(a1.theta, a2.theta)


# --- noise schedule ------------------------------------------------------------------------------

def test_noise_schedule():
    s = NoiseSchedule(0.5, 0.02, 100)
    assert s(0) == 0.5
    assert s(50) == pytest.approx(0.26)
    assert s(100) == 0.02 and s(10**6) == 0.02
    assert NoiseSchedule(0.5, 0.1, 0)(0) == 0.1


def test_late_noise_has_end_variance():
    agent = DDPGAgent(SMALL, TINY_CFG, np.random.SeedSequence(1), total_steps=10)
    agent.t = 10
    assert agent.sigma_angle(agent.t) == 0.02 and agent.sigma_ratio(agent.t) == 0.02


# --- replay buffer -------------------------------------------------------------------------------

def test_buffer_eviction():
    b = ReplayBuffer(2)
    for k in range(3):
        b.push([k], [k], float(k), [k])
    np.testing.assert_array_equal(b.contents()["r"], [1.0, 2.0])
    assert len(b) == 2


def test_buffer_full_sample_is_permutation():
    b = ReplayBuffer(10)
    for k in range(7):
        b.push([k], [0], float(k), [k])
    batch = b.sample(7, np.random.default_rng(0))
    assert sorted(batch["r"]) == list(range(7))


def test_buffer_not_ready():
    b = ReplayBuffer(5)
    b.push([0], [0], 0.0, [0])
    assert not b.ready(2)
    with pytest.raises(BufferNotReady):
        b.sample(2, np.random.default_rng(0))


def test_buffer_sampling_uniform():
    b = ReplayBuffer(10)
    for k in range(10):
        b.push([k], [0], float(k), [k])
    rng = np.random.default_rng(0)
    counts = np.zeros(10)
    for _ in range(10**5):
        counts[int(b.sample(1, rng)["r"][0])] += 1
    np.testing.assert_allclose(counts / 10**5, 0.1, atol=0.01)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_buffer_capacity_and_order(cap, n):
    b = ReplayBuffer(cap)
    for k in range(n):
        b.push([k], [0], float(k), [k])
    r = b.contents()["r"]
    assert len(r) == min(cap, n)
    np.testing.assert_array_equal(r, np.arange(max(0, n - cap), n))


# --- train step --------------------------------------------------------------------------------

def _batch(agent, rng, n=16):
    k = agent.action_dim
    return dict(s=rng.uniform(-1, 1, (n, agent.obs_dim)), a=rng.uniform(-1, 1, (n, k)),
                r=rng.uniform(0, 5, n), s_next=rng.uniform(-1, 1, (n, agent.obs_dim)))


def test_gamma_zero_target_is_reward():
    cfg = AgentConfig(hidden=16, critic_hidden=16, gamma=0.0, critic_lr=1e-12, actor_lr=1e-12)
    agent = DDPGAgent(SMALL, cfg, np.random.SeedSequence(0))
    batch = _batch(agent, np.random.default_rng(0))
    q = ag.critic_forward(agent.critic, batch["s"], batch["a"])
    diag = ag.train_step(agent, batch)
    assert diag["msbe"] == pytest.approx(np.mean((q - batch["r"]) ** 2), rel=1e-9)


def test_target_moves_at_most_tau():
    agent = DDPGAgent(SMALL, TINY_CFG, np.random.SeedSequence(0))
    before_t = agent.critic_target_flat.copy()
    before_a = agent.actor_target_flat.copy()
    ag.train_step(agent, _batch(agent, np.random.default_rng(1)))
    tau = TINY_CFG.tau_soft
    bound = tau * np.abs(agent.critic_flat - before_t) + 1e-15
    assert np.all(np.abs(agent.critic_target_flat - before_t) <= bound)
    np.testing.assert_allclose(agent.actor_target_flat,
                               (1 - tau) * before_a + tau * agent.actor_flat, rtol=1e-12)


def test_linear_critic_converges_to_least_squares():
    # frozen actor, gamma = 0, identity-activation critic: Q fits the targets
    rng = np.random.default_rng(0)
    cfg = AgentConfig(hidden=8, critic_hidden=8, gamma=0.0, critic_lr=3e-3, actor_lr=1e-12)
    agent = DDPGAgent(EnvConfig(n_bs=2, n_ue=1, n_h=2, n_v=2), cfg, np.random.SeedSequence(0))
    for layer in agent.critic.layers:
        layer.activation = "identity"
    n = 32
    s = rng.uniform(-1, 1, (n, agent.obs_dim))
    a = rng.uniform(-1, 1, (n, agent.action_dim))
    X = np.concatenate([s, a, np.ones((n, 1))], axis=1)
    w_true = rng.normal(size=X.shape[1])
    r = X @ w_true + 0.01 * rng.normal(size=n)
    batch = dict(s=s, a=a, r=r, s_next=s)
    for _ in range(4000):
        ag.train_step(agent, batch)
    lsq = X @ np.linalg.lstsq(X, r, rcond=None)[0]
    q = ag.critic_forward(agent.critic, s, a)
    assert np.mean((q - lsq) ** 2) < 1e-4


def test_nan_reward_diverges():
    agent = DDPGAgent(SMALL, TINY_CFG, np.random.SeedSequence(0))
    batch = _batch(agent, np.random.default_rng(0))
    batch["r"][3] = np.nan
    with pytest.raises(nncore.TrainingDivergedError):
        ag.train_step(agent, batch)


def test_empty_batch_rejected():
    agent = DDPGAgent(SMALL, TINY_CFG, np.random.SeedSequence(0))
    batch = {k: v[:0] for k, v in _batch(agent, np.random.default_rng(0)).items()}
    with pytest.raises(ValueError):
        ag.train_step(agent, batch)


# --- training loop ----------------------------------------------------------------------------

def test_short_run_skips_updates():
    cfg = AgentConfig(hidden=16, critic_hidden=16, batch_size=64)
    res = ag.run_training(SMALL, cfg, episodes=1, steps=5, seed=0)
    assert res.rewards.shape == (1, 5) and np.all(np.isfinite(res.rewards))
    assert res.agent.critic_opt.step == 0 and res.diagnostics == []


def test_training_deterministic():
    r1 = ag.run_training(SMALL, TINY_CFG, 2, 20, seed=3).rewards
    r2 = ag.run_training(SMALL, TINY_CFG, 2, 20, seed=3).rewards
    np.testing.assert_array_equal(r1, r2)


def test_paired_trajectories_across_policies():
    # same seed -> same UE tracks; the oracle's reward sequence depends only on them
    a = ag.run_policy(SMALL, "oracle", 2, 10, seed=4)
    b = ag.run_policy(SMALL, "oracle", 2, 10, seed=4, ratio_mode="learned")
    np.testing.assert_array_equal(a, b)


def test_run_policy_agent_needs_agent():
    with pytest.raises(ValueError):
        ag.run_policy(SMALL, "agent", 1, 1, seed=0)
    with pytest.raises(ValueError):
        ag.run_policy(SMALL, "greedy", 1, 1, seed=0)


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(ratio_mode="sometimes")
    with pytest.raises(ValueError):
        AgentConfig(tau_soft=0.0)
