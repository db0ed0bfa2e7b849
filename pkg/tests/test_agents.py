import numpy as np
import pytest

from dtoffload import agents, nn
from dtoffload.agents import (Rollout, TrainConfig, advantage, baseline_policy,
                              bellman_target, epsilon_at, n_step_returns,
                              policy_gradient_dlogits)
from dtoffload.config import CostWeights, SimParams, ValidationError, make_rng
from dtoffload.env import OraclePredictors

P = SimParams()
W = CostWeights()


def brute_force_returns(rewards, bootstrap, gamma):
    m = len(rewards)
    out = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for l, r in enumerate(rewards[i:]):
            acc += gamma ** l * r
        out[i] = acc + gamma ** (m - i) * bootstrap
    return out


# -- returns / advantage --------------------------------------------------------

def test_n_step_gamma_zero_is_myopic():
    rewards = [1.0, -2.0, 3.0]
    np.testing.assert_array_equal(n_step_returns(rewards, 9.0, 0.0), rewards)


def test_n_step_hand_fixture():
    r = n_step_returns([1.0, 1.0], bootstrap_value=2.0, gamma=0.9)
    assert r[0] == pytest.approx(3.52)
    assert r[1] == pytest.approx(1.0 + 0.9 * 2.0)


def test_n_step_matches_brute_force_on_random_rollouts():
    rng = make_rng(1, 0)
    for _ in range(100):
        m = int(rng.integers(1, 21))
        rewards = rng.standard_normal(m).tolist()
        bootstrap = float(rng.standard_normal())
        gamma = float(rng.uniform(0, 1))
        fast = n_step_returns(rewards, bootstrap, gamma)
        slow = brute_force_returns(rewards, bootstrap, gamma)
        assert np.max(np.abs(fast - slow)) < 1e-9


def test_advantage_examples():
    np.testing.assert_array_equal(advantage(np.ones(4), np.ones(4)), np.zeros(4))
    assert advantage(np.array([3.52]), np.array([1.0]))[0] == pytest.approx(2.52)
    with pytest.raises(ValidationError):
        advantage(np.ones(3), np.ones(4))


def test_reward_shift_absorbed_by_critic_leaves_actor_gradient():
    # gamma=1: shifting rewards by +c shifts targets by c*(m-i); if the critic
    # absorbs that shift the advantages, and hence the policy gradient, are
    # unchanged
    rng = make_rng(2, 0)
    spec = nn.NetworkSpec(6, (5,), "policy")
    actor = nn.MLP(spec, rng=rng)
    m, c = 8, 0.37
    rewards = rng.standard_normal(m)
    values = rng.standard_normal(m)
    states = rng.standard_normal((m, 6))
    actions = rng.integers(0, 3, m)

    t1 = n_step_returns(rewards.tolist(), 0.0, 1.0)
    a1 = advantage(t1, values)
    t2 = n_step_returns((rewards + c).tolist(), 0.0, 1.0)
    shift = c * (m - np.arange(m))
    a2 = advantage(t2, values + shift)
    np.testing.assert_allclose(a1, a2, atol=1e-12)

    probs, cache = actor.forward(states)
    g1 = actor.backward(cache, policy_gradient_dlogits(probs, actions, a1, 0.01))
    g2 = actor.backward(cache, policy_gradient_dlogits(probs, actions, a2, 0.01))
    np.testing.assert_allclose(g1, g2, atol=1e-12)


# -- a3c update -----------------------------------------------------------------

def test_zero_advantage_zero_entropy_gives_zero_actor_gradient():
    rng = make_rng(3, 0)
    spec = nn.NetworkSpec(7, (5,), "policy")
    actor = nn.MLP(spec, rng=rng)
    critic = nn.MLP(nn.NetworkSpec(7, (5,), "value"), rng=rng)
    states = rng.standard_normal((4, 7))
    values, _ = critic.forward(states)
    rollout = Rollout(states=list(states), actions=[0, 1, 2, 0],
                      rewards=list(values * (1 - 0.9)), values=list(values))
    # choose rewards/bootstrap so that targets equal values exactly
    rollout.rewards = []
    targets = values
    rewards = [float(targets[i] - 0.9 * (targets[i + 1] if i + 1 < 4 else 0.0))
               for i in range(4)]
    rollout.rewards = rewards
    rollout.bootstrap_value = 0.0
    d_theta, d_theta_v = agents.a3c_update(actor, critic, rollout, 0.9, phi=0.0)
    np.testing.assert_allclose(d_theta, 0.0, atol=1e-10)
    np.testing.assert_allclose(d_theta_v, 0.0, atol=1e-10)


def test_entropy_only_updates_increase_entropy():
    rng = make_rng(4, 0)
    spec = nn.NetworkSpec(5, (6,), "policy")
    actor = nn.MLP(spec, rng=rng)
    actor.flat += rng.standard_normal(actor.n_params) * 0.5  # skew the policy
    states = rng.standard_normal((6, 5))
    store = nn.ParameterStore(actor.flat, actor.shapes)
    prev_entropy = -1.0
    for _ in range(30):
        actor.set_flat(store.snapshot()[0])
        probs, cache = actor.forward(states)
        h = float(nn.entropy(probs).mean())
        assert h >= prev_entropy - 1e-9
        prev_entropy = h
        d = policy_gradient_dlogits(probs, np.zeros(6, dtype=int),
                                    np.zeros(6), phi=1.0)
        store.apply_gradient(actor.backward(cache, d), lr=1e-3)


# -- baselines ------------------------------------------------------------------

def test_train_config_defaults_follow_the_source_table():
    cfg = TrainConfig()
    assert cfg.lr_actor == 1e-5 and cfg.lr_critic == 1e-5
    assert cfg.gamma == 0.9
    assert cfg.entropy_phi == 0.01
    assert cfg.entropy_phi_end is None  # constant phi unless asked
    assert cfg.rollout_m == 20
    assert cfg.workers == 8  # desk default; the source model trains with 32


def test_baseline_constants():
    rng = make_rng(5, 0)
    obs = np.zeros(112)
    assert all(baseline_policy("AL")(obs, rng) == 0 for _ in range(10))
    assert all(baseline_policy("AM")(obs, rng) == 1 for _ in range(10))
    assert all(baseline_policy("AC")(obs, rng) == 2 for _ in range(10))
    with pytest.raises(ValidationError):
        baseline_policy("XX")


def test_random_choice_frequencies():
    rng = make_rng(6, 0)
    rc = baseline_policy("RC")
    draws = np.array([rc(None, rng) for _ in range(30_000)])
    for a in range(3):
        assert abs((draws == a).mean() - 1 / 3) < 0.02


# -- dqn pieces -----------------------------------------------------------------

def test_epsilon_one_forever_uniform_marginals():
    cfg = TrainConfig(eps_start=1.0, eps_end=1.0, i_max=100)
    assert epsilon_at(0, cfg) == 1.0 and epsilon_at(10**6, cfg) == 1.0
    rng = make_rng(7, 0)
    actions = []
    for step in range(10_000):
        if rng.random() < epsilon_at(step, cfg):
            actions.append(int(rng.integers(3)))
        else:  # pragma: no cover - epsilon is 1 forever
            actions.append(-1)
    freq = np.bincount(actions, minlength=3) / len(actions)
    assert np.all(np.abs(freq - 1 / 3) < 0.02)


def test_target_sync_zero_rejected():
    cfg = TrainConfig(target_sync=0, i_max=10)
    with pytest.raises(ValidationError):
        agents.dqn_train(lambda seed: None, P, cfg)


def test_bellman_target_gamma_zero_and_terminal():
    assert bellman_target(2.5, np.array([9.0, 1.0, 3.0]), False, 0.0) == 2.5
    assert bellman_target(2.5, np.array([9.0, 1.0, 3.0]), True, 0.9) == 2.5
    assert bellman_target(1.0, np.array([2.0, 5.0, 3.0]), False, 0.9) == pytest.approx(5.5)


def test_replay_buffer_ring_and_bounds():
    buf = agents.ReplayBuffer(capacity=8, obs_dim=3)
    for i in range(20):
        buf.push(np.full(3, i), i % 3, float(i), np.full(3, i + 1), False)
    assert buf.size == 8
    rng = make_rng(8, 0)
    obs, actions, rewards, next_obs, dones = buf.sample(16, rng)
    assert obs.shape == (16, 3)
    assert rewards.min() >= 12.0  # oldest entries were overwritten


# -- trainers (smoke scale) -------------------------------------------------------

def factory(mode="dynamic", obs_mode="full", episode_decisions=32):
    def make(seed):
        from dtoffload.env import OffloadEnv
        return OffloadEnv(P, W, seed=seed, mode=mode, obs_mode=obs_mode,
                          predictors=OraclePredictors(),
                          max_decisions=episode_decisions)
    return make


def test_a3c_smoke_500_steps_emits_finite_curves(tmp_path):
    # episode budget of 1 decision: one curve row per step
    cfg = TrainConfig(seed=1, workers=1, i_max=500, episode_decisions=1,
                      rollout_m=20, deterministic=True, hidden=(16, 8))
    path = str(tmp_path / "curves.csv")
    store_a, store_c, curves, obs_dim = agents.a3c_train(
        factory(episode_decisions=1), P, cfg, curves_path=path)
    assert len(curves) == 500
    assert obs_dim == 112
    data = np.genfromtxt(path, delimiter=",", skip_header=1, usecols=(2, 3, 4))
    assert data.shape[0] == 500
    assert np.all(np.isfinite(data))


def test_a3c_single_worker_deterministic(tmp_path):
    cfg = TrainConfig(seed=3, workers=1, i_max=200, episode_decisions=16,
                      deterministic=True, hidden=(12,))
    p1 = str(tmp_path / "c1.csv")
    p2 = str(tmp_path / "c2.csv")
    agents.a3c_train(factory(episode_decisions=16), P, cfg, curves_path=p1)
    agents.a3c_train(factory(episode_decisions=16), P, cfg, curves_path=p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_a3c_multiworker_applies_every_gradient():
    cfg = TrainConfig(seed=4, workers=8, i_max=400, episode_decisions=16,
                      rollout_m=10, hidden=(8,))
    store_a, store_c, curves, _ = agents.a3c_train(factory(episode_decisions=16), P, cfg)
    assert store_a.version >= 400 // 10
    assert store_a.version == store_c.version


def test_a3cl_uses_the_a3c_code_path_with_reduced_obs(tmp_path, monkeypatch):
    calls = {}
    orig = agents.a3c_train

    def spy(make_env, params, cfg, curves_path=None):
        calls["obs_mode"] = cfg.obs_mode
        return orig(make_env, params, cfg, curves_path)

    monkeypatch.setattr(agents, "a3c_train", spy)
    cfg = TrainConfig(seed=5, workers=1, i_max=60, episode_decisions=8,
                      deterministic=True, hidden=(8,))
    _, _, _, obs_dim = agents.a3cl_train(factory(obs_mode="reduced",
                                                 episode_decisions=8), P, cfg)
    assert calls["obs_mode"] == "reduced"
    assert obs_dim == 7


def test_dqn_smoke_and_curves(tmp_path):
    cfg = TrainConfig(seed=6, workers=1, i_max=300, episode_decisions=24,
                      hidden=(12,), batch_size=16, train_every=2,
                      target_sync=50, eps_decay_steps=150)
    path = str(tmp_path / "dqn.csv")
    store, curves, obs_dim = agents.dqn_train(factory(episode_decisions=24), P,
                                              cfg, curves_path=path)
    assert store.version > 0
    assert len(curves) >= 300 // 24 - 1
    header = open(path).readline().strip()
    assert header == "schema,episode,steps,mean_reward,mean_time_s,mean_energy"


def test_checkpoint_save_load_policy(tmp_path):
    cfg = TrainConfig(seed=7, workers=1, i_max=60, episode_decisions=8,
                      deterministic=True, hidden=(8,))
    store_a, store_c, _, obs_dim = agents.a3c_train(factory(episode_decisions=8), P, cfg)
    ckpt = str(tmp_path / "a3c_dynamic")
    agents.save_policy_checkpoint(ckpt, "A3C", obs_dim, cfg.hidden,
                                  {"actor": store_a, "critic": store_c})
    policy, obs_mode = agents.load_policy(ckpt, P)
    assert obs_mode == "full"
    env = factory(episode_decisions=4)(0)
    obs = env.reset()
    a = policy(obs, make_rng(0, 0))
    assert a in (0, 1, 2)


def test_predictors_frozen_during_training():
    from dtoffload import predict as pr
    bundle = pr.TrainedPredictors(
        mec=pr.Predictor(pr.PredictorSpec(50, 8, (6,), 10, 5), seed=1),
        cloud=pr.Predictor(pr.PredictorSpec(50, 8, (6,), 10, 5), seed=2),
        task_rate=pr.Predictor(pr.PredictorSpec(5, 8, (6,), 1, 1), seed=3),
    )
    before = [bundle.mec.net.flat.copy(), bundle.cloud.net.flat.copy(),
              bundle.task_rate.net.flat.copy()]

    def make(seed):
        from dtoffload.env import OffloadEnv
        return OffloadEnv(P, W, seed=seed, mode="dynamic", predictors=bundle,
                          max_decisions=8)

    cfg = TrainConfig(seed=8, workers=1, i_max=40, episode_decisions=8,
                      deterministic=True, hidden=(8,))
    agents.a3c_train(make, P, cfg)
    np.testing.assert_array_equal(bundle.mec.net.flat, before[0])
    np.testing.assert_array_equal(bundle.cloud.net.flat, before[1])
    np.testing.assert_array_equal(bundle.task_rate.net.flat, before[2])
