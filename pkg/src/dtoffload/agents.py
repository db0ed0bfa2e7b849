"""Decision policies: the asynchronous advantage actor-critic trainer, a DQN
trainer, the twin-less reduced-observation variant, and the static baselines.

Workers run independent environments, snapshot the shared parameter stores,
compute rollout gradients locally and push them for atomic application
(classic asynchronous scheme: gradients from any snapshot apply
unconditionally). `--workers 1 --deterministic` serializes everything.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import channel
from .config import (STREAM_NN_INIT, STREAM_POLICY, SimParams,
                     ValidationError, make_rng)
from .env import OffloadEnv
from .nn import (MLP, NetworkSpec, ParameterStore, entropy, flat_views,
                 load_checkpoint, save_checkpoint)

POLICY_NAMES = ("AL", "AM", "AC", "RC", "A3C", "DQN", "A3CL")
BASELINES = ("AL", "AM", "AC", "RC")


class Featurizer:
    """Maps raw observations to well-scaled net inputs (dimension preserved)."""

    def __init__(self, params: SimParams, obs_mode: str = "full"):
        self.obs_mode = obs_mode
        self.q_scale = params.queue_capacity_mb
        self.batt_scale = params.initial_battery
        self.d_scale = params.task_size_range_mb[1]
        self.cr_scale = params.task_cycles_range_gc[1]
        self.cap_scale = params.mec_capacity_range_gc_per_slot[1]
        # Achievable rate at unit large-scale gain and |h|^2 = 1 bounds the
        # throughput forecasts.
        ref = channel.FadingLink(
            h=1.0 + 0.0j, kappa=0.0, large_scale=1.0,
            bandwidth_hz=params.mec_bandwidth_hz,
            noise_power_w=channel.noise_power_w(params, params.mec_bandwidth_hz))
        self.rate_scale = max(1e-9, channel.link_rate(ref, params.tx_power_w,
                                                      params.slot_duration_s))
        self.n_hist = params.gain_history_len
        self.n_cap = params.capacity_history_len

    @staticmethod
    def _log_gain(g: np.ndarray) -> np.ndarray:
        return (np.log10(np.maximum(g, 1e-12)) + 10.0) / 10.0

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        x = np.array(obs, dtype=np.float64)
        if self.obs_mode == "reduced":
            x[0] /= self.q_scale
            x[1] /= self.batt_scale
            x[2] /= self.d_scale
            x[3] /= self.cr_scale
            x[4] = self._log_gain(x[4])
            x[5] = self._log_gain(x[5])
            x[6] /= self.cap_scale
            return x
        n = self.n_hist
        x[0] /= self.q_scale
        x[1] /= self.batt_scale
        x[2] /= self.d_scale
        x[3] /= self.cr_scale
        x[4:4 + 2 * n] = self._log_gain(x[4:4 + 2 * n])
        x[4 + 2 * n:4 + 2 * n + self.n_cap] /= self.cap_scale
        x[4 + 2 * n + self.n_cap:4 + 2 * n + self.n_cap + 2] /= self.rate_scale
        return x


def n_step_returns(rewards: Sequence[float], bootstrap_value: float,
                   gamma: float) -> np.ndarray:
    """Backward sweep R <- r_j + gamma*R starting from the bootstrap value."""
    if len(rewards) == 0:
        raise ValidationError("rollout must be nonempty")
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must be in [0, 1]")
    out = np.empty(len(rewards))
    r = float(bootstrap_value)
    for j in range(len(rewards) - 1, -1, -1):
        r = rewards[j] + gamma * r
        out[j] = r
    return out


def advantage(targets: np.ndarray, values: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if targets.shape != values.shape:
        raise ValidationError("targets and values must have equal length")
    return targets - values


@dataclass
class Rollout:
    """One on-policy segment of at most m steps."""

    states: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.actions)


def policy_gradient_dlogits(probs: np.ndarray, actions: np.ndarray,
                            advantages: np.ndarray, phi: float) -> np.ndarray:
    """d(actor loss)/d(logits) for loss = -sum[log pi(a)*A + phi*H(pi)]."""
    b = probs.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), actions] = 1.0
    logp = np.log(np.maximum(probs, 1e-300))
    h = entropy(probs)
    d = advantages[:, None] * (probs - onehot)
    d += phi * probs * (logp + h[:, None])
    return d


def a3c_update(actor: MLP, critic: MLP, rollout: Rollout, gamma: float,
               phi: float):
    """Gradients (d_theta, d_theta_v) for one rollout against the snapshot
    weights currently loaded in actor/critic."""
    xs = np.stack(rollout.states)
    acts = np.asarray(rollout.actions)
    targets = n_step_returns(rollout.rewards, rollout.bootstrap_value, gamma)
    values, vcache = critic.forward(xs)
    adv = advantage(targets, values)
    probs, acache = actor.forward(xs)
    dlogits = policy_gradient_dlogits(probs, acts, adv, phi)
    d_theta = actor.backward(acache, dlogits)
    d_theta_v = critic.backward(vcache, -2.0 * adv)
    return d_theta, d_theta_v


@dataclass
class TrainConfig:
    """Hyperparameters shared by the trainers (Table-1 values as defaults)."""

    seed: int = 0
    gamma: float = 0.9
    lr_actor: float = 1e-5
    lr_critic: float = 1e-5
    entropy_phi: float = 0.01
    # Optional linear anneal target for the entropy weight over i_max steps
    # (None keeps phi constant, the source model's schedule).
    entropy_phi_end: Optional[float] = None
    rollout_m: int = 20
    workers: int = 8
    i_max: int = 200_000
    episode_decisions: int = 256
    hidden: tuple = (256, 128)
    obs_mode: str = "full"
    deterministic: bool = False
    # DQN-specific plumbing (artifact choices).
    lr_q: float = 1e-5
    buffer_capacity: int = 100_000
    batch_size: int = 64
    train_every: int = 4
    target_sync: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: Optional[int] = None


@dataclass
class CurveRow:
    episode: int
    steps: int
    mean_reward: float
    mean_time_s: float
    mean_energy: float


class _EpisodeStats:
    def __init__(self):
        self.rewards: List[float] = []
        self.times_s: List[float] = []
        self.energies: List[float] = []

    def add(self, reward: float, info: dict, slot_s: float):
        self.rewards.append(reward)
        if info["completed"]:
            self.times_s.append(info["time_slots"] * slot_s)
            self.energies.append(info["energy"])

    def row(self, episode: int) -> CurveRow:
        return CurveRow(
            episode=episode,
            steps=len(self.rewards),
            mean_reward=float(np.mean(self.rewards)) if self.rewards else 0.0,
            mean_time_s=float(np.mean(self.times_s)) if self.times_s else 0.0,
            mean_energy=float(np.mean(self.energies)) if self.energies else 0.0,
        )


def _worker_env_seed(base_seed: int, worker: int, episode: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(worker, episode))
    return int(ss.generate_state(1)[0])


class _Counter:
    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> int:
        with self._lock:
            self.value += n
            return self.value


def a3c_train(make_env: Callable[[int], OffloadEnv], params: SimParams,
              cfg: TrainConfig, curves_path: Optional[str] = None):
    """Algorithm-1 training loop over cfg.workers asynchronous workers.

    make_env(seed) builds a fresh episode environment. Returns
    (actor_store, critic_store, curve_rows, obs_dim).
    """
    probe = make_env(_worker_env_seed(cfg.seed, 0, 0))
    obs_dim = probe.obs_dim
    slot_s = params.slot_duration_s
    actor_spec = NetworkSpec(obs_dim, cfg.hidden, "policy")
    critic_spec = NetworkSpec(obs_dim, cfg.hidden, "value")
    init_rng = make_rng(cfg.seed, STREAM_NN_INIT)
    actor_proto = MLP(actor_spec, rng=init_rng)
    critic_proto = MLP(critic_spec, rng=init_rng)
    actor_store = ParameterStore(actor_proto.flat, actor_proto.shapes)
    critic_store = ParameterStore(critic_proto.flat, critic_proto.shapes)

    counter = _Counter()
    episode_counter = _Counter()
    curves: List[CurveRow] = []
    curves_lock = threading.Lock()
    featurizer = Featurizer(params, cfg.obs_mode)
    errors: List[BaseException] = []

    def worker(widx: int):
        try:
            actor = MLP(actor_spec, flat=actor_store.snapshot()[0])
            critic = MLP(critic_spec, flat=critic_store.snapshot()[0])
            policy_rng = make_rng(cfg.seed ^ 0x5EED, STREAM_POLICY + widx)
            my_episode = 0
            env = None
            obs = None
            done = True
            stats = None
            degenerate = 0
            while counter.value < cfg.i_max:
                actor.set_flat(actor_store.snapshot()[0])
                critic.set_flat(critic_store.snapshot()[0])
                if done:
                    if stats is not None and len(stats.rewards):
                        row = stats.row(episode_counter.add(1))
                        with curves_lock:
                            curves.append(row)
                    env = make_env(_worker_env_seed(cfg.seed, widx, my_episode))
                    my_episode += 1
                    obs = env.reset()
                    done = env._done  # degenerate episodes end at reset
                    stats = _EpisodeStats()
                    if done:
                        degenerate += 1
                        if degenerate > 100:
                            raise RuntimeError("every episode ends at reset; "
                                               "check the training config")
                        continue
                    degenerate = 0
                rollout = Rollout()
                for _ in range(cfg.rollout_m):
                    x = featurizer(obs)
                    probs, _ = actor.forward(x[None, :])
                    a = int(policy_rng.choice(3, p=probs[0]))
                    obs2, reward, done, info = env.step(a)
                    stats.add(reward, info, slot_s)
                    rollout.states.append(x)
                    rollout.actions.append(a)
                    rollout.rewards.append(reward)
                    obs = obs2
                    if done:
                        break
                if done:
                    rollout.bootstrap_value = 0.0
                else:
                    v, _ = critic.forward(featurizer(obs)[None, :])
                    rollout.bootstrap_value = float(v[0])
                if cfg.entropy_phi_end is None:
                    phi = cfg.entropy_phi
                else:
                    frac = min(1.0, counter.value / max(1, cfg.i_max))
                    phi = cfg.entropy_phi + frac * (cfg.entropy_phi_end - cfg.entropy_phi)
                d_theta, d_theta_v = a3c_update(actor, critic, rollout,
                                                cfg.gamma, phi)
                actor_store.apply_gradient(d_theta, cfg.lr_actor)
                critic_store.apply_gradient(d_theta_v, cfg.lr_critic)
                counter.add(len(rollout))
            if stats is not None and len(stats.rewards):
                row = stats.row(episode_counter.add(1))
                with curves_lock:
                    curves.append(row)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    n_workers = 1 if cfg.deterministic else max(1, cfg.workers)
    try:
        if n_workers == 1:
            worker(0)
        else:
            threads = [threading.Thread(target=worker, args=(w,), daemon=True)
                       for w in range(n_workers)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        # a worker panic still leaves the completed episodes on disk
        if curves_path is not None:
            write_curves(curves_path, curves)
    if errors:
        raise RuntimeError(f"worker failed: {errors[0]!r}") from errors[0]
    return actor_store, critic_store, curves, obs_dim


def write_curves(path: str, curves: Sequence[CurveRow]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("schema,episode,steps,mean_reward,mean_time_s,mean_energy\n")
        for row in curves:
            fh.write(f"curves-v1,{row.episode},{row.steps},{row.mean_reward!r},"
                     f"{row.mean_time_s!r},{row.mean_energy!r}\n")


def a3cl_train(make_env: Callable[[int], OffloadEnv], params: SimParams,
               cfg: TrainConfig, curves_path: Optional[str] = None):
    """The digital-twin-less variant: same trainer, reduced 7-dim observation.

    make_env must build envs with obs_mode='reduced'."""
    cfg = replace(cfg, obs_mode="reduced")
    return a3c_train(make_env, params, cfg, curves_path)


class ReplayBuffer:
    """Uniform-sampling ring buffer of transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity <= 0:
            raise ValidationError("replay capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.size = 0
        self._pos = 0

    def push(self, obs, action, reward, next_obs, done):
        i = self._pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = 1.0 if done else 0.0
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])


def epsilon_at(step: int, cfg: TrainConfig) -> float:
    decay = cfg.eps_decay_steps if cfg.eps_decay_steps is not None else cfg.i_max // 2
    if decay <= 0:
        return cfg.eps_end
    frac = min(1.0, step / decay)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def dqn_train(make_env: Callable[[int], OffloadEnv], params: SimParams,
              cfg: TrainConfig, curves_path: Optional[str] = None):
    """Epsilon-greedy deep Q-learning with replay and a periodically synced
    target network; emits the same curve CSV schema as A3C."""
    if cfg.target_sync <= 0:
        raise ValidationError("target_sync must be positive")
    probe = make_env(_worker_env_seed(cfg.seed, 0, 0))
    obs_dim = probe.obs_dim
    slot_s = params.slot_duration_s
    spec = NetworkSpec(obs_dim, cfg.hidden, "q")
    init_rng = make_rng(cfg.seed, STREAM_NN_INIT)
    qnet = MLP(spec, rng=init_rng)
    target = MLP(spec, flat=qnet.flat)
    store = ParameterStore(qnet.flat, qnet.shapes)
    buffer = ReplayBuffer(cfg.buffer_capacity, obs_dim)
    rng = make_rng(cfg.seed ^ 0xD09, STREAM_POLICY)
    featurizer = Featurizer(params, cfg.obs_mode)

    curves: List[CurveRow] = []
    episode = 0
    my_episode = 0
    step = 0
    degenerate = 0
    while step < cfg.i_max:
        env = make_env(_worker_env_seed(cfg.seed, 0, my_episode))
        my_episode += 1
        obs = env.reset()
        done = env._done
        if done:
            degenerate += 1
            if degenerate > 100:
                raise RuntimeError("every episode ends at reset; check the "
                                   "training config")
        else:
            degenerate = 0
        stats = _EpisodeStats()
        while not done and step < cfg.i_max:
            x = featurizer(obs)
            if rng.random() < epsilon_at(step, cfg):
                a = int(rng.integers(3))
            else:
                q, _ = qnet.forward(x[None, :])
                a = int(np.argmax(q[0]))
            obs2, reward, done, info = env.step(a)
            stats.add(reward, info, slot_s)
            buffer.push(x, a, reward, featurizer(obs2) if not done else np.zeros(obs_dim),
                        done)
            obs = obs2
            step += 1
            if step % cfg.train_every == 0 and buffer.size >= cfg.batch_size:
                bx, ba, br, bx2, bdone = buffer.sample(cfg.batch_size, rng)
                tq, _ = target.forward(bx2)
                bellman = br + cfg.gamma * (1.0 - bdone) * tq.max(axis=1)
                q, cache = qnet.forward(bx)
                dlogits = np.zeros_like(q)
                taken = q[np.arange(cfg.batch_size), ba]
                dlogits[np.arange(cfg.batch_size), ba] = \
                    2.0 * (taken - bellman) / cfg.batch_size
                grad = qnet.backward(cache, dlogits)
                store.apply_gradient(grad, cfg.lr_q)
                qnet.set_flat(store.snapshot()[0])
            if step % cfg.target_sync == 0:
                target.set_flat(store.snapshot()[0])
        if len(stats.rewards):
            episode += 1
            curves.append(stats.row(episode))
            if curves_path is not None and episode % 16 == 0:
                write_curves(curves_path, curves)
    if curves_path is not None:
        write_curves(curves_path, curves)
    return store, curves, obs_dim


def bellman_target(reward: float, next_q: np.ndarray, done: bool, gamma: float) -> float:
    """One-transition Q-learning target r + gamma * max_a' Q_target(s', a')."""
    if done:
        return float(reward)
    return float(reward + gamma * float(np.max(next_q)))


def baseline_policy(kind: str) -> Callable[[np.ndarray, np.random.Generator], int]:
    """AL -> always local, AM -> always MEC, AC -> always cloud, RC -> uniform."""
    if kind == "AL":
        return lambda obs, rng: 0
    if kind == "AM":
        return lambda obs, rng: 1
    if kind == "AC":
        return lambda obs, rng: 2
    if kind == "RC":
        return lambda obs, rng: int(rng.integers(3))
    raise ValidationError(f"unknown baseline {kind!r}")


# -- checkpoints -------------------------------------------------------------

def save_policy_checkpoint(directory: str, kind: str, obs_dim: int,
                           hidden: tuple, stores: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    meta = {"kind": kind, "obs_dim": obs_dim, "hidden": list(hidden)}
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    for name, store in stores.items():
        flat, _ = store.snapshot()
        save_checkpoint(os.path.join(directory, f"{name}.bin"),
                        flat_views(flat, store.shapes))


def load_policy(directory: str, params: SimParams):
    """Policy function from a saved checkpoint, evaluated as its own decision
    rule: A3C/A3CL sample the actor's distribution (the trained object is the
    stochastic policy), DQN takes argmax of Q (the greedy policy)."""
    meta_path = os.path.join(directory, "meta.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"missing checkpoint: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    hidden = tuple(meta["hidden"])
    obs_dim = int(meta["obs_dim"])
    obs_mode = "reduced" if meta["kind"] == "A3CL" else "full"
    featurizer = Featurizer(params, obs_mode)
    if meta["kind"] in ("A3C", "A3CL"):
        arrays = load_checkpoint(os.path.join(directory, "actor.bin"))
        net = MLP(NetworkSpec(obs_dim, hidden, "policy"),
                  flat=np.concatenate([a.ravel() for a in arrays]))

        def policy(obs: np.ndarray, rng: np.random.Generator) -> int:
            probs, _ = net.forward(featurizer(obs)[None, :])
            return int(rng.choice(3, p=probs[0]))
    elif meta["kind"] == "DQN":
        arrays = load_checkpoint(os.path.join(directory, "q.bin"))
        net = MLP(NetworkSpec(obs_dim, hidden, "q"),
                  flat=np.concatenate([a.ravel() for a in arrays]))

        def policy(obs: np.ndarray, rng: np.random.Generator) -> int:
            q, _ = net.forward(featurizer(obs)[None, :])
            return int(np.argmax(q[0]))
    else:
        raise ValidationError(f"unknown checkpoint kind {meta['kind']!r}")

    return policy, obs_mode
