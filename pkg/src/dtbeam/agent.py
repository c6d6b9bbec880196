"""DDPG learner for joint BS selection, beam steering and DT ratio control.

Actor layout: a shared feature extractor feeds one softmax BS head per UE;
each UE's angle head sees ``[features, its BS scores]``; the optional ratio
head sees every UE's BS scores and noised angles and emits one value per BS.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nncore
from .antenna import RATIO_DB_RANGE
from .env import PHI_RANGE, THETA_RANGE, ActionSet, BeamAlignmentEnv, EnvConfig
from .nncore import DenseNet, TrainingDivergedError

RATIO_MODES = ("learned", "fixed", "none")

# r = R0 * (a + p) / q maps a in [-1, 1] onto [8, 40] dB
RATIO_SCALE_DB = 40.0
RATIO_OFFSET = 1.5
RATIO_DIVISOR = 2.5


@dataclass
class AgentConfig:
    hidden: int = 128
    n_hidden: int = 2
    critic_hidden: int = 128
    ratio_mode: str = "learned"  # "learned", "fixed" (constant r) or "none" (uniform taper)
    fixed_ratio_db: float = 26.0
    gamma: float = 0.9
    tau_soft: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 50_000
    batch_size: int = 64
    sigma_angle: tuple = (0.5, 0.02)
    sigma_ratio: tuple = (0.5, 0.02)
    noise_decay_fraction: float = 0.8

    def __post_init__(self):
        if self.ratio_mode not in RATIO_MODES:
            raise ValueError(f"ratio_mode must be one of {RATIO_MODES}, got {self.ratio_mode!r}")
        if not 0.0 < self.tau_soft <= 1.0:
            raise ValueError("tau_soft must lie in (0, 1]")


@dataclass
class NoiseSchedule:
    """Exploration std decaying linearly from ``start`` to ``end``."""

    start: float
    end: float
    decay_steps: int

    def __call__(self, t: int) -> float:
        if self.decay_steps <= 0 or t >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * (t / self.decay_steps)


# --- networks ---------------------------------------------------------------

@dataclass
class ActorNet:
    fe: DenseNet
    bs_heads: list
    angle_heads: list
    ratio_head: Optional[DenseNet]

    @classmethod
    def build(cls, n_ue: int, n_bs: int, cfg: AgentConfig, rng: np.random.Generator):
        obs_dim = n_ue * (n_bs + 1)
        sizes = [obs_dim] + [cfg.hidden] * cfg.n_hidden
        fe = DenseNet.build(sizes, ["relu"] * cfg.n_hidden, rng)
        bs_heads = [DenseNet.build([cfg.hidden, n_bs], ["softmax"], rng) for _ in range(n_ue)]
        angle_heads = [DenseNet.build([cfg.hidden + n_bs, 2], ["tanh"], rng) for _ in range(n_ue)]
        ratio_head = None
        if cfg.ratio_mode == "learned":
            ratio_head = DenseNet.build([n_ue * n_bs + 2 * n_ue, n_bs], ["tanh"], rng)
        return cls(fe, bs_heads, angle_heads, ratio_head)

    @property
    def n_ue(self) -> int:
        return len(self.bs_heads)

    @property
    def n_bs(self) -> int:
        return self.bs_heads[0].n_out

    @property
    def nets(self) -> list:
        nets = [self.fe, *self.bs_heads, *self.angle_heads]
        if self.ratio_head is not None:
            nets.append(self.ratio_head)
        return nets

    @property
    def params(self) -> list:
        return [p for net in self.nets for p in net.params]

    def copy(self) -> "ActorNet":
        return ActorNet(self.fe.copy(), [h.copy() for h in self.bs_heads],
                        [h.copy() for h in self.angle_heads],
                        None if self.ratio_head is None else self.ratio_head.copy())


@dataclass
class ActorOutput:
    bs: np.ndarray  # (B, N_UE, N_BS) softmax scores
    angles: np.ndarray  # (B, N_UE, 2) tanh outputs
    angles_tilde: np.ndarray  # (B, N_UE, 2) clamped noised angles
    ratio: Optional[np.ndarray]  # (B, N_BS) tanh outputs, None without ratio head
    tapes: dict = field(default_factory=dict, repr=False)


def actor_forward(actor: ActorNet, s, angle_noise=None, record: bool = False) -> ActorOutput:
    """Evaluate every actor head on a batch of observations ``(B, obs_dim)``."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n_ue, n_bs = actor.n_ue, actor.n_bs
    if s.shape[1] != n_ue * (n_bs + 1):
        raise ValueError(f"observation width {s.shape[1]} != {n_ue * (n_bs + 1)}")
    batch = s.shape[0]
    fe_tape = nncore.record(actor.fe, s)
    x = fe_tape.output
    bs = np.empty((batch, n_ue, n_bs))
    angles = np.empty((batch, n_ue, 2))
    bs_tapes, angle_tapes = [], []
    for i in range(n_ue):
        t_bs = nncore.record(actor.bs_heads[i], x)
        bs[:, i] = t_bs.output
        t_ang = nncore.record(actor.angle_heads[i], np.concatenate([x, bs[:, i]], axis=1))
        angles[:, i] = t_ang.output
        bs_tapes.append(t_bs)
        angle_tapes.append(t_ang)
    noisy = angles if angle_noise is None else angles + np.reshape(angle_noise, angles.shape)
    angles_tilde = np.clip(noisy, -1.0, 1.0)
    ratio = None
    ratio_tape = None
    if actor.ratio_head is not None:
        z = np.concatenate([bs.reshape(batch, -1), angles_tilde.reshape(batch, -1)], axis=1)
        ratio_tape = nncore.record(actor.ratio_head, z)
        ratio = ratio_tape.output
    tapes = {}
    if record:
        tapes = dict(fe=fe_tape, bs=bs_tapes, angle=angle_tapes, ratio=ratio_tape,
                     angle_pass=(noisy > -1.0) & (noisy < 1.0))
    return ActorOutput(bs, angles, angles_tilde, ratio, tapes)


def actor_backward(actor: ActorNet, out: ActorOutput, g_bs, g_angles, g_ratio=None):
    """Parameter gradients given upstream gradients on the three outputs."""
    tapes = out.tapes
    if not tapes:
        raise ValueError("actor_forward must be called with record=True before backward")
    batch, n_ue, n_bs = out.bs.shape
    g_bs = np.array(g_bs, dtype=float, copy=True)
    g_angles_tilde = np.array(g_angles, dtype=float, copy=True)
    ratio_grads = []
    if actor.ratio_head is not None:
        if g_ratio is None:
            g_ratio = np.zeros((batch, n_bs))
        ratio_grads, g_z = nncore.backward(tapes["ratio"], grad_output=g_ratio)
        g_bs += g_z[:, : n_ue * n_bs].reshape(batch, n_ue, n_bs)
        g_angles_tilde += g_z[:, n_ue * n_bs:].reshape(batch, n_ue, 2)
    g_angles_raw = g_angles_tilde * tapes["angle_pass"]
    hidden = actor.fe.n_out
    g_x = np.zeros((batch, hidden))
    angle_grads, bs_grads = [], []
    for i in range(n_ue):
        grads, g_y = nncore.backward(tapes["angle"][i], grad_output=g_angles_raw[:, i])
        angle_grads.append(grads)
        g_x += g_y[:, :hidden]
        g_bs[:, i] += g_y[:, hidden:]
    for i in range(n_ue):
        grads, g_in = nncore.backward(tapes["bs"][i], grad_output=g_bs[:, i])
        bs_grads.append(grads)
        g_x += g_in
    fe_grads, _ = nncore.backward(tapes["fe"], grad_output=g_x)
    flat = list(fe_grads)
    for grads in bs_grads + angle_grads:
        flat.extend(grads)
    flat.extend(ratio_grads)
    return flat


def build_critic(obs_dim: int, action_dim: int, cfg: AgentConfig, rng) -> DenseNet:
    h = cfg.critic_hidden
    return DenseNet.build([obs_dim + action_dim, h, h, 1], ["relu", "relu", "identity"], rng)


def critic_forward(critic: DenseNet, s, action_encoding) -> np.ndarray:
    """Q values, shape ``(B,)``."""
    x = np.concatenate([np.atleast_2d(s), np.atleast_2d(action_encoding)], axis=1)
    return nncore.forward(critic, x)[:, 0]


# --- action decoding ------------------------------------------------------------

def decode_angles(a_tilde):
    """Map clamped tanh outputs to (theta, phi) in radians."""
    a = np.clip(np.asarray(a_tilde, dtype=float), -1.0, 1.0)
    theta = np.clip(3.0 * np.pi / 4.0 + a[..., 0] * np.pi / 4.0, *THETA_RANGE)
    phi = np.clip(a[..., 1] * np.pi / 2.0, *PHI_RANGE)
    return theta, phi


def decode_ratio(a_r_tilde):
    a = np.clip(np.asarray(a_r_tilde, dtype=float), -1.0, 1.0)
    r = RATIO_SCALE_DB * (a + RATIO_OFFSET) / RATIO_DIVISOR
    return np.clip(r, *RATIO_DB_RANGE)


def encode_action(out: ActorOutput, ratio_tilde=None) -> np.ndarray:
    """Critic-side action vector: BS scores, noised angles, noised ratio head."""
    batch = out.bs.shape[0]
    parts = [out.bs.reshape(batch, -1), out.angles_tilde.reshape(batch, -1)]
    if out.ratio is not None:
        parts.append(out.ratio if ratio_tilde is None else ratio_tilde)
    return np.concatenate(parts, axis=1)


def decode_action(out: ActorOutput, ratio_noise=None, ratio_mode: str = "learned",
                  fixed_ratio_db: float = 26.0, index: int = 0):
    """Physical action for batch row ``index`` plus its critic encoding.

    The BS is the highest softmax score (ties to the lowest index); the BS
    head carries no exploration noise.
    """
    bs = np.argmax(out.bs[index], axis=1)
    theta, phi = decode_angles(out.angles_tilde[index])
    ratio_db = None
    ratio_tilde = None
    if ratio_mode == "learned":
        if out.ratio is None:
            raise ValueError("learned ratio mode needs an actor with a ratio head")
        a_r = out.ratio[index]
        if ratio_noise is not None:
            a_r = a_r + ratio_noise
        a_r = np.clip(a_r, -1.0, 1.0)
        ratio_tilde = a_r[None, :]
        ratio_db = decode_ratio(a_r)
    elif ratio_mode == "fixed":
        ratio_db = np.full(out.bs.shape[2], float(fixed_ratio_db))
    enc = encode_action(ActorOutput(out.bs[index:index + 1], out.angles[index:index + 1],
                                    out.angles_tilde[index:index + 1],
                                    None if out.ratio is None else out.ratio[index:index + 1]),
                        ratio_tilde)[0]
    return ActionSet(bs, theta, phi, ratio_db), enc


# --- replay buffer ------------------------------------------------------------------

class BufferNotReady(RuntimeError):
    """Fewer stored experiences than the requested batch."""


class ReplayBuffer:
    """Bounded FIFO of (s, a, r, s') stored in preallocated ring arrays."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data = None
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def ready(self, n: int) -> bool:
        return self._size >= n

    def push(self, s, a, r, s_next) -> None:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        s_next = np.asarray(s_next, dtype=float)
        if self._data is None:
            c = self.capacity
            self._data = dict(s=np.empty((c,) + s.shape), a=np.empty((c,) + a.shape),
                              r=np.empty(c), s_next=np.empty((c,) + s_next.shape))
        d = self._data
        k = self._next
        d["s"][k], d["a"][k], d["r"][k], d["s_next"][k] = s, a, r, s_next
        self._next = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        start = (self._next - self._size) % self.capacity
        return (start + np.arange(self._size)) % self.capacity

    def contents(self) -> dict:
        """Stored experiences, oldest first."""
        if self._data is None:
            return dict(s=np.empty(0), a=np.empty(0), r=np.empty(0), s_next=np.empty(0))
        idx = self._order()
        return {k: v[idx] for k, v in self._data.items()}

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        if self._size < n:
            raise BufferNotReady(f"buffer holds {self._size} experiences, batch needs {n}")
        idx = self._order()[rng.choice(self._size, size=n, replace=False)]
        return {k: v[idx] for k, v in self._data.items()}


# --- learner --------------------------------------------------------------------------

class DDPGAgent:
    def __init__(self, env_config: EnvConfig, cfg: AgentConfig, seed_seq: np.random.SeedSequence,
                 total_steps: int = 1):
        self.cfg = cfg
        self.n_ue, self.n_bs = env_config.n_ue, env_config.n_bs
        self.obs_dim = env_config.obs_dim
        init_ss, explore_ss, replay_ss = seed_seq.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.actor = ActorNet.build(self.n_ue, self.n_bs, cfg, init_rng)
        self.action_dim = self.n_ue * self.n_bs + 2 * self.n_ue
        if cfg.ratio_mode == "learned":
            self.action_dim += self.n_bs
        self.critic = build_critic(self.obs_dim, self.action_dim, cfg, init_rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        # one contiguous buffer per network group keeps Adam and blending vectorised
        self.actor_flat = nncore.pack(self.actor.nets)
        self.critic_flat = nncore.pack([self.critic])
        self.actor_target_flat = nncore.pack(self.actor_target.nets)
        self.critic_target_flat = nncore.pack([self.critic_target])
        self.actor_opt = nncore.adam([self.actor_flat], lr=cfg.actor_lr)
        self.critic_opt = nncore.adam([self.critic_flat], lr=cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        decay = int(cfg.noise_decay_fraction * total_steps)
        self.sigma_angle = NoiseSchedule(*cfg.sigma_angle, decay)
        self.sigma_ratio = NoiseSchedule(*cfg.sigma_ratio, decay)
        self.t = 0

    def act(self, obs, explore: bool = True):
        angle_noise = None
        ratio_noise = None
        if explore:
            angle_noise = self.explore_rng.normal(0.0, self.sigma_angle(self.t), (self.n_ue, 2))
            if self.cfg.ratio_mode == "learned":
                ratio_noise = self.explore_rng.normal(0.0, self.sigma_ratio(self.t), self.n_bs)
        out = actor_forward(self.actor, obs, angle_noise)
        return decode_action(out, ratio_noise, self.cfg.ratio_mode, self.cfg.fixed_ratio_db)

    def update(self):
        """One DDPG update from a replay sample; ``None`` if the buffer is short."""
        if not self.buffer.ready(self.cfg.batch_size):
            return None
        batch = self.buffer.sample(self.cfg.batch_size, self.replay_rng)
        return train_step(self, batch)


def train_step(agent: DDPGAgent, batch: dict) -> dict:
    """Critic regression on the Bellman target, actor ascent on Q, target blending."""
    cfg = agent.cfg
    s, a, r, s2 = batch["s"], batch["a"], batch["r"], batch["s_next"]
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    out2 = actor_forward(agent.actor_target, s2)
    q_next = critic_forward(agent.critic_target, s2, encode_action(out2))
    target = r + cfg.gamma * q_next

    tape = nncore.record(agent.critic, np.concatenate([s, a], axis=1))
    q = tape.output[:, 0]
    err = q - target
    msbe = float(np.mean(err**2))
    if not np.isfinite(msbe):
        raise TrainingDivergedError(f"critic loss became {msbe} at update {agent.critic_opt.step + 1}")
    grads, _ = nncore.backward(tape, grad_output=(2.0 / n) * err[:, None])
    nncore.adam_step([agent.critic_flat], [nncore.flatten(grads)], agent.critic_opt)

    out = actor_forward(agent.actor, s, record=True)
    enc = encode_action(out)
    ctape = nncore.record(agent.critic, np.concatenate([s, enc], axis=1))
    objective = float(np.mean(ctape.output))
    _, g_in = nncore.backward(ctape, grad_output=np.full((n, 1), -1.0 / n))
    g_enc = g_in[:, agent.obs_dim:]
    k_bs = agent.n_ue * agent.n_bs
    g_bs = g_enc[:, :k_bs].reshape(n, agent.n_ue, agent.n_bs)
    g_ang = g_enc[:, k_bs:k_bs + 2 * agent.n_ue].reshape(n, agent.n_ue, 2)
    g_ratio = g_enc[:, k_bs + 2 * agent.n_ue:] if out.ratio is not None else None
    actor_grads = actor_backward(agent.actor, out, g_bs, g_ang, g_ratio)
    nncore.adam_step([agent.actor_flat], [nncore.flatten(actor_grads)], agent.actor_opt)

    nncore.soft_update([agent.critic_target_flat], [agent.critic_flat], cfg.tau_soft)
    nncore.soft_update([agent.actor_target_flat], [agent.actor_flat], cfg.tau_soft)
    return dict(msbe=msbe, actor_objective=objective)


# --- training loop -------------------------------------------------------------------

@dataclass
class TrainingResult:
    agent: Optional[DDPGAgent]
    rewards: np.ndarray  # (episodes, steps)
    diagnostics: list = field(default_factory=list)


def env_config_for(env_config: EnvConfig, ratio_mode: str, fixed_ratio_db: float) -> EnvConfig:
    """Copy of ``env_config`` whose reset-time random action uses the right taper."""
    from dataclasses import replace
    taper = {"learned": "learned", "fixed": "fixed", "none": "uniform"}[ratio_mode]
    return replace(env_config, taper=taper, fixed_ratio_db=fixed_ratio_db)


def _streams(seed: int):
    root = np.random.SeedSequence(seed)
    env_ss, agent_ss = root.spawn(2)
    return np.random.default_rng(env_ss), agent_ss


def run_training(env_config: EnvConfig, cfg: AgentConfig, episodes: int, steps: int,
                 seed: int, progress=None) -> TrainingResult:
    """Train from scratch: reset with a random action each episode, then act,
    step, store, sample and update every time step."""
    env_config = env_config_for(env_config, cfg.ratio_mode, cfg.fixed_ratio_db)
    env_rng, agent_ss = _streams(seed)
    env = BeamAlignmentEnv(env_config)
    agent = DDPGAgent(env_config, cfg, agent_ss, total_steps=episodes * steps)
    rewards = np.zeros((episodes, steps))
    diagnostics = []
    for ep in range(episodes):
        obs = env.reset(env_rng)
        for t in range(steps):
            action, enc = agent.act(obs, explore=True)
            obs_next, reward = env.step(action)
            agent.buffer.push(obs, enc, reward, obs_next)
            diag = agent.update()
            if diag is not None and t == steps - 1:
                diagnostics.append(dict(episode=ep, **diag))
            rewards[ep, t] = reward
            obs = obs_next
            agent.t += 1
        if progress is not None:
            progress(ep, rewards[ep])
    return TrainingResult(agent, rewards, diagnostics)


def run_policy(env_config: EnvConfig, policy: str, episodes: int, steps: int, seed: int,
               agent: Optional[DDPGAgent] = None, ratio_mode: str = "none",
               fixed_ratio_db: float = 26.0, on_step=None) -> np.ndarray:
    """Rewards of a non-learning policy: ``oracle``, ``random`` or a frozen ``agent``.

    The environment stream is derived from ``seed`` exactly as in
    :func:`run_training`, so equal seeds give equal UE trajectories.
    ``on_step(episode, t, ue_positions, sinrs)``, if given, sees the UE
    positions an action was evaluated at and the SINRs it produced.
    """
    if policy == "agent":
        if agent is None:
            raise ValueError("policy='agent' needs a trained agent")
        ratio_mode, fixed_ratio_db = agent.cfg.ratio_mode, agent.cfg.fixed_ratio_db
    env_config = env_config_for(env_config, ratio_mode, fixed_ratio_db)
    env_rng, agent_ss = _streams(seed)
    policy_rng = np.random.default_rng(agent_ss.spawn(1)[0])
    env = BeamAlignmentEnv(env_config)
    rewards = np.zeros((episodes, steps))
    for ep in range(episodes):
        obs = env.reset(env_rng)
        for t in range(steps):
            if policy == "oracle":
                action = env.oracle_action()
            elif policy == "random":
                action = env.random_action(policy_rng)
            elif policy == "agent":
                action, _ = agent.act(obs, explore=False)
            else:
                raise ValueError(f"unknown policy {policy!r}")
            if on_step is not None:
                positions = env.ue_positions()
            obs, rewards[ep, t] = env.step(action)
            if on_step is not None:
                on_step(ep, t, positions, env.sinrs)
    return rewards
