"""Experiment runner: configure a scenario, run one method over several seeds,
write versioned CSV tables and reduce them into evolution and CDF tables.

Methods
-------
``oracle``      exact LOS steering and best-BS choice every step, no learning.
``drl_ba``      DDPG agent with a uniform planar array and no ratio head.
``dtpa_fixed``  DDPG agent, ratio head disabled, every BS at ``fixed_ratio_db``.
``ldtpa``       DDPG agent that also learns one voltage ratio per BS.

Every CSV starts with a ``# schema=...`` comment line naming its layout and
version; the column header follows.  Floats are written with 17 significant
digits so that identical runs give identical bytes.  Wall-clock timings go
to a separate JSON file for the same reason.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import AgentConfig, DDPGAgent, run_policy, run_training
from .channel import LinkBudget, PropagationParams
from .env import EnvConfig, MobilityParams

METHODS = ("oracle", "drl_ba", "dtpa_fixed", "ldtpa")
DEFAULT_FIXED_RATIO_DB = 26.0

REWARDS_SCHEMA = "dtbeam.rewards/1"
EVAL_SCHEMA = "dtbeam.eval/1"
EVOLUTION_SCHEMA = "dtbeam.evolution/1"
CDF_SCHEMA = "dtbeam.cdf/1"
TRAJECTORY_SCHEMA = "dtbeam.trajectory/1"
CHECKPOINT_FORMAT = "dtbeam.checkpoint/1"

REWARD_COLUMNS = ["run_id", "seed", "method", "episode", "step", "reward_bits_per_s_per_hz"]


class ConfigError(ValueError):
    """Invalid experiment configuration or method/field combination."""


# config key -> INI section; also fixes the order of the written snapshot
_SECTIONS = {
    "scenario": ("n_bs", "n_ue", "n_h", "n_v", "spacing", "map_size", "street_spacing",
                 "street_width", "bs_height", "ue_height"),
    "physics": ("fc", "f0", "bandwidth", "exponent", "freq_dependency", "shadow_std_db",
                "noise_figure_db", "bs_power_dbm", "ue_power_dbm", "speed", "dt", "jitter"),
    "method": ("method", "fixed_ratio_db"),
    "training": ("episodes", "steps", "seeds", "eval_episodes", "eval_steps", "gamma",
                 "tau_soft", "actor_lr", "critic_lr", "batch_size", "buffer_capacity",
                 "hidden", "sigma_start", "sigma_end", "noise_decay_fraction"),
    "output": ("output_dir", "dump_trajectory"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one method's runs.

    Defaults give the full-size scenario (10 BS, 10 UE, 10x10 arrays,
    500 episodes of 1000 steps, 4 seeds).  :data:`DESK_PROFILE` shrinks it to
    something a laptop finishes in minutes.
    """

    # scenario
    n_bs: int = 10
    n_ue: int = 10
    n_h: int = 10
    n_v: int = 10
    spacing: float = 0.5
    map_size: float = 300.0
    street_spacing: float = 100.0
    street_width: float = 10.0
    bs_height: float = 10.0
    ue_height: float = 1.5
    # physics
    fc: float = 28e9
    f0: float = 1e9
    bandwidth: float = 5e6
    exponent: float = 1.98
    freq_dependency: float = 0.0
    shadow_std_db: float = 3.1
    noise_figure_db: float = 10.0
    bs_power_dbm: float = 30.0
    ue_power_dbm: float = 20.0
    speed: float = 1.4
    dt: float = 0.1
    jitter: float = 0.2
    # method
    method: str = "ldtpa"
    fixed_ratio_db: Optional[float] = None
    # training
    episodes: int = 500
    steps: int = 1000
    seeds: tuple = (0, 1, 2, 3)
    eval_episodes: int = 10
    eval_steps: int = 1000
    gamma: float = 0.9
    tau_soft: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 50_000
    hidden: int = 128
    sigma_start: float = 0.5
    sigma_end: float = 0.02
    noise_decay_fraction: float = 0.8
    # output
    output_dir: str = "results"
    dump_trajectory: int = 0  # 1 = also write the first evaluation episode's UE track

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "dtpa_fixed":
            if self.fixed_ratio_db is None:
                object.__setattr__(self, "fixed_ratio_db", DEFAULT_FIXED_RATIO_DB)
            if not 8.0 <= self.fixed_ratio_db <= 40.0:
                raise ConfigError(f"fixed_ratio_db={self.fixed_ratio_db} outside [8, 40] dB")
        elif self.fixed_ratio_db is not None:
            raise ConfigError(f"fixed_ratio_db only applies to method dtpa_fixed, not {self.method}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("seeds must be nonempty")
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"duplicate seeds in {seeds}")
        object.__setattr__(self, "seeds", seeds)
        for name in ("n_bs", "n_ue", "n_h", "n_v", "episodes", "steps", "eval_episodes",
                     "eval_steps", "batch_size", "buffer_capacity", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        # let the domain types check the rest now rather than mid-run
        try:
            self.env_config()
            self.agent_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def learning(self) -> bool:
        return self.method != "oracle"

    @property
    def ratio_mode(self) -> str:
        return {"oracle": "none", "drl_ba": "none", "dtpa_fixed": "fixed", "ldtpa": "learned"}[
            self.method]

    def env_config(self) -> EnvConfig:
        prop = PropagationParams(fc=self.fc, f0=self.f0, exponent=self.exponent,
                                 freq_dependency=self.freq_dependency,
                                 shadow_std_db=self.shadow_std_db, bandwidth=self.bandwidth,
                                 noise_figure_db=self.noise_figure_db)
        return EnvConfig(
            n_bs=self.n_bs, n_ue=self.n_ue, n_h=self.n_h, n_v=self.n_v, spacing=self.spacing,
            propagation=prop,
            budget=LinkBudget(ue_power_dbm=self.ue_power_dbm, bs_power_dbm=self.bs_power_dbm),
            mobility=MobilityParams(speed=self.speed, dt=self.dt, jitter=self.jitter),
            bs_height=self.bs_height, ue_height=self.ue_height, map_size=self.map_size,
            street_spacing=self.street_spacing, street_width=self.street_width,
        )

    def agent_config(self, force_ratio_db: Optional[float] = None) -> AgentConfig:
        ratio_mode = self.ratio_mode
        fixed = self.fixed_ratio_db if self.fixed_ratio_db is not None else DEFAULT_FIXED_RATIO_DB
        if force_ratio_db is not None:
            # the learned head replaced by a constant is exactly the fixed-ratio agent
            ratio_mode, fixed = "fixed", float(force_ratio_db)
        sigma = (self.sigma_start, self.sigma_end)
        return AgentConfig(hidden=self.hidden, critic_hidden=self.hidden, ratio_mode=ratio_mode,
                           fixed_ratio_db=fixed, gamma=self.gamma, tau_soft=self.tau_soft,
                           actor_lr=self.actor_lr, critic_lr=self.critic_lr,
                           buffer_capacity=self.buffer_capacity, batch_size=self.batch_size,
                           sigma_angle=sigma, sigma_ratio=sigma,
                           noise_decay_fraction=self.noise_decay_fraction)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        values = asdict(self)
        for section, keys in _SECTIONS.items():
            cp[section] = {}
            for key in keys:
                val = values[key]
                if val is None:
                    continue
                if key == "seeds":
                    val = ",".join(str(s) for s in val)
                cp[section][key] = repr(val) if isinstance(val, float) else str(val)
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Short hash of everything except the output location, stored in checkpoints."""
        return hashlib.sha256(replace(self, output_dir="").to_ini().encode()).hexdigest()[:16]


DESK_PROFILE = dict(n_bs=4, n_ue=3, n_h=4, n_v=4, episodes=100, steps=200, seeds=(0, 1),
                    eval_episodes=10, eval_steps=200)

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    kind = _FIELD_TYPES[key]
    if key == "seeds":
        return parse_seeds(raw)
    if key == "fixed_ratio_db":
        return None if raw.lower() in ("", "none") else float(raw)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in str(text).split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"seeds must be comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    return seeds


def read_config_values(path) -> dict:
    """Key-value pairs from an INI file; section names are checked, unknown keys rejected."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from exc
    return values


def load_config(path=None, desk_scale: bool = False, **overrides) -> ExperimentConfig:
    """Defaults, then the file, then the desk profile, then explicit overrides."""
    values = read_config_values(path) if path is not None else {}
    if desk_scale:
        values.update(DESK_PROFILE)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if overrides.get("method") not in (None, "dtpa_fixed"):
        # switching method on the command line drops a file-level fixed ratio
        values.pop("fixed_ratio_db", None)
    return ExperimentConfig(**values)


# --- running -------------------------------------------------------------------------

@dataclass
class RunArtifacts:
    run_id: str
    method: str
    seed: int
    config: ExperimentConfig
    rewards: np.ndarray  # (episodes, steps), collected while training
    eval_rewards: np.ndarray  # (eval_episodes, eval_steps), exploration off
    wall_clock: dict = field(default_factory=dict)
    agent: Optional[DDPGAgent] = None
    trajectory: Optional[list] = None  # rows (t, ue_id, x, y, sinr_db)


def run_id_for(method: str, seed: int) -> str:
    return f"{method}-seed{seed}"


def _eval_seed(seed: int):
    # separate entropy so evaluation trajectories differ from the training ones
    return (int(seed), 1)


def run_single(config: ExperimentConfig, seed: int, force_ratio_db: Optional[float] = None,
               progress=None) -> RunArtifacts:
    """Train (or just roll out, for the oracle) one seed and evaluate it."""
    env_cfg = config.env_config()
    t0 = time.perf_counter()
    agent = None
    if config.learning:
        result = run_training(env_cfg, config.agent_config(force_ratio_db), config.episodes,
                              config.steps, seed, progress=progress)
        rewards, agent = result.rewards, result.agent
    else:
        rewards = run_policy(env_cfg, "oracle", config.episodes, config.steps, seed)
    t1 = time.perf_counter()
    track = [] if config.dump_trajectory else None

    def record(ep, t, positions, sinrs):
        if ep == 0:
            sinr_db = 10.0 * np.log10(np.maximum(sinrs, 1e-30))
            track.extend((t, u, positions[u, 0], positions[u, 1], sinr_db[u])
                         for u in range(len(sinrs)))

    policy = "agent" if agent is not None else "oracle"
    eval_rewards = run_policy(env_cfg, policy, config.eval_episodes, config.eval_steps,
                              _eval_seed(seed), agent=agent,
                              on_step=record if track is not None else None)
    t2 = time.perf_counter()
    return RunArtifacts(run_id_for(config.method, seed), config.method, int(seed), config,
                        rewards, eval_rewards,
                        wall_clock=dict(train_s=t1 - t0, eval_s=t2 - t1), agent=agent,
                        trajectory=track)


def _run_and_write(config: ExperimentConfig, seed: int, out_dir) -> RunArtifacts:
    art = run_single(config, seed)
    if out_dir is not None:
        write_artifacts(art, out_dir)
    art.agent = None  # keep worker results small
    return art


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int = 1) -> list[RunArtifacts]:
    """Run every seed of ``config``; seeds go to worker processes when ``workers > 1``.

    Each seed owns its environment and RNG streams, so the results do not
    depend on ``workers``.  Artifacts are written under ``out_dir`` (default
    ``config.output_dir``) unless ``out_dir`` is ``False``.
    """
    if out_dir is None:
        out_dir = config.output_dir
    target = None if out_dir is False else Path(out_dir)
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_and_write, config, s, target) for s in config.seeds]
            return [f.result() for f in futures]
    runs = []
    for s in config.seeds:
        art = run_single(config, s)
        if target is not None:
            write_artifacts(art, target)
        runs.append(art)
    return runs


# --- CSV output ------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_table(path, schema: str, header: list, rows, extra: str = "") -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}{extra}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _reward_rows(art: RunArtifacts, table: np.ndarray):
    for ep in range(table.shape[0]):
        for t in range(table.shape[1]):
            yield [art.run_id, art.seed, art.method, ep, t, _fmt(table[ep, t])]


def write_artifacts(art: RunArtifacts, out_dir) -> dict:
    """Write one run's tables, config snapshot, timings and checkpoint.

    Returns the written paths keyed by kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = dict(
        rewards=out / f"{art.run_id}.rewards.csv",
        eval=out / f"{art.run_id}.eval.csv",
        config=out / f"{art.run_id}.config.ini",
        meta=out / f"{art.run_id}.meta.json",
    )
    _write_table(paths["rewards"], REWARDS_SCHEMA, REWARD_COLUMNS, _reward_rows(art, art.rewards))
    _write_table(paths["eval"], EVAL_SCHEMA, REWARD_COLUMNS, _reward_rows(art, art.eval_rewards))
    paths["config"].write_text(art.config.to_ini())
    paths["meta"].write_text(json.dumps(dict(run_id=art.run_id, seed=art.seed,
                                             method=art.method, **art.wall_clock), indent=2))
    if art.trajectory is not None:
        paths["trajectory"] = out / f"{art.run_id}.trajectory.csv"
        rows = ([t, u, _fmt(x), _fmt(y), _fmt(s)] for t, u, x, y, s in art.trajectory)
        _write_table(paths["trajectory"], TRAJECTORY_SCHEMA, ["t", "ue_id", "x", "y", "sinr_db"],
                     rows)
    if art.agent is not None:
        paths["checkpoint"] = out / f"{art.run_id}.checkpoint.npz"
        save_checkpoint(art.agent, art.config, paths["checkpoint"])
    return paths


def save_checkpoint(agent: DDPGAgent, config: ExperimentConfig, path) -> None:
    np.savez(path, actor=agent.actor_flat, critic=agent.critic_flat,
             actor_target=agent.actor_target_flat, critic_target=agent.critic_target_flat,
             config_digest=np.array(config.digest()), format=np.array(CHECKPOINT_FORMAT))


def load_checkpoint(path, config: ExperimentConfig, seed: int = 0) -> DDPGAgent:
    """Rebuild a frozen agent from :func:`save_checkpoint` output."""
    data = np.load(path)
    if "format" not in data or str(data["format"]) != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if str(data["config_digest"]) != config.digest():
        raise ConfigError(f"{path} was written for a different configuration")
    agent = DDPGAgent(config.env_config(), config.agent_config(), np.random.SeedSequence(seed))
    for name in ("actor", "critic", "actor_target", "critic_target"):
        flat = getattr(agent, f"{name}_flat")
        if flat.shape != data[name].shape:
            raise ConfigError(f"{path}: {name} has {data[name].size} parameters, "
                              f"expected {flat.size}")
        flat[...] = data[name]
    return agent


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_reward_table(path) -> dict:
    """Load a rewards or eval CSV into ``run_id``, ``seed``, ``method`` and a
    ``(episodes, steps)`` array."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema=") or first.split("=", 1)[1].strip() not in (
                REWARDS_SCHEMA, EVAL_SCHEMA):
            raise ValueError(f"{path}: not a reward table (header {first.strip()!r})")
        reader = csv.DictReader(_data_lines(fh))
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no reward rows")
    ep = np.array([int(r["episode"]) for r in rows])
    st = np.array([int(r["step"]) for r in rows])
    table = np.full((ep.max() + 1, st.max() + 1), np.nan)
    table[ep, st] = [float(r["reward_bits_per_s_per_hz"]) for r in rows]
    if np.isnan(table).any():
        raise ValueError(f"{path}: missing (episode, step) rows")
    return dict(run_id=rows[0]["run_id"], seed=int(rows[0]["seed"]), method=rows[0]["method"],
                rewards=table)


# --- aggregation -------------------------------------------------------------------------

def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over full windows only: ``len(x) - window + 1`` values."""
    if window < 1:
        raise ValueError("smoothing window must be at least 1")
    if window > x.size:
        raise ValueError(f"window {window} longer than the series ({x.size} steps)")
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def aggregate_evolution(runs: dict, window: int = 1):
    """Per-step mean reward across seeds for each method, then smoothed.

    Parameters
    ----------
    runs : dict
        ``method -> list of reward arrays``; each array is flattened in
        episode-major order so that one row is one global time step.
    window : int
        Moving-average length.

    Returns
    -------
    steps : ndarray of int
        Global step index of the last sample in each window.
    table : dict
        ``method -> smoothed mean``, all the same length.
    """
    if not runs:
        raise ValueError("need at least one method")
    series = {}
    length = None
    for method, arrays in runs.items():
        if not arrays:
            raise ValueError(f"method {method!r} has no runs")
        flat = [np.asarray(a, dtype=float).ravel() for a in arrays]
        for a in flat:
            if length is None:
                length = a.size
            if a.size != length:
                raise ValueError(f"step counts differ across runs: {a.size} vs {length}")
        series[method] = moving_average(np.mean(flat, axis=0), window)
    steps = np.arange(window - 1, length)
    return steps, series


def write_evolution_csv(path, steps, table: dict, window: int) -> None:
    methods = list(table)
    rows = ([int(s)] + [_fmt(table[m][k]) for m in methods] for k, s in enumerate(steps))
    _write_table(path, EVOLUTION_SCHEMA, ["step"] + [f"mean_reward_{m}" for m in methods], rows,
                 extra=f" window={window}")


def aggregate_cdf(samples):
    """Empirical CDF: sorted distinct rates and the fraction of samples at or below each."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("cannot build a CDF from an empty sample set")
    if not np.all(np.isfinite(x)):
        raise ValueError("rate samples must be finite")
    rates, counts = np.unique(x, return_counts=True)
    frac = np.cumsum(counts) / x.size
    frac[-1] = 1.0
    return rates, frac


def write_cdf_csv(path, cdfs: dict) -> None:
    """Long format: one row per (method, rate)."""
    rows = []
    for method, (rates, frac) in cdfs.items():
        rows.extend([method, _fmt(r), _fmt(f)] for r, f in zip(rates, frac))
    _write_table(path, CDF_SCHEMA, ["method", "rate_bits_per_s_per_hz", "cumulative_fraction"],
                 rows)


def group_by_method(paths) -> dict:
    """Read reward tables and bucket their arrays by method, in path order."""
    grouped: dict = {}
    for p in paths:
        t = read_reward_table(p)
        grouped.setdefault(t["method"], []).append(t["rewards"])
    return grouped


def replace_config(config: ExperimentConfig, **changes) -> ExperimentConfig:
    if "method" in changes and changes["method"] != "dtpa_fixed" and "fixed_ratio_db" not in changes:
        changes["fixed_ratio_db"] = None
    return replace(config, **changes)


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
