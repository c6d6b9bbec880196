"""Multi-BS downlink environment on a four-junction street grid.

State evolves by a reflected random walk of the UEs along the streets; each
step the agent picks a serving BS and steering angles per UE (and optionally
a DT voltage ratio per BS) and is rewarded with the mean spectral efficiency.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .antenna import RATIO_DB_RANGE, ArrayGeometry, dt_coefficients
from .channel import (LinkBudget, PropagationParams, dbm_to_watts, rssi_db,
                      sample_channels, sinr_all, steering_matrix, sum_rate)

THETA_RANGE = (np.pi / 2, np.pi)
PHI_RANGE = (-np.pi / 2, np.pi / 2)

# Ten BS sites on a 300 m x 300 m map: four junction corners first, then
# block midpoints, so a prefix of length N_BS stays spread out.
DEFAULT_BS_SITES = (
    (93.0, 93.0), (207.0, 207.0), (207.0, 93.0), (93.0, 207.0),
    (150.0, 93.0), (150.0, 207.0), (93.0, 150.0), (207.0, 150.0),
    (50.0, 107.0), (250.0, 193.0),
)


class InvalidActionError(ValueError):
    pass


@dataclass
class StreetGraph:
    """Axis-aligned street segments and their crossings."""

    starts: np.ndarray  # (S, 2) xy of each street's origin
    axes: np.ndarray  # (S,) 0 = along x, 1 = along y
    lengths: np.ndarray  # (S,)
    width: float = 10.0
    junc_street: np.ndarray = field(init=False)
    junc_s: np.ndarray = field(init=False)
    junc_other: np.ndarray = field(init=False)
    junc_other_s: np.ndarray = field(init=False)

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=float).reshape(-1, 2)
        self.axes = np.asarray(self.axes, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=float)
        rows = []
        for a in range(len(self.axes)):
            for b in range(len(self.axes)):
                if a == b or self.axes[a] == self.axes[b]:
                    continue
                # a runs along axis ax; b crosses it at b's fixed coordinate
                ax = self.axes[a]
                s_a = self.starts[b, ax] - self.starts[a, ax]
                s_b = self.starts[a, 1 - ax] - self.starts[b, 1 - ax]
                if 0.0 <= s_a <= self.lengths[a] and 0.0 <= s_b <= self.lengths[b]:
                    rows.append((a, s_a, b, s_b))
        rows = np.array(rows, dtype=float).reshape(-1, 4)
        self.junc_street = rows[:, 0].astype(np.int64)
        self.junc_s = np.ascontiguousarray(rows[:, 1])
        self.junc_other = rows[:, 2].astype(np.int64)
        self.junc_other_s = np.ascontiguousarray(rows[:, 3])

    @classmethod
    def four_junction(cls, size: float = 300.0, spacing: float = 100.0,
                      width: float = 10.0) -> "StreetGraph":
        a, b = spacing, size - spacing
        starts = [(0.0, a), (0.0, b), (a, 0.0), (b, 0.0)]
        return cls(starts, [0, 0, 1, 1], [size] * 4, width)

    @property
    def n_junctions(self) -> int:
        return len(self.junc_street) // 2

    def xy(self, street, s, lateral):
        street = np.asarray(street)
        ax = self.axes[street]
        xy = self.starts[street].copy()
        along = np.stack([ax == 0, ax == 1], axis=-1).astype(float)
        perp = along[..., ::-1]
        xy += along * np.asarray(s)[..., None] + perp * np.asarray(lateral)[..., None]
        return xy


@dataclass
class MobilityState:
    street: np.ndarray  # int64
    s: np.ndarray  # distance along street
    heading: np.ndarray  # int64, +1 / -1
    lateral: np.ndarray  # fixed offset from the centre line


@dataclass(frozen=True)
class MobilityParams:
    speed: float = 1.4  # m/s
    dt: float = 0.1  # s
    jitter: float = 0.2  # m


def random_positions(graph: StreetGraph, n_ue: int, rng: np.random.Generator) -> MobilityState:
    street = rng.integers(0, len(graph.lengths), size=n_ue).astype(np.int64)
    s = rng.uniform(0.0, 1.0, size=n_ue) * graph.lengths[street]
    heading = np.where(rng.random(n_ue) < 0.5, -1, 1).astype(np.int64)
    half = 0.4 * graph.width
    lateral = rng.uniform(-half, half, size=n_ue)
    return MobilityState(street, s, heading, lateral)


def mobility_step(graph: StreetGraph, state: MobilityState, params: MobilityParams,
                  rng: np.random.Generator) -> MobilityState:
    """Advance every UE one step of the reflected street random walk."""
    n = state.street.shape[0]
    normals = rng.standard_normal(n)
    uniforms = rng.random(n)
    street, s, heading = kernels.walk_streets(
        np.ascontiguousarray(state.street, dtype=np.int64),
        np.ascontiguousarray(state.s, dtype=np.float64),
        np.ascontiguousarray(state.heading, dtype=np.int64),
        graph.lengths, graph.junc_street, graph.junc_s, graph.junc_other, graph.junc_other_s,
        float(params.speed * params.dt), float(params.jitter), normals, uniforms,
    )
    return MobilityState(street, s, heading, state.lateral)


@dataclass
class ActionSet:
    bs: np.ndarray  # (N_UE,) serving BS index
    theta: np.ndarray  # (N_UE,) elevation in [pi/2, pi]
    phi: np.ndarray  # (N_UE,) azimuth in [-pi/2, pi/2]
    ratio_db: Optional[np.ndarray] = None  # (N_BS,) DT ratio; None = uniform taper

    def validate(self, n_ue: int, n_bs: int) -> None:
        bs = np.asarray(self.bs)
        if bs.shape != (n_ue,) or np.any(bs < 0) or np.any(bs >= n_bs):
            raise InvalidActionError(f"BS indices {bs} invalid for {n_ue} UEs and {n_bs} BSs")
        th, ph = np.asarray(self.theta), np.asarray(self.phi)
        if th.shape != (n_ue,) or np.any(th < THETA_RANGE[0]) or np.any(th > THETA_RANGE[1]):
            raise InvalidActionError(f"elevation outside [pi/2, pi]: {th}")
        if ph.shape != (n_ue,) or np.any(ph < PHI_RANGE[0]) or np.any(ph > PHI_RANGE[1]):
            raise InvalidActionError(f"azimuth outside [-pi/2, pi/2]: {ph}")
        if self.ratio_db is not None:
            r = np.asarray(self.ratio_db)
            lo, hi = RATIO_DB_RANGE
            if r.shape != (n_bs,) or np.any(r < lo) or np.any(r > hi):
                raise InvalidActionError(f"voltage ratios outside [{lo}, {hi}] dB: {r}")


@dataclass
class EnvConfig:
    n_bs: int = 10
    n_ue: int = 10
    n_h: int = 8
    n_v: int = 8
    spacing: float = 0.5
    propagation: PropagationParams = field(default_factory=PropagationParams)
    budget: LinkBudget = field(default_factory=LinkBudget)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    bs_height: float = 10.0
    ue_height: float = 1.5
    map_size: float = 300.0
    street_spacing: float = 100.0
    street_width: float = 10.0
    bs_sites: Optional[tuple] = None
    # taper used by the random action at reset: "uniform", "fixed" or "learned"
    taper: str = "uniform"
    fixed_ratio_db: float = 26.0
    rssi_range_dbm: tuple = (-120.0, -40.0)
    sinr_range_db: tuple = (-20.0, 40.0)

    def __post_init__(self):
        if self.taper not in ("uniform", "fixed", "learned"):
            raise ValueError(f"unknown taper mode {self.taper!r}")
        sites = self.bs_sites or DEFAULT_BS_SITES
        if self.n_bs > len(sites):
            raise ValueError(f"only {len(sites)} BS sites available for n_bs={self.n_bs}")
        if self.ue_height >= self.bs_height:
            raise ValueError("UEs must be below the BS height")

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_h, self.n_v, self.spacing, self.propagation.wavelength)

    @property
    def obs_dim(self) -> int:
        return self.n_ue * (self.n_bs + 1)


def normalize(values, lo: float, hi: float):
    """Affine map of [lo, hi] onto [-1, 1], clipped."""
    return np.clip(2.0 * (np.asarray(values, dtype=float) - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def build_observation(rssi_dbm, sinrs, config: EnvConfig) -> np.ndarray:
    """Per UE: normalised RSSI from every BS, then the UE's normalised SINR."""
    rssi = normalize(rssi_dbm, *config.rssi_range_dbm)
    sinr_db = 10.0 * np.log10(np.maximum(np.asarray(sinrs, dtype=float), 1e-30))
    s = normalize(sinr_db, *config.sinr_range_db)
    return np.concatenate([rssi, s[:, None]], axis=1).ravel()


def codewords_for(geom: ArrayGeometry, action: ActionSet) -> np.ndarray:
    """Unit-norm beamformer per UE from its steering angles and its BS's taper."""
    ph = np.exp(1j * 2 * np.pi * geom.spacing
                * np.outer(np.sin(action.phi) * np.sin(action.theta), np.arange(geom.n_h)))
    pv = np.exp(1j * 2 * np.pi * geom.spacing
                * np.outer(np.cos(action.theta), np.arange(geom.n_v)))
    if action.ratio_db is not None:
        cache = {}
        for j in np.unique(action.bs):
            r = float(action.ratio_db[j])
            a_h = dt_coefficients(geom.n_h, r)
            a_v = a_h if geom.n_v == geom.n_h else dt_coefficients(geom.n_v, r)
            cache[j] = (a_h, a_v)
        ah = np.stack([cache[j][0] for j in action.bs])
        av = np.stack([cache[j][1] for j in action.bs])
        ph = ph * ah
        pv = pv * av
    F = (ph[:, :, None] * pv[:, None, :]).reshape(len(action.bs), -1)
    return F / np.linalg.norm(F, axis=1, keepdims=True)


class BeamAlignmentEnv:
    """Single-owner mutable environment.

    ``reset`` seeds the internal generator; ``step`` then draws mobility,
    shadowing and path gains from it, so a trajectory is a pure function of
    (config, seed, actions).
    """

    def __init__(self, config: EnvConfig, graph: Optional[StreetGraph] = None):
        self.config = config
        self.graph = graph or StreetGraph.four_junction(config.map_size, config.street_spacing,
                                                        config.street_width)
        sites = np.asarray(config.bs_sites or DEFAULT_BS_SITES, dtype=float)[: config.n_bs]
        self.bs_positions = np.column_stack([sites, np.full(config.n_bs, config.bs_height)])
        self.geometry = config.geometry
        self.bs_power = float(dbm_to_watts(config.budget.bs_power_dbm))
        self.noise_power = config.propagation.noise_power
        self.rng: Optional[np.random.Generator] = None
        self.state: Optional[MobilityState] = None
        self.channels = None
        self.link_info = None
        self.rssi = None
        self.sinrs = None
        self.t = 0

    # -- geometry -------------------------------------------------------------
    def ue_positions(self) -> np.ndarray:
        xy = self.graph.xy(self.state.street, self.state.s, self.state.lateral)
        return np.column_stack([xy, np.full(len(xy), self.config.ue_height)])

    def _resample_links(self):
        H, info = sample_channels(self.geometry, self.config.propagation, self.ue_positions(),
                                  self.bs_positions, self.rng)
        self.channels = H
        self.link_info = info
        self.rssi = rssi_db(self.config.budget, self.config.propagation, info["distance"],
                            info["shadow_db"])

    # -- MDP interface ----------------------------------------------------------
    def random_action(self, rng: Optional[np.random.Generator] = None) -> ActionSet:
        rng = rng or self.rng
        cfg = self.config
        bs = rng.integers(0, cfg.n_bs, size=cfg.n_ue)
        theta = rng.uniform(*THETA_RANGE, size=cfg.n_ue)
        phi = rng.uniform(*PHI_RANGE, size=cfg.n_ue)
        # always drawn so every taper mode consumes the generator identically
        ratio = rng.uniform(*RATIO_DB_RANGE, size=cfg.n_bs)
        if cfg.taper == "uniform":
            ratio = None
        elif cfg.taper == "fixed":
            ratio = np.full(cfg.n_bs, cfg.fixed_ratio_db)
        return ActionSet(bs, theta, phi, ratio)

    def reset(self, rng: np.random.Generator, initial_action: Optional[ActionSet] = None):
        self.rng = rng
        self.t = 0
        self.state = random_positions(self.graph, self.config.n_ue, rng)
        self._resample_links()
        action = initial_action or self.random_action()
        self.sinrs = self.evaluate(action)
        return self.observe()

    def evaluate(self, action: ActionSet) -> np.ndarray:
        """SINRs the action would produce on the current channels."""
        action.validate(self.config.n_ue, self.config.n_bs)
        F = codewords_for(self.geometry, action)
        return sinr_all(self.channels, action.bs, F, self.bs_power, self.noise_power)

    def observe(self) -> np.ndarray:
        return build_observation(self.rssi, self.sinrs, self.config)

    def step(self, action: ActionSet, rng: Optional[np.random.Generator] = None):
        if rng is not None:
            self.rng = rng
        self.sinrs = self.evaluate(action)
        reward = sum_rate(self.sinrs)
        self.state = mobility_step(self.graph, self.state, self.config.mobility, self.rng)
        self._resample_links()
        self.t += 1
        return self.observe(), reward

    # -- full-knowledge baseline ------------------------------------------------
    def oracle_action(self) -> ActionSet:
        """Exact LOS steering toward the BS with the strongest beamformed link."""
        info = self.link_info
        a = steering_matrix(self.geometry, info["phi"], info["theta"])  # (UE, BS, N_t)
        power = self.bs_power * np.abs(np.einsum("ijn,ijn->ij", self.channels, a)) ** 2
        bs = np.argmax(power, axis=1)
        idx = np.arange(self.config.n_ue)
        theta = np.clip(info["theta"][idx, bs], *THETA_RANGE)
        phi = np.clip(info["phi"][idx, bs], *PHI_RANGE)
        return ActionSet(bs, theta, phi, None)
