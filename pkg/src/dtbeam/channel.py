"""Line-of-sight Saleh-Valenzuela links, path loss, RSSI and SINR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .antenna import ArrayGeometry, upa_response

SPEED_OF_LIGHT = 2.998e8


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


@dataclass(frozen=True)
class PropagationParams:
    """Street-canyon close-in path-loss model plus noise floor."""

    fc: float = 28e9
    f0: float = 1e9
    exponent: float = 1.98
    freq_dependency: float = 0.0
    shadow_std_db: float = 3.1
    bandwidth: float = 5e6
    noise_figure_db: float = 10.0
    n_paths: int = 1

    def __post_init__(self):
        if self.fc <= 0 or self.f0 <= 0:
            raise ValueError("frequencies must be positive")
        if self.shadow_std_db < 0:
            raise ValueError("shadowing std must be nonnegative")
        if self.n_paths != 1:
            raise ValueError("only the single-path LOS channel is supported")

    @property
    def noise_power_dbm(self) -> float:
        return -174.0 + 10.0 * np.log10(self.bandwidth) + self.noise_figure_db

    @property
    def noise_power(self) -> float:
        """Thermal noise plus noise figure, in watts."""
        return float(dbm_to_watts(self.noise_power_dbm))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc


@dataclass(frozen=True)
class LinkBudget:
    ue_power_dbm: float = 20.0  # beacon power p_u
    ue_gain_dbi: float = 0.0  # g_tx in the RSSI equation
    bs_gain_dbi: float = 0.0  # g_rx in the RSSI equation
    bs_power_dbm: float = 30.0  # P_TX per BS


@dataclass
class ChannelRealization:
    H: np.ndarray  # complex row of length N_t
    alpha: complex
    phi: float  # departure azimuth at the BS
    theta: float  # departure elevation at the BS
    pathloss_linear: float
    shadow_db: float
    distance: float


def path_loss_db(params: PropagationParams, distance, shadow_db=0.0):
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive (UE colocated with BS)")
    fc, f0 = params.fc, params.f0
    los = 20.0 * np.log10(4.0 * np.pi * fc / SPEED_OF_LIGHT)
    slope = 10.0 * params.exponent * (1.0 + params.freq_dependency * (fc - f0) / f0)
    pl = los + slope * np.log10(d) + shadow_db
    return pl if np.ndim(pl) else float(pl)


def rssi_db(budget: LinkBudget, params: PropagationParams, distance, shadow_db=0.0):
    return (budget.ue_power_dbm + budget.ue_gain_dbi
            - path_loss_db(params, distance, shadow_db) + budget.bs_gain_dbi)


def departure_angles(bs_pos, ue_pos):
    """LOS angles of departure from BS to UE as (phi, theta).

    Azimuth is folded into [-pi/2, pi/2]: an isotropic planar array in the
    yz-plane cannot tell ``phi`` from ``pi - phi``, so the folded angle
    yields the identical response vector.
    """
    v = np.asarray(ue_pos, dtype=float) - np.asarray(bs_pos, dtype=float)
    dist = np.linalg.norm(v, axis=-1)
    theta = np.arccos(np.clip(v[..., 2] / dist, -1.0, 1.0))
    phi = np.arcsin(np.clip(np.sin(np.arctan2(v[..., 1], v[..., 0])), -1.0, 1.0))
    return phi, theta, dist


def sample_channel(geom: ArrayGeometry, params: PropagationParams, ue_pos, bs_pos,
                   rng: np.random.Generator) -> ChannelRealization:
    """One LOS link: ``H = sqrt(N_t) sqrt(PL) alpha a_t(phi, theta)^H``."""
    phi, theta, dist = departure_angles(bs_pos, ue_pos)
    if dist <= 0:
        raise ValueError("UE and BS positions coincide")
    shadow = rng.normal(0.0, params.shadow_std_db)
    alpha = (rng.normal() + 1j * rng.normal()) / np.sqrt(2.0)
    pl_lin = 10.0 ** (-path_loss_db(params, dist, shadow) / 10.0)
    a_t = upa_response(geom, float(phi), float(theta))
    H = np.sqrt(geom.n_elements / params.n_paths) * np.sqrt(pl_lin) * alpha * a_t.conj()
    return ChannelRealization(H, complex(alpha), float(phi), float(theta), float(pl_lin),
                              float(shadow), float(dist))


def steering_matrix(geom: ArrayGeometry, phi, theta) -> np.ndarray:
    """Unit-norm UPA responses for broadcast angle arrays, shape ``(..., N_t)``."""
    phi = np.asarray(phi, dtype=float)[..., None]
    theta = np.asarray(theta, dtype=float)[..., None]
    k = 2.0 * np.pi * geom.spacing
    m = np.repeat(np.arange(geom.n_h), geom.n_v)
    n = np.tile(np.arange(geom.n_v), geom.n_h)
    phase = k * (m * np.sin(phi) * np.sin(theta) + n * np.cos(theta))
    return np.exp(1j * phase) / np.sqrt(geom.n_elements)


def sample_channels(geom: ArrayGeometry, params: PropagationParams, ue_pos, bs_pos,
                    rng: np.random.Generator):
    """All (UE, BS) links at once.

    Returns ``H`` of shape ``(N_UE, N_BS, N_t)`` and a dict with per-link
    ``shadow_db``, ``distance``, ``phi``, ``theta``, ``alpha`` and
    ``pathloss_linear`` arrays of shape ``(N_UE, N_BS)``.
    """
    ue_pos = np.asarray(ue_pos, dtype=float)
    bs_pos = np.asarray(bs_pos, dtype=float)
    phi, theta, dist = departure_angles(bs_pos[None, :, :], ue_pos[:, None, :])
    shape = dist.shape
    shadow = rng.normal(0.0, params.shadow_std_db, size=shape)
    alpha = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2.0)
    pl_lin = 10.0 ** (-path_loss_db(params, dist, shadow) / 10.0)
    a_t = steering_matrix(geom, phi, theta)
    scale = np.sqrt(geom.n_elements / params.n_paths) * np.sqrt(pl_lin) * alpha
    H = scale[..., None] * a_t.conj()
    info = dict(shadow_db=shadow, distance=dist, phi=phi, theta=theta, alpha=alpha,
                pathloss_linear=pl_lin)
    return H, info


def sinr_all(channels, serving, codewords, bs_power, noise_power):
    """Per-UE SINR for every UE.

    Parameters
    ----------
    channels : complex ndarray, shape (N_UE, N_BS, N_t)
    serving : int ndarray, shape (N_UE,)
        Serving BS index of each UE.
    codewords : complex ndarray, shape (N_UE, N_t)
        Beamformer each UE's serving BS applies for that UE.
    bs_power : float or ndarray, shape (N_BS,)
        Transmit power per BS in watts.
    noise_power : float
        Noise power in watts; must be positive.
    """
    if noise_power <= 0:
        raise ValueError("noise power must be positive")
    H = np.ascontiguousarray(channels, dtype=np.complex128)
    F = np.ascontiguousarray(codewords, dtype=np.complex128)
    serving = np.ascontiguousarray(serving, dtype=np.int64)
    p = np.broadcast_to(np.asarray(bs_power, dtype=float), (H.shape[1],))
    G = kernels.gain_matrix(H, serving, F)
    return kernels.interference_sinr(G, np.ascontiguousarray(p[serving]), float(noise_power))


def sinr(i, serving, codewords, channels, bs_power, noise_power) -> float:
    return float(sinr_all(channels, serving, codewords, bs_power, noise_power)[i])


def sum_rate(sinrs) -> float:
    """Mean spectral efficiency ``mean(log2(1 + sinr))`` in bits/s/Hz."""
    z = np.asarray(sinrs, dtype=float)
    if np.any(z < 0) or np.any(np.isnan(z)):
        raise ValueError("SINR values must be nonnegative")
    return float(np.mean(np.log2(1.0 + z)))
