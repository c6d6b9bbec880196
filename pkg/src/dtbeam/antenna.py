"""Uniform and Dolph-Tschebyscheff planar arrays.

Geometry convention: the array lies in the yz-plane, element ``(m, n)`` sits
at ``y = m*d``, ``z = n*d``.  Elevation ``theta`` is measured from +z and
azimuth ``phi`` from +x.  Flattened vectors use ``index = m*n_v + n``, i.e.
``kron(horizontal, vertical)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels

RATIO_DB_RANGE = (8.0, 40.0)
PATTERN_SCHEMA = "dtbeam.pattern/1"


class UnsupportedGeometryError(ValueError):
    """The requested element count has no symmetric DT construction."""


@dataclass(frozen=True)
class ArrayGeometry:
    n_h: int
    n_v: int
    spacing: float = 0.5  # in wavelengths
    wavelength: float = 2.998e8 / 28e9  # metres

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ValueError("element counts must be positive")
        if self.spacing <= 0:
            raise ValueError("element spacing must be positive")

    @property
    def n_elements(self) -> int:
        return self.n_h * self.n_v


@dataclass(frozen=True)
class TaperSpec:
    kind: str = "uniform"  # "uniform" or "dolph_tschebyscheff"
    ratio_db: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "dolph_tschebyscheff"):
            raise ValueError(f"unknown taper kind {self.kind!r}")
        if self.kind == "dolph_tschebyscheff":
            if self.ratio_db is None:
                raise ValueError("a Dolph-Tschebyscheff taper needs ratio_db")
            lo, hi = RATIO_DB_RANGE
            if not lo <= self.ratio_db <= hi:
                raise ValueError(f"ratio_db={self.ratio_db} outside [{lo}, {hi}] dB")

    @classmethod
    def dolph(cls, ratio_db: float) -> "TaperSpec":
        return cls("dolph_tschebyscheff", float(ratio_db))


UNIFORM = TaperSpec()


@dataclass
class BeamPattern:
    angles: np.ndarray  # radians, strictly increasing
    magnitude: np.ndarray  # |AF|, nonnegative

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.magnitude = np.abs(np.asarray(self.magnitude, dtype=float))
        if self.angles.shape != self.magnitude.shape or self.angles.ndim != 1:
            raise ValueError("angles and magnitude must be equal-length 1-D arrays")
        if np.any(np.diff(self.angles) <= 0):
            raise ValueError("angle grid must be strictly increasing")


# --- Tschebyscheff polynomials ----------------------------------------------

def tschebyscheff(m: int, z):
    """``T_m(z)`` by the three-term recursion; ``z`` may be an array."""
    if m < 0:
        raise ValueError("polynomial order must be nonnegative")
    z = np.asarray(z, dtype=float)
    t_prev, t = np.ones_like(z), z.copy()
    if m == 0:
        return t_prev if t_prev.ndim else float(t_prev)
    for _ in range(m - 1):
        t_prev, t = t, 2.0 * z * t - t_prev
    return t if t.ndim else float(t)


def _power_coeffs(m: int) -> np.ndarray:
    """Coefficients of ``T_m`` in increasing powers (exact integers)."""
    prev = np.zeros(m + 1)
    prev[0] = 1.0
    if m == 0:
        return prev
    cur = np.zeros(m + 1)
    cur[1] = 1.0
    for _ in range(m - 1):
        nxt = -prev.copy()
        nxt[1:] += 2.0 * cur[:-1]
        prev, cur = cur, nxt
    return cur


def dt_z0(n_elements: int, ratio_linear: float, tol: float = 1e-12) -> float:
    """Point ``z0 > 1`` where ``T_{n-1}(z0)`` equals the main-to-side lobe ratio."""
    if n_elements < 2:
        raise ValueError("need at least two elements")
    if ratio_linear <= 1.0:
        raise ValueError(f"voltage ratio must exceed 1, got {ratio_linear}")
    # bisection on [1, max(R, 2)], widened until it brackets; T_m is monotone for z > 1
    return float(kernels.dt_z0_bisect(n_elements - 1, float(ratio_linear), tol))


def dt_half_coefficients(n_elements: int, ratio_db: float) -> np.ndarray:
    """Excitations ``a_1..a_{N/2}`` from the array centre outward, edge = 1.

    The array factor ``sum a_n cos((2n-1)u)`` is expanded in powers of
    ``cos u = z/z0`` and matched term by term against ``T_{N-1}(z)``; the
    resulting system is triangular in the odd powers.
    """
    if n_elements < 2 or n_elements % 2:
        raise UnsupportedGeometryError(
            f"Dolph-Tschebyscheff synthesis needs an even element count >= 2, got {n_elements}"
        )
    half = n_elements // 2
    m = n_elements - 1
    z0 = dt_z0(n_elements, 10.0 ** (ratio_db / 20.0))
    # A[p, k]: coefficient of z^(2p+1) contributed by a_{k+1} cos((2k+1)u)
    A = np.zeros((half, half))
    for k in range(half):
        c = _power_coeffs(2 * k + 1)
        for p in range(k + 1):
            A[p, k] = c[2 * p + 1] / z0 ** (2 * p + 1)
    rhs = _power_coeffs(m)[1::2]
    a = solve_triangular(A, rhs, lower=False)
    return a / a[-1]


def symmetric_layout(half: np.ndarray) -> np.ndarray:
    """Place centre-outward excitations as ``[edge, ..., centre, centre, ..., edge]``."""
    half = np.asarray(half, dtype=float)
    return np.concatenate([half[::-1], half])


def dt_coefficients(n_elements: int, ratio_db: float) -> np.ndarray:
    """Full symmetric excitation vector of length ``n_elements``."""
    return symmetric_layout(dt_half_coefficients(n_elements, ratio_db))


def taper_coefficients(n_elements: int, taper: TaperSpec) -> np.ndarray:
    if taper.kind == "uniform":
        return np.ones(n_elements)
    return dt_coefficients(n_elements, taper.ratio_db)


# --- response vectors --------------------------------------------------------

def _phase_vectors(geom: ArrayGeometry, phi, theta):
    k = 2.0 * np.pi * geom.spacing
    ph = np.exp(1j * k * np.arange(geom.n_h) * np.sin(phi) * np.sin(theta))
    pv = np.exp(1j * k * np.arange(geom.n_v) * np.cos(theta))
    return ph, pv


def upa_response(geom: ArrayGeometry, phi: float, theta: float) -> np.ndarray:
    """Unit-norm uniform planar array steering vector."""
    ph, pv = _phase_vectors(geom, phi, theta)
    return np.kron(ph, pv) / np.sqrt(geom.n_elements)


def dtpa_response(geom: ArrayGeometry, taper: TaperSpec, phi: float, theta: float) -> np.ndarray:
    """Tapered planar response ``kron(a_h * phase_h, a_v * phase_v) / sqrt(N_t)``.

    Not unit norm for a DT taper; see :func:`codeword`.
    """
    ph, pv = _phase_vectors(geom, phi, theta)
    a_h = taper_coefficients(geom.n_h, taper)
    a_v = a_h if geom.n_v == geom.n_h else taper_coefficients(geom.n_v, taper)
    return np.kron(a_h * ph, a_v * pv) / np.sqrt(geom.n_elements)


def codeword(geom: ArrayGeometry, taper: TaperSpec, phi: float, theta: float) -> np.ndarray:
    f = dtpa_response(geom, taper, phi, theta)
    return f / np.linalg.norm(f)


# --- linear array factor and pattern metrics -------------------------------

def array_factor_linear(coeffs, spacing, wavelength, theta):
    """``sum_n a_n cos((2n-1)u)`` with ``u = pi*spacing/wavelength*cos(theta)``.

    ``coeffs`` is the full symmetric vector; ``spacing`` and ``wavelength``
    share a unit.  ``theta`` may be scalar or array.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size % 2:
        raise UnsupportedGeometryError("the cosine-series array factor needs an even element count")
    half = np.ascontiguousarray(coeffs[coeffs.size // 2:])
    theta_arr = np.atleast_1d(np.asarray(theta, dtype=float))
    u = np.ascontiguousarray(np.pi * spacing / wavelength * np.cos(theta_arr))
    af = kernels.cos_series(half, u)
    return af if np.ndim(theta) else float(af[0])


def linear_pattern(coeffs, spacing: float = 0.5, n_points: int = 36001) -> BeamPattern:
    """|AF| on a uniform theta grid over [0, pi] (default 0.005 deg)."""
    theta = np.linspace(0.0, np.pi, n_points)
    return BeamPattern(theta, np.abs(array_factor_linear(coeffs, spacing, 1.0, theta)))


@dataclass(frozen=True)
class PatternMetrics:
    hpbw: float  # radians
    max_sidelobe_rel_db: Optional[float]  # None when no side lobe exists


def _half_power_crossing(x, p, i_in, i_out, level):
    # linear interpolation of the crossing between an inside and an outside sample
    p_in, p_out = p[i_in], p[i_out]
    frac = (p_in - level) / (p_in - p_out)
    return x[i_in] + frac * (x[i_out] - x[i_in])


def pattern_metrics(pattern: BeamPattern) -> PatternMetrics:
    """Half-power beamwidth and highest side lobe outside the first nulls."""
    x, mag = pattern.angles, pattern.magnitude
    power = mag**2
    peak = int(np.argmax(mag))
    level = 0.5 * power[peak]
    n = mag.size

    hi = peak
    while hi + 1 < n and power[hi + 1] >= level:
        hi += 1
    lo = peak
    while lo - 1 >= 0 and power[lo - 1] >= level:
        lo -= 1
    right = x[hi] if hi + 1 >= n else _half_power_crossing(x, power, hi, hi + 1, level)
    left = x[lo] if lo == 0 else _half_power_crossing(x, power, lo, lo - 1, level)

    # walk down the main lobe to the first null on each side
    r = peak
    while r + 1 < n and mag[r + 1] <= mag[r]:
        r += 1
    l = peak
    while l - 1 >= 0 and mag[l - 1] <= mag[l]:
        l -= 1
    cand = [_local_max(mag[:l + 1]), _local_max(mag[r:])]
    cand = [c for c in cand if c is not None]
    sidelobe = float(20.0 * np.log10(max(cand) / mag[peak])) if cand else None
    return PatternMetrics(hpbw=float(right - left), max_sidelobe_rel_db=sidelobe)


def _local_max(seg: np.ndarray):
    """Largest interior or edge local maximum of a segment that starts and/or
    ends at a null; ``None`` if the segment is monotone toward its null."""
    if seg.size < 2:
        return None
    padded = np.concatenate([[-np.inf], seg, [-np.inf]])
    core = padded[1:-1]
    is_max = (core > padded[:-2]) & (core >= padded[2:]) & (core > 0)
    # the null bounding the main lobe is not a lobe
    is_max[0] &= seg[0] > seg[1]
    is_max[-1] &= seg[-1] > seg[-2]
    return float(core[is_max].max()) if is_max.any() else None


def export_pattern_csv(pattern: BeamPattern, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={PATTERN_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_rad", "af_magnitude"])
        for t, m in zip(pattern.angles, pattern.magnitude):
            w.writerow([f"{t:.10g}", f"{m:.10g}"])
