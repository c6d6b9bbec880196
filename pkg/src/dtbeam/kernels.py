"""Inner loops shared by the channel, antenna and mobility code.

Every kernel has a loop form (compiled by numba when available) and a
vectorised numpy form.  The public names dispatch on the backend chosen in
:mod:`dtbeam._accel`; both forms stay importable so tests and the benchmark
can compare them.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

__all__ = ["gain_matrix", "interference_sinr", "cos_series", "walk_streets", "dt_z0_bisect",
           "BACKEND"]


# --- effective channel gains -------------------------------------------------

@njit
def _gain_matrix_loop(H, serving, F):
    n_ue = H.shape[0]
    n_t = H.shape[2]
    G = np.empty((n_ue, n_ue))
    for i in range(n_ue):
        for k in range(n_ue):
            j = serving[k]
            acc = 0.0 + 0.0j
            for n in range(n_t):
                acc += H[i, j, n] * F[k, n]
            G[i, k] = acc.real * acc.real + acc.imag * acc.imag
    return G


def _gain_matrix_numpy(H, serving, F):
    y = np.einsum("ikn,kn->ik", H[:, serving, :], F)
    return y.real**2 + y.imag**2


# --- SINR from a gain matrix -------------------------------------------------

@njit
def _interference_sinr_loop(G, p_serving, noise_power):
    n_ue = G.shape[0]
    out = np.empty(n_ue)
    for i in range(n_ue):
        interf = 0.0
        for k in range(n_ue):
            if k != i:
                interf += p_serving[k] * G[i, k]
        out[i] = p_serving[i] * G[i, i] / (interf + noise_power)
    return out


def _interference_sinr_numpy(G, p_serving, noise_power):
    weighted = G * p_serving[None, :]
    signal = np.diag(weighted).copy()
    np.fill_diagonal(weighted, 0.0)
    return signal / (weighted.sum(axis=1) + noise_power)


# --- symmetric cosine series (linear array factor) --------------------------

@njit
def _cos_series_loop(half, u):
    out = np.empty(u.shape[0])
    for j in range(u.shape[0]):
        acc = 0.0
        for n in range(half.shape[0]):
            acc += half[n] * np.cos((2 * n + 1) * u[j])
        out[j] = acc
    return out


def _cos_series_numpy(half, u):
    return np.cos(np.outer(u, 2 * np.arange(half.shape[0]) + 1)) @ half


# --- Dolph-Tschebyscheff design point ----------------------------------------

@njit
def _cheb_scalar(m, z):
    if m == 0:
        return 1.0
    t_prev = 1.0
    t = z
    for _ in range(m - 1):
        t_next = 2.0 * z * t - t_prev
        t_prev = t
        t = t_next
    return t


@njit
def _dt_z0_bisect_loop(m, ratio, tol):
    lo = 1.0
    hi = ratio if ratio > 2.0 else 2.0
    while _cheb_scalar(m, hi) < ratio:
        lo = hi
        hi = 2.0 * hi
    # stop on a small bracket *and* a small residual: T_m is steep near its
    # largest root for high m, so a tight bracket alone can leave T_m(z) - R large
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        val = _cheb_scalar(m, mid)
        if val < ratio:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi and abs(val - ratio) <= 1e-13 * ratio:
            break
    mid = 0.5 * (lo + hi)
    if abs(_cheb_scalar(m, lo) - ratio) < abs(_cheb_scalar(m, mid) - ratio):
        mid = lo
    if abs(_cheb_scalar(m, hi) - ratio) < abs(_cheb_scalar(m, mid) - ratio):
        mid = hi
    return mid


# --- reflected random walk on a street graph --------------------------------

@njit
def _walk_streets_loop(street, s, heading, lengths, junc_street, junc_s, junc_other,
                       junc_other_s, step_mean, jitter, normals, uniforms):
    n = street.shape[0]
    new_street = street.copy()
    new_s = s.copy()
    new_heading = heading.copy()
    arm_street = np.empty(4, dtype=np.int64)
    arm_dir = np.empty(4, dtype=np.int64)
    arm_base = np.empty(4)
    for u in range(n):
        st = street[u]
        s0 = s[u]
        hd = heading[u]
        delta = hd * step_mean + jitter * normals[u]
        s1 = s0 + delta
        # nearest junction crossed on the way from s0 to s1
        best = -1
        best_gap = 1e300
        for jn in range(junc_street.shape[0]):
            if junc_street[jn] != st:
                continue
            js = junc_s[jn]
            crossed = (delta > 0.0 and s0 < js <= s1) or (delta < 0.0 and s1 <= js < s0)
            if crossed and abs(js - s0) < best_gap:
                best_gap = abs(js - s0)
                best = jn
        if best >= 0:
            move = 1 if delta > 0.0 else -1
            js = junc_s[best]
            other = junc_other[best]
            ojs = junc_other_s[best]
            n_arms = 0
            if move == 1 and js < lengths[st]:
                arm_street[n_arms] = st
                arm_dir[n_arms] = 1
                arm_base[n_arms] = js
                n_arms += 1
            if move == -1 and js > 0.0:
                arm_street[n_arms] = st
                arm_dir[n_arms] = -1
                arm_base[n_arms] = js
                n_arms += 1
            if ojs < lengths[other]:
                arm_street[n_arms] = other
                arm_dir[n_arms] = 1
                arm_base[n_arms] = ojs
                n_arms += 1
            if ojs > 0.0:
                arm_street[n_arms] = other
                arm_dir[n_arms] = -1
                arm_base[n_arms] = ojs
                n_arms += 1
            pick = int(uniforms[u] * n_arms)
            if pick >= n_arms:
                pick = n_arms - 1
            remaining = abs(s1 - js)
            st = arm_street[pick]
            s1 = arm_base[pick] + arm_dir[pick] * remaining
            hd = arm_dir[pick] if move == hd else -arm_dir[pick]
        length = lengths[st]
        if s1 < 0.0:
            s1 = -s1
            hd = 1
        elif s1 > length:
            s1 = 2.0 * length - s1
            hd = -1
        if s1 < 0.0:
            s1 = 0.0
        elif s1 > length:
            s1 = length
        new_street[u] = st
        new_s[u] = s1
        new_heading[u] = hd
    return new_street, new_s, new_heading


def _walk_streets_numpy(street, s, heading, lengths, junc_street, junc_s, junc_other,
                        junc_other_s, step_mean, jitter, normals, uniforms):
    street = street.copy()
    s = s.astype(np.float64).copy()
    heading = heading.copy()
    delta = heading * step_mean + jitter * normals
    s1 = s + delta
    # crossing test for every (UE, junction) pair at once
    on_street = junc_street[None, :] == street[:, None]
    fwd = (delta[:, None] > 0) & (s[:, None] < junc_s[None, :]) & (junc_s[None, :] <= s1[:, None])
    bwd = (delta[:, None] < 0) & (s1[:, None] <= junc_s[None, :]) & (junc_s[None, :] < s[:, None])
    crossed = on_street & (fwd | bwd)
    gap = np.where(crossed, np.abs(junc_s[None, :] - s[:, None]), np.inf)
    for u in np.flatnonzero(crossed.any(axis=1)):
        jn = int(np.argmin(gap[u]))
        st = street[u]
        move = 1 if delta[u] > 0 else -1
        js, other, ojs = junc_s[jn], junc_other[jn], junc_other_s[jn]
        arms = []
        if move == 1 and js < lengths[st]:
            arms.append((st, 1, js))
        if move == -1 and js > 0.0:
            arms.append((st, -1, js))
        if ojs < lengths[other]:
            arms.append((other, 1, ojs))
        if ojs > 0.0:
            arms.append((other, -1, ojs))
        pick = min(int(uniforms[u] * len(arms)), len(arms) - 1)
        a_street, a_dir, a_base = arms[pick]
        remaining = abs(s1[u] - js)
        s1[u] = a_base + a_dir * remaining
        heading[u] = a_dir if move == heading[u] else -a_dir
        street[u] = a_street
    lengths_u = lengths[street]
    low = s1 < 0.0
    high = s1 > lengths_u
    s1 = np.where(low, -s1, np.where(high, 2.0 * lengths_u - s1, s1))
    heading = np.where(low, 1, np.where(high, -1, heading)).astype(heading.dtype)
    s1 = np.clip(s1, 0.0, lengths_u)
    return street, s1, heading


if HAVE_NUMBA:
    gain_matrix = _gain_matrix_loop
    interference_sinr = _interference_sinr_loop
    cos_series = _cos_series_loop
    walk_streets = _walk_streets_loop
    dt_z0_bisect = _dt_z0_bisect_loop
    BACKEND = "numba"
else:
    gain_matrix = _gain_matrix_numpy
    interference_sinr = _interference_sinr_numpy
    cos_series = _cos_series_numpy
    walk_streets = _walk_streets_numpy
    # scalar bisection; plain Python floats beat numpy here
    dt_z0_bisect = _dt_z0_bisect_loop
    BACKEND = "numpy"
