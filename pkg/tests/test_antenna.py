import csv

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.signal.windows import chebwin

from dtbeam import antenna
from dtbeam.antenna import (ArrayGeometry, BeamPattern, TaperSpec, UNIFORM,
                            UnsupportedGeometryError)


def symbolic_dt_coefficients(n, r_db, digits=40):
    """Independent oracle: expand sum a_k cos((2k-1)u) in powers of cos u with
    sympy's trig expansion, substitute cos u = z/z0 and match T_{n-1}(z)."""
    half = n // 2
    z, u, c = sp.symbols("z u c")
    R = sp.Float(10, digits) ** (sp.Float(r_db, digits) / 20)
    T = sp.chebyshevt(n - 1, z)
    z0 = sp.nsolve(T - R, z, 1.1, prec=digits)
    a = sp.symbols(f"a1:{half + 1}")
    af = sum(a[k] * sp.expand_trig(sp.cos((2 * k + 1) * u)) for k in range(half))
    af = sp.expand(af.subs(sp.cos(u), c).subs(c, z / z0))
    af_poly = sp.Poly(af, z)
    t_poly = sp.Poly(T, z)
    eqs = [sp.Eq(af_poly.coeff_monomial(z**p), t_poly.coeff_monomial(z**p))
           for p in range(1, n, 2)]
    sol = sp.solve(eqs, a, dict=True)[0]
    vals = np.array([float(sol[a[k]] / sol[a[-1]]) for k in range(half)])
    return np.concatenate([vals[::-1], vals]), float(z0)


# --- Tschebyscheff polynomials ------------------------------------------------------

def test_cheb_small_cases():
    assert antenna.tschebyscheff(0, 0.37) == 1.0
    assert antenna.tschebyscheff(2, 0.5) == pytest.approx(-0.5)
    assert antenna.tschebyscheff(3, 0.5) == pytest.approx(-1.0)


@pytest.mark.parametrize("m", range(21))
def test_cheb_closed_forms(m):
    z_in = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(antenna.tschebyscheff(m, z_in), np.cos(m * np.arccos(z_in)),
                               atol=1e-9)
    z_out = np.linspace(1.0, 1.3, 31)
    ref = np.cosh(m * np.arccosh(z_out))
    np.testing.assert_allclose(antenna.tschebyscheff(m, z_out), ref, rtol=1e-9)


def test_cheb_rejects_negative_order():
    with pytest.raises(ValueError):
        antenna.tschebyscheff(-1, 0.2)


# --- design point ---------------------------------------------------------------------

def test_z0_degree_one():
    assert antenna.dt_z0(2, 5.0) == pytest.approx(5.0, rel=1e-12)


def test_z0_ten_elements():
    assert antenna.dt_z0(10, 10 ** 1.3) == pytest.approx(1.0851, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(range(2, 33, 2)), st.floats(1.001, 1e4))
def test_z0_defining_property(n, R):
    z0 = antenna.dt_z0(n, R)
    assert z0 > 1.0
    assert antenna.tschebyscheff(n - 1, z0) == pytest.approx(R, rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("R", [1.0, 0.5, -3.0])
def test_z0_rejects_small_ratio(R):
    with pytest.raises(ValueError):
        antenna.dt_z0(8, R)


# --- coefficients -------------------------------------------------------------------------

def test_two_elements_equal():
    np.testing.assert_allclose(antenna.dt_coefficients(2, 20.0), [1.0, 1.0])


def test_symbolic_oracle_ten_elements():
    oracle, z0 = symbolic_dt_coefficients(10, 26.0)
    got = antenna.dt_coefficients(10, 26.0)
    assert np.max(np.abs(got - oracle) / np.abs(oracle)) <= 1e-9
    assert antenna.dt_z0(10, 10 ** 1.3) == pytest.approx(z0, rel=1e-11)


@pytest.mark.parametrize("n,r", [(4, 8.0), (6, 40.0), (8, 20.0), (16, 30.0)])
def test_symbolic_oracle_other_sizes(n, r):
    oracle, _ = symbolic_dt_coefficients(n, r)
    np.testing.assert_allclose(antenna.dt_coefficients(n, r), oracle, rtol=1e-9)


@pytest.mark.filterwarnings("ignore:This window is not suitable")
@pytest.mark.parametrize("n", [4, 8, 10, 16])
@pytest.mark.parametrize("r", [8.0, 20.0, 26.0, 40.0])
def test_matches_scipy_chebwin(n, r):
    w = chebwin(n, at=r, sym=True)
    np.testing.assert_allclose(antenna.dt_coefficients(n, r), w / w[0], rtol=1e-8)


def test_textbook_instance_loosely():
    # worked textbook values for 10 elements, 26 dB are quoted to 3 decimals
    # from a rounded z0, so only loose agreement is expected
    half = antenna.dt_half_coefficients(10, 26.0)
    np.testing.assert_allclose(half[::-1], [1.0, 1.357, 1.974, 2.496, 2.798], rtol=0.02)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(range(2, 17, 2)), st.floats(8.0, 40.0))
def test_coefficients_positive_symmetric_roundtrip(n, r):
    a = antenna.dt_coefficients(n, r)
    assert np.all(a > 0)
    np.testing.assert_allclose(a, a[::-1], rtol=0, atol=0)
    assert a[0] == pytest.approx(1.0)
    # AF(u) with edge-normalised coefficients is a scaled T_{n-1}(z0 cos u)
    z0 = antenna.dt_z0(n, 10 ** (r / 20))
    u = np.linspace(-np.pi, np.pi, 201)
    half = a[n // 2:]
    af = sum(half[k] * np.cos((2 * k + 1) * u) for k in range(n // 2))
    t = antenna.tschebyscheff(n - 1, z0 * np.cos(u))
    scale = af[100] / t[100]
    np.testing.assert_allclose(af, scale * t, atol=1e-8 * np.max(np.abs(af)))


@pytest.mark.parametrize("n", [1, 3, 7])
def test_odd_elements_rejected(n):
    with pytest.raises(UnsupportedGeometryError):
        antenna.dt_coefficients(n, 26.0)


def test_taperspec_validation():
    with pytest.raises(ValueError):
        TaperSpec.dolph(7.0)
    with pytest.raises(ValueError):
        TaperSpec("dolph_tschebyscheff")
    with pytest.raises(ValueError):
        TaperSpec("binomial")
    assert np.all(antenna.taper_coefficients(6, UNIFORM) == 1.0)


# --- response vectors -----------------------------------------------------------------

def test_broadside_all_ones():
    g = ArrayGeometry(4, 4)
    np.testing.assert_allclose(antenna.upa_response(g, 0.0, np.pi / 2), np.ones(16) / 4,
                               atol=1e-15)


def test_two_by_two_phase_pattern():
    # phi = theta = pi/2: horizontal phase pi*m, vertical phase pi*n*cos(pi/2) = 0
    a = antenna.upa_response(ArrayGeometry(2, 2), np.pi / 2, np.pi / 2) * 2
    phases = np.angle(a.reshape(2, 2))
    np.testing.assert_allclose(np.abs(np.exp(1j * phases) - np.exp(1j * np.array(
        [[0, 0], [np.pi, np.pi]]))), 0, atol=1e-12)


def test_element_phase_formula():
    g = ArrayGeometry(3, 5, spacing=0.37)
    phi, theta = 0.4, 2.1
    a = antenna.upa_response(g, phi, theta).reshape(3, 5)
    for m in range(3):
        for n in range(5):
            ph = 2 * np.pi * 0.37 * (m * np.sin(phi) * np.sin(theta) + n * np.cos(theta))
            assert a[m, n] == pytest.approx(np.exp(1j * ph) / np.sqrt(15), abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(0, np.pi), st.sampled_from([(4, 4), (8, 8), (6, 10)]))
def test_uniform_reduction_and_norms(phi, theta, dims):
    g = ArrayGeometry(*dims)
    a = antenna.upa_response(g, phi, theta)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(antenna.dtpa_response(g, UNIFORM, phi, theta), a, atol=1e-12)
    f = antenna.codeword(g, TaperSpec.dolph(26.0), phi, theta)
    assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-12)
    s = np.linalg.svd(antenna.dtpa_response(g, TaperSpec.dolph(26.0), phi, theta).reshape(dims),
                      compute_uv=False)
    assert s[1] < 1e-12 * s[0]


def test_two_by_two_dt_equals_upa():
    g = ArrayGeometry(2, 2)
    for r in (8.0, 26.0, 40.0):
        np.testing.assert_allclose(antenna.dtpa_response(g, TaperSpec.dolph(r), 0.3, 2.0),
                                   antenna.upa_response(g, 0.3, 2.0), atol=1e-14)


def test_asymmetric_geometry_uses_separate_tapers():
    g = ArrayGeometry(4, 6)
    f = antenna.dtpa_response(g, TaperSpec.dolph(20.0), 0.0, np.pi / 2).reshape(4, 6)
    expected = np.outer(antenna.dt_coefficients(4, 20.0), antenna.dt_coefficients(6, 20.0))
    np.testing.assert_allclose(f.real * np.sqrt(24), expected, atol=1e-12)


def test_codeword_peaks_at_true_direction():
    g = ArrayGeometry(8, 8)
    phi0, theta0 = 0.3, 2.2
    a_los = antenna.upa_response(g, phi0, theta0)
    grid = [(p, t) for p in np.linspace(-np.pi / 2, np.pi / 2, 61)
            for t in np.linspace(np.pi / 2, np.pi, 31)]
    taper = TaperSpec.dolph(26.0)
    best = max(abs(np.vdot(a_los, antenna.codeword(g, taper, p, t))) for p, t in grid)
    at_true = abs(np.vdot(a_los, antenna.codeword(g, taper, phi0, theta0)))
    assert at_true >= best - 1e-12


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(0, 4)
    with pytest.raises(ValueError):
        ArrayGeometry(4, 4, spacing=0.0)


# --- array factor and metrics -----------------------------------------------------------

def test_af_broadside_sum():
    c = antenna.dt_coefficients(8, 20.0)
    assert antenna.array_factor_linear(c, 0.5, 1.0, np.pi / 2) == pytest.approx(c[4:].sum())


def test_af_two_uniform():
    theta = np.linspace(0, np.pi, 50)
    u = np.pi * 0.5 * np.cos(theta)
    np.testing.assert_allclose(antenna.array_factor_linear([1, 1, 1, 1], 0.5, 1.0, theta),
                               np.cos(u) + np.cos(3 * u), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, np.pi))
def test_af_symmetric(theta):
    c = antenna.dt_coefficients(10, 30.0)
    assert antenna.array_factor_linear(c, 0.5, 1.0, theta) == pytest.approx(
        antenna.array_factor_linear(c, 0.5, 1.0, np.pi - theta), abs=1e-10)


def test_af_odd_rejected():
    with pytest.raises(UnsupportedGeometryError):
        antenna.array_factor_linear([1, 1, 1], 0.5, 1.0, 0.3)


def test_uniform_eight_sidelobe():
    m = antenna.pattern_metrics(antenna.linear_pattern(np.ones(8)))
    # dense-grid oracle: brute-force the first side lobe of |sum_k e^{j k pi cos th}|
    th = np.linspace(0, np.pi, 200001)
    af = np.abs(np.exp(1j * np.pi * np.outer(np.cos(th), np.arange(8))).sum(axis=1)) / 8
    first_null = np.pi / 2 + np.arcsin(2 / 8)
    ref = 20 * np.log10(af[th > first_null].max())
    assert m.max_sidelobe_rel_db == pytest.approx(ref, abs=0.01)
    assert m.max_sidelobe_rel_db == pytest.approx(-12.8, abs=0.1)


def test_two_elements_have_no_sidelobe():
    assert antenna.pattern_metrics(antenna.linear_pattern([1.0, 1.0])).max_sidelobe_rel_db is None


@pytest.mark.parametrize("n", range(4, 17, 2))
@pytest.mark.parametrize("r", [8.0, 16.0, 24.0, 32.0, 40.0])
def test_sidelobe_level_equals_design(n, r):
    m = antenna.pattern_metrics(antenna.linear_pattern(antenna.dt_coefficients(n, r)))
    assert m.max_sidelobe_rel_db == pytest.approx(-r, abs=0.5)


def test_hpbw_uniform_closed_form():
    # broadside uniform array: HPBW ~ 2 asin(0.443 lambda / (N d))
    m = antenna.pattern_metrics(antenna.linear_pattern(np.ones(10)))
    assert m.hpbw == pytest.approx(2 * np.arcsin(0.443 / (10 * 0.5)), rel=0.02)


def test_beampattern_validation():
    with pytest.raises(ValueError):
        BeamPattern([0.0, 0.0, 1.0], [1, 2, 3])
    with pytest.raises(ValueError):
        BeamPattern([0.0, 1.0], [1.0])


def test_pattern_export(tmp_path):
    p = antenna.linear_pattern(antenna.dt_coefficients(8, 26.0), n_points=101)
    out = tmp_path / "pattern.csv"
    antenna.export_pattern_csv(p, out)
    with open(out) as fh:
        assert fh.readline().strip() == "# schema=dtbeam.pattern/1"
        rows = list(csv.reader(fh))
    assert rows[0] == ["theta_rad", "af_magnitude"]
    assert len(rows) == 102
    assert float(rows[-1][0]) == pytest.approx(np.pi)
