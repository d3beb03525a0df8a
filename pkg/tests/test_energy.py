import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from kahlerlab import scenarios
from kahlerlab.errors import ContractError, PositivityError
from kahlerlab.energy import (
    EnergyReport,
    adjunction_coefficients,
    adjunction_expansion,
    cubic_path,
    extremal_residual,
    fiber_energy_term,
    fit_expansion,
    generalized_mabuchi,
    linear_path,
    mabuchi,
    mabuchi_variation,
    mu_constant,
    path_mabuchi,
    surface_adjunction,
)
from kahlerlab.fibration import fiber_integrate, lift_form, lift_scalar, model_from_dict
from kahlerlab.forms import ma_top, ricci, wedge_array
from kahlerlab.grid import (
    HermitianFormField,
    TorusChart,
    band_limited,
    ddbar_array,
    integrate,
    integrate_array,
    trig_field,
)


def setup(seed=0, n=8):
    rng = np.random.default_rng(seed)
    c = TorusChart.square(2, n)
    w = HermitianFormField(c, np.eye(2) + ddbar_array(c, band_limited(c, rng, 1, 0.01)))
    th = HermitianFormField(c, ddbar_array(c, band_limited(c, rng, 1, 0.01)))
    return rng, c, w, th


def test_mu_examples():
    c = TorusChart.square(2, 8)
    w = HermitianFormField.identity(c)
    assert mu_constant(w) == 0.0
    assert mu_constant(w, w) == pytest.approx(-1.0, abs=1e-15)


def test_mu_against_direct_quotient_and_exact_shift():
    rng, c, w, th = setup(1)
    # independent 2x2 mixed discriminant: (a ^ b) = a11 b22 + a22 b11 - a12 b21 - a21 b12
    rho = -ddbar_array(c, np.log(np.linalg.det(w.coeffs).real)) - th.coeffs
    a, b = rho, w.coeffs
    mixed = (a[..., 0, 0] * b[..., 1, 1] + a[..., 1, 1] * b[..., 0, 0]
             - a[..., 0, 1] * b[..., 1, 0] - a[..., 1, 0] * b[..., 0, 1]).real
    oracle = mixed.sum() / (2 * np.linalg.det(b).real).sum()
    assert mu_constant(w, th) == pytest.approx(oracle, abs=1e-11)
    shifted = th + HermitianFormField(c, ddbar_array(c, band_limited(c, rng, 2, 0.1)))
    assert abs(mu_constant(w, shifted) - mu_constant(w, th)) <= 1e-10


def test_mu_degenerate_class():
    c = TorusChart.square(1, 8)
    with pytest.raises(ContractError):
        mu_constant(HermitianFormField.identity(c, 0.0), ricci_rep=HermitianFormField.zeros(c))


def test_mabuchi_trivial_cases():
    rng, c, w, th = setup(2)
    assert mabuchi(w, np.zeros(c.shape)) == pytest.approx(0.0, abs=1e-15)
    assert generalized_mabuchi(w, th, np.zeros(c.shape)) == pytest.approx(0.0, abs=1e-15)
    phi = band_limited(c, rng, 1, 0.01)
    zero = HermitianFormField.zeros(c)
    assert abs(generalized_mabuchi(w, zero, phi) - mabuchi(w, phi)) <= 1e-12


def test_mabuchi_line_oracle():
    c = TorusChart.square(1, 256)
    x = c.coordinates()[0]
    phi = np.broadcast_to(0.1 * np.cos(2 * np.pi * x), c.shape)
    f = lambda s: 1 - 0.1 * np.pi**2 * np.cos(2 * np.pi * s)
    oracle = quad(lambda s: f(s) * np.log(f(s)), 0, 1, epsabs=1e-14, limit=400)[0]
    assert abs(mabuchi(HermitianFormField.identity(c), phi) - oracle) <= 1e-8


def test_mabuchi_rejects_nonpositive():
    c = TorusChart.square(1, 16)
    x = c.coordinates()[0]
    with pytest.raises(PositivityError):
        mabuchi(HermitianFormField.identity(c), np.broadcast_to(0.5 * np.cos(2 * np.pi * x), c.shape))


def test_path_examples():
    rng, c, w, th = setup(3)
    assert path_mabuchi(w, th, lambda s: (np.zeros(c.shape), np.zeros(c.shape))) == 0.0
    phi = band_limited(c, rng, 1, 0.01)
    bend = band_limited(c, rng, 1, 0.01)
    lin = path_mabuchi(w, th, linear_path(phi))
    cub = path_mabuchi(w, th, cubic_path(phi, bend))
    direct = generalized_mabuchi(w, th, phi)
    assert abs(lin - cub) <= 1e-8
    assert abs(lin - direct) <= 1e-7 * abs(direct)
    rep = EnergyReport(value=direct, path_value=lin, residual_field=extremal_residual(
        w + HermitianFormField(c, ddbar_array(c, phi)), th))
    assert abs(rep.value - rep.path_value) <= 1e-7 * abs(rep.value)
    assert set(rep.to_dict()) >= {"value", "path_value", "residual_sup"}


def test_path_leaving_cone_is_reported():
    c = TorusChart.square(1, 16)
    x = c.coordinates()[0]
    phi = np.broadcast_to(0.05 * np.cos(2 * np.pi * x), c.shape)
    bend = np.broadcast_to(2.0 * np.cos(2 * np.pi * x), c.shape)
    with pytest.raises(PositivityError, match="s="):
        path_mabuchi(HermitianFormField.identity(c), None, cubic_path(phi, bend))


def test_extremal_residual_flat_and_weighted_mean():
    c = TorusChart.square(2, 8)
    assert extremal_residual(HermitianFormField.identity(c)).sup_norm() == 0.0
    rng, c, w, th = setup(4)
    r = extremal_residual(w, th)
    assert r.sup_norm() > 1e-3
    assert abs(integrate_array(c, r.values * ma_top(w).density)) <= 1e-10


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_variation_formula_against_finite_differences(seed):
    rng, c, w, th = setup(seed)
    phi = band_limited(c, rng, 1, 0.01)
    delta = band_limited(c, rng, 2, 0.01)
    s = 1e-4  # central differences; truncation error ~ (s |ddbar delta|)^2
    fd = (generalized_mabuchi(w, th, phi + s * delta) - generalized_mabuchi(w, th, phi - s * delta)) / (2 * s)
    exact = mabuchi_variation(w, th, phi, delta)
    assert abs(fd - exact) <= 1e-6 * abs(exact)


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_cocycle(seed):
    rng, c, w, _ = setup(seed)
    phi = band_limited(c, rng, 1, 0.005)
    psi = band_limited(c, rng, 1, 0.005)
    w_phi = w + HermitianFormField(c, ddbar_array(c, phi))
    assert abs(mabuchi(w, phi) + mabuchi(w_phi, psi) - mabuchi(w, phi + psi)) <= 1e-7


# ----------------------------------------------------------------------------
# coefficients and small-t expansions


@pytest.mark.parametrize("n,kappa", [(2, 1), (3, 1), (3, 2), (4, 2)])
def test_adjunction_coefficients_symbolic(n, kappa):
    # sum_J (chi + W)^J (X + V)^(n-1-J): collect chi^i X^(k-i) W^j V^(m-1-j)
    chi, X, W, V = sp.symbols("chi X W V")
    m = n - kappa
    poly = sp.expand(sum((chi + W) ** J * (X + V) ** (n - 1 - J) for J in range(n)))
    A = adjunction_coefficients(n, kappa)
    assert set(A) == {(i, j) for i in range(kappa + 1) for j in range(m)}
    for (i, j), a in A.items():
        coeff = poly.coeff(chi, i).coeff(X, kappa - i).coeff(W, j).coeff(V, m - 1 - j)
        assert sp.Rational(math.comb(n, kappa)) * sp.nsimplify(a) == coeff


def _adj_inputs(name, **kw):
    cfg = scenarios.get(name, **kw)
    m = model_from_dict(cfg["model"])
    e = cfg["energy"]
    pb = trig_field(m.base, e["phibar_modes"])
    psi = trig_field(m.product, e["psi_modes"]) if e["psi_modes"] else np.zeros(m.product.shape)
    return m, pb, psi, e["t_list"]


def test_ricci_pairing_term_brute_force():
    # the psi Ric_V pairing of K_{w_t}(phibar + t psi), divided by t^m, tends to -binom sum A_ij (...)
    m, pb, psi, _ = _adj_inputs("mabuchi_adjunction", n=8)
    P = m.product
    chi_l = lift_form(m, m.chi).coeffs
    vals, ts = [], [0.02, 0.01, 0.005]
    for t in ts:
        wt = chi_l + t * m.omega0.coeffs
        phi = lift_scalar(m, pb) + t * psi
        wp = wt + ddbar_array(P, phi)
        ric_v = np.zeros_like(wt)
        ric_v[..., 1:, 1:] = ricci(HermitianFormField(P, wt)).coeffs[..., 1:, 1:]
        term = -sum(integrate_array(P, t * psi * wedge_array([ric_v] + [wt] * J + [wp] * (1 - J))) for J in range(2))
        vals.append(term / t)
    leading = np.polyfit(ts, vals, 2)[-1]
    # predicted: the Ricci part of binom * L(psi)
    k = m.kappa
    w0 = m.omega0.coeffs[..., k:, k:]
    ric_f = -ddbar_array(P, np.log(w0[..., 0, 0].real))[..., k:, k:]
    chi_p = m.chi.coeffs + ddbar_array(m.base, pb)
    pred = 0.0
    for (i, j), a in adjunction_coefficients(2, 1).items():
        fib = fiber_integrate(m, psi * ric_f[..., 0, 0].real)
        bas = wedge_array([m.chi.coeffs] * i + [chi_p] * (1 - i))
        pred -= 2 * a * integrate_array(m.base, fib * bas)
    assert leading == pytest.approx(pred, rel=1e-6, abs=1e-12)


def test_fiber_term_reduces_to_fiberwise_mabuchi():
    m, _, psi, _ = _adj_inputs("mabuchi_adjunction", n=8)
    zero = np.zeros(m.base.shape)
    got = fiber_energy_term(m, zero, psi)
    k = m.kappa
    tau = complex(m.tau.flat[0])
    fchart = TorusChart(m.fiber.resolutions, (tau,))
    per_fiber = np.zeros(m.base.shape)
    for idx in np.ndindex(m.base.shape):
        w0 = HermitianFormField(fchart, m.omega0.coeffs[idx][..., k:, k:])
        per_fiber[idx] = mabuchi(w0, psi[idx])
    expect = integrate_array(m.base, per_fiber * ma_top(m.chi).density)
    assert got == pytest.approx(expect, rel=1e-12, abs=1e-15)


def test_adjunction_zero_potentials():
    m, _, _, t_list = _adj_inputs("mabuchi_adjunction", n=8)
    rep = adjunction_expansion(m, np.zeros(m.base.shape), np.zeros(m.product.shape), t_list)
    assert max(abs(v) for v in rep.expansion["K_values"]) < 1e-15
    assert abs(rep.expansion["leading_fit"]) < 1e-12


def test_adjunction_base_only_matches_independent_energy():
    m, pb, _, _ = _adj_inputs("mabuchi_adjunction", n=16)
    x = m.base.coordinates()[0]
    pb = np.broadcast_to(0.05 * np.cos(2 * np.pi * x), m.base.shape)
    t_list = [0.1, 0.08, 0.06, 0.04, 0.02]
    rep = adjunction_expansion(m, pb, np.zeros(m.product.shape), t_list).expansion
    k_chi = mabuchi(m.chi, pb)  # constant modulus: w_WP = 0
    assert rep["L"] == 0.0
    assert abs(rep["leading_fit"] - 2 * k_chi) <= 0.01 * abs(2 * k_chi)
    assert rep["remainder_slope"] >= 2 - 0.2


def test_adjunction_scenario_asymptotics():
    m, pb, psi, t_list = _adj_inputs("mabuchi_adjunction")
    rep = adjunction_expansion(m, pb, psi, t_list)
    e = rep.expansion
    assert e["relative_error"] <= 0.01 and e["remainder_slope"] >= 1.8
    assert rep.metadata["ranges"]


@pytest.mark.filterwarnings("ignore::numpy.exceptions.RankWarning")
def test_adjunction_t_too_large():
    # a base-direction psi: t ddbar psi eventually overwhelms chi on the base block
    m, pb, _, _ = _adj_inputs("mabuchi_adjunction", n=8)
    x = m.product.coordinates()[0]
    psi = np.broadcast_to(np.cos(2 * np.pi * x), m.product.shape)
    adjunction_expansion(m, pb, psi, [0.001])
    with pytest.raises(ContractError, match="t=50.0"):
        adjunction_expansion(m, pb, psi, [0.001, 50.0])


def test_surface_adjunction():
    m, pb, _, t_list = _adj_inputs("surface_adjunction")
    zero = surface_adjunction(m, np.zeros(m.base.shape), t_list=t_list).expansion
    assert max(abs(v) for v in zero["K_values"]) < 1e-15
    e = surface_adjunction(m, pb, t_list=t_list).expansion
    assert e["relative_error"] <= 0.02 and e["remainder_slope"] >= 1.8


def test_surface_adjunction_needs_a_surface():
    m, pb, _, _ = _adj_inputs("mabuchi_adjunction", n=8)
    with pytest.raises(ContractError):
        surface_adjunction(type("M", (), {"n": 3, "kappa": 1})(), pb)


def test_fit_expansion_recovers_polynomial():
    t = [0.1, 0.05, 0.025, 0.0125]
    k = [2.0 * s + 3.0 * s**2 - s**3 for s in t]
    e = fit_expansion(t, k, 1, 2.0)
    assert e["leading_fit"] == pytest.approx(2.0, abs=1e-10)
    assert e["remainder_slope"] == pytest.approx(2.0, abs=0.1)
