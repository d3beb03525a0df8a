import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kahlerlab.acceptance import line_oracle
from kahlerlab.errors import ConeExitError, ContractError, NormalizationError, PositivityError
from kahlerlab.forms import ma_top
from kahlerlab.grid import (
    HermitianFormField,
    ScalarField,
    TorusChart,
    VolumeDensity,
    band_limited,
    ddbar_array,
    integrate,
    trig_field,
)
from kahlerlab.ma import (
    comparison_check,
    continuity_path,
    linearized_twisted,
    monotonicity_check,
    solve_calabi,
    solve_twisted_ma,
)


def chi_generic(chart, amp=0.02):
    return HermitianFormField(chart, np.eye(chart.dim) + ddbar_array(chart, trig_field(
        chart, [{"k": [1] + [0] * (2 * chart.dim - 1), "amp": amp}, {"k": [0, 1] + [0] * (2 * chart.dim - 2), "amp": amp / 2, "phase": 0.4}])))


def test_twisted_fixed_point():
    c = TorusChart.square(1, 64)
    phi, rep = solve_twisted_ma(chi_generic(c), np.ones(c.shape))
    assert phi.sup_norm() <= 1e-10
    assert rep.converged and rep.iterations == 0


def test_twisted_line_oracle():
    c = TorusChart.square(1, 64)
    x = c.coordinates()[0]
    F = np.broadcast_to(np.exp(0.1 * np.cos(2 * np.pi * x)), c.shape)
    phi, rep = solve_twisted_ma(HermitianFormField.identity(c), F, tol=1e-13)
    ref = line_oracle()[::64]
    assert np.abs(phi.values - ref[:, None]).max() <= 1e-7
    assert rep.residual_history[-1] <= 1e-13


def test_line_oracle_is_self_consistent():
    # fourth-order FD: halving the grid moves the solution by far less than the 1e-7 tolerance
    a, b = line_oracle(points=2048), line_oracle(points=4096)
    assert np.abs(a - b[::2]).max() < 1e-10


def test_twisted_scaling_law():
    rng = np.random.default_rng(0)
    c = TorusChart.square(1, 32)
    chi = chi_generic(c)
    F = np.exp(band_limited(c, rng, 2, 0.2))
    p1, _ = solve_twisted_ma(chi, F)
    p2, _ = solve_twisted_ma(chi, 3.0 * F)
    assert np.abs(p2.values - p1.values + math.log(3.0)).max() <= 1e-10


def test_twisted_report_and_quadratic_tail():
    rng = np.random.default_rng(1)
    c = TorusChart.square(2, 8)
    chi = chi_generic(c)
    F = np.exp(band_limited(c, rng, 2, 0.6))
    phi, rep = solve_twisted_ma(chi, F, tol=1e-12)
    r = rep.residual_history
    assert rep.converged and r[-1] <= 1e-12 and all(np.isfinite(r))
    assert all(b < a for a, b in zip(r, r[1:]))
    tail = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 3, len(r) - 1) if r[k] > 1e-10]
    assert all(q < 1e3 for q in tail)
    assert rep.oscillation == pytest.approx(phi.oscillation())
    G = F * ma_top(chi).density
    a = chi.coeffs + ddbar_array(c, phi.values)
    assert HermitianFormField(c, a).is_positive()
    assert np.abs(2 * np.linalg.det(a).real - G * np.exp(phi.values)).max() <= 1e-12 * G.max()


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_twisted_uniqueness_and_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    c = TorusChart.square(1, 32)
    chi = chi_generic(c)
    F = np.exp(band_limited(c, rng, 3, 0.3))
    p1, _ = solve_twisted_ma(chi, F)
    p2, _ = solve_twisted_ma(chi, F, phi0=band_limited(c, rng, 1, 0.001))
    assert np.abs(p1.values - p2.values).max() <= 1e-8
    assert p1.sup() <= -math.log(F.min()) + 1e-10
    assert p1.inf() >= -math.log(F.max()) - 1e-10


def test_linearization_matches_finite_differences():
    rng = np.random.default_rng(2)
    c = TorusChart.square(2, 8)
    chi = chi_generic(c)
    phi = ScalarField(c, band_limited(c, rng, 1, 0.005))
    delta = ScalarField(c, band_limited(c, rng, 2, 1.0))
    op = lambda p: np.log(2 * np.linalg.det(chi.coeffs + ddbar_array(c, p)).real) - p
    s = 1e-6
    fd = (op(phi.values + s * delta.values) - op(phi.values - s * delta.values)) / (2 * s)
    lin = linearized_twisted(chi, phi, delta).values
    assert np.abs(fd - lin).max() <= 1e-6 * np.abs(lin).max()


def test_twisted_errors():
    c = TorusChart.square(1, 16)
    with pytest.raises(ContractError):
        solve_twisted_ma(HermitianFormField.identity(c), -np.ones(c.shape))
    with pytest.raises(ContractError):
        solve_twisted_ma(HermitianFormField.identity(c, 0.0), np.ones(c.shape))
    x = c.coordinates()[0]
    with pytest.raises(ConeExitError):
        solve_twisted_ma(HermitianFormField.identity(c), np.ones(c.shape),
                         phi0=np.broadcast_to(np.cos(2 * np.pi * x), c.shape))


def test_calabi_identity_and_line_oracle():
    c = TorusChart.square(1, 32)
    w = HermitianFormField.identity(c)
    phi, _ = solve_calabi(w, ma_top(w))
    assert phi.sup_norm() <= 1e-10
    x = c.coordinates()[0]
    Omega = VolumeDensity(c, np.broadcast_to(1 + 0.2 * np.cos(2 * np.pi * x), c.shape))
    phi, rep = solve_calabi(w, Omega)
    # 1 + phi_xx / 4 = 1 + 0.2 cos(2 pi x)
    assert np.abs(phi.values + 0.2 * np.cos(2 * np.pi * x) / np.pi**2).max() <= 1e-8
    assert abs(phi.mean()) < 1e-14


def test_calabi_random_measure_two_initializations():
    rng = np.random.default_rng(3)
    c = TorusChart.square(2, 12)
    w = chi_generic(c)
    d = np.exp(band_limited(c, rng, 2, 0.3))
    Omega = VolumeDensity(c, d * integrate(ma_top(w)) / integrate(VolumeDensity(c, d)))
    pa, ra = solve_calabi(w, Omega)
    pb, rb = solve_calabi(w, Omega, phi0=band_limited(c, rng, 1, 0.005))
    assert ra.residual_history[-1] <= 1e-8 and rb.residual_history[-1] <= 1e-8
    assert np.abs(pa.values - pb.values).max() <= 1e-8


def test_calabi_mass_mismatch():
    c = TorusChart.square(1, 16)
    w = HermitianFormField.identity(c)
    with pytest.raises(NormalizationError):
        solve_calabi(w, VolumeDensity(c, 1.1 * np.ones(c.shape)))
    with pytest.raises(PositivityError):
        solve_calabi(HermitianFormField.identity(c, -1.0), VolumeDensity(c, np.ones(c.shape)))


def test_continuity_positive_chi_collapses_to_single_solve():
    rng = np.random.default_rng(4)
    c = TorusChart.square(1, 32)
    chi = chi_generic(c)
    F = np.exp(band_limited(c, rng, 2, 0.2))
    phi, rep = continuity_path(chi, F, HermitianFormField.identity(c))
    direct, _ = solve_twisted_ma(chi, F)
    assert len(rep.schedule) == 1
    assert np.abs(phi.values - direct.values).max() <= 1e-10


def test_continuity_degenerate_chi():
    c = TorusChart.square(1, 64)
    x = c.coordinates()[0]
    chi = HermitianFormField(c, np.eye(1) + ddbar_array(c, trig_field(c, [{"k": [1, 0], "amp": 1 / np.pi**2}])))
    assert chi.min_eigenvalue() < 1e-12  # chi = 1 - cos(2 pi x) vanishes at x = 0
    F = np.exp(trig_field(c, [{"k": [1, 0], "amp": 0.1}, {"k": [0, 1], "amp": 0.1, "phase": 0.5}]))
    phi, rep = continuity_path(chi, F, HermitianFormField.identity(c, 0.25), steps=8)
    osc = rep.oscillations
    assert max(osc) / min(osc) <= 2
    good = (np.abs(x[:, 0] - 0.5) < 0.3)
    gaps = [np.abs(a.values[good] - b.values[good]).max() for a, b in zip(rep.potentials, rep.potentials[1:])]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_continuity_rejects_bad_regularizer():
    c = TorusChart.square(1, 16)
    with pytest.raises(ContractError):
        continuity_path(HermitianFormField.identity(c), np.ones(c.shape), HermitianFormField.identity(c, -1.0))


def test_comparison_trivial_cases():
    rng = np.random.default_rng(5)
    c = TorusChart.square(1, 64)
    w = HermitianFormField.identity(c)
    phi = ScalarField(c, band_limited(c, rng, 3, 0.01))
    rep = comparison_check(phi, phi, w)
    assert rep.gap == 0 and rep.set_fraction == 0
    rep = comparison_check(phi, phi + 0.5, w)
    assert rep.set_fraction == 1 and abs(rep.gap) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_comparison_random_pairs(seed):
    rng = np.random.default_rng(seed)
    c = TorusChart.square(1, 64)
    w = HermitianFormField.identity(c)
    phi = ScalarField(c, band_limited(c, rng, 3, 0.01))
    psi = ScalarField(c, band_limited(c, rng, 3, 0.01))
    rep = comparison_check(phi, psi, w)
    assert rep.passed and rep.gap >= -1e-6
    assert rep.eps_disc == pytest.approx(c.spacing**2 * integrate(ma_top(w)))


def test_monotonicity_trivial_and_scaling():
    rng = np.random.default_rng(6)
    c = TorusChart.square(1, 32)
    chi = chi_generic(c)
    a = np.exp(band_limited(c, rng, 2, 0.1))
    rep = monotonicity_check(VolumeDensity(c, a), VolumeDensity(c, a), chi)
    assert rep.worst_violation == 0 and np.array_equal(rep.phi_a.values, rep.phi_b.values)
    rep = monotonicity_check(VolumeDensity(c, a), VolumeDensity(c, 2 * a), chi)
    assert rep.worst_violation <= 1e-10
    assert np.abs(rep.phi_b.values - rep.phi_a.values + math.log(2)).max() <= 1e-10


def test_monotonicity_cosine_squared_bump():
    c = TorusChart.square(1, 64)
    x = c.coordinates()[0]
    a = np.exp(trig_field(c, [{"k": [0, 1], "amp": 0.1}]))
    b = a * (1 + 0.3 * np.cos(2 * np.pi * x) ** 2)
    rep = monotonicity_check(VolumeDensity(c, a), VolumeDensity(c, b), HermitianFormField.identity(c))
    assert rep.worst_violation <= 1e-7 and rep.passed


def test_monotonicity_precondition():
    c = TorusChart.square(1, 16)
    a = np.ones(c.shape)
    with pytest.raises(ContractError):
        monotonicity_check(VolumeDensity(c, 2 * a), VolumeDensity(c, a), HermitianFormField.identity(c))
