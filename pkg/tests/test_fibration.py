import copy

import numpy as np
import pytest
from scipy import integrate as sint
from scipy.special import i0

from kahlerlab import scenarios
from kahlerlab.errors import ContractError, NormalizationError
from kahlerlab.fibration import (
    FibrationModel,
    density_F,
    fiber_entropy_form,
    fiber_integrate,
    lift_scalar,
    model_from_dict,
    pushforward,
    reduce_model,
    semi_flat,
    weil_petersson,
)
from kahlerlab.forms import ma_top
from kahlerlab.grid import VolumeDensity, ddbar_array, integrate, trig_field


def base_desc(base_n=16, fiber_n=16, tau=(0.0, 1.0)):
    return {"base": {"dims": 1, "resolutions": [base_n], "moduli": [[0.0, 1.0]]},
            "fiber": {"dims": 1, "resolutions": [fiber_n], "moduli": [list(tau)]},
            "tau": {"kind": "constant", "data": list(tau)},
            "chi": {"kind": "flat_scaled", "data": 1.0}}


def mode(k, amp, phase=0.0):
    return {"k": k, "amp": amp, "phase": phase}


def test_semi_flat_fixed_point():
    m = model_from_dict(scenarios.get("product_generic", base_n=8, fiber_n=8)["model"])
    sf = semi_flat(m)
    assert sf.psi.sup_norm() < 1e-14
    assert np.abs(sf.omega_sf.coeffs - m.omega0.coeffs).max() < 1e-14


def test_semi_flat_line_oracle():
    a = 0.02
    d = base_desc(8, 32)
    d["omega0"] = {"kind": "block", "data": {"base": "chi", "potential_modes": [mode([0, 0, 1, 0], a)]}}
    m = model_from_dict(d)
    x_f = m.product.coordinates()[2]
    g = 1 - a * np.pi**2 * np.cos(2 * np.pi * x_f)  # fiber coefficient of omega0
    # psi_{w wbar} = 1 - g has the solution -a cos(2 pi x_f); the g-weighted mean is then removed
    oracle = -a * np.cos(2 * np.pi * x_f)
    oracle = oracle - (oracle * g).mean() / g.mean()
    sf = semi_flat(m)
    assert np.abs(sf.psi.values - oracle).max() < 1e-9
    assert sf.ricci_residual < 1e-8
    assert np.abs(sf.fiber_metric - 1.0).max() < 1e-12


def test_semi_flat_ricci_flat_and_unit_mass_on_sheared_fibers():
    d = base_desc(8, 16, tau=(0.3, 1.4))
    d["omega0"] = {"kind": "block",
                   "data": {"base": "chi", "potential_modes": [mode([0, 0, 1, 1], 0.01), mode([1, 0, 0, 1], 0.01, 0.4)]}}
    m = model_from_dict(d)
    sf = semi_flat(m)
    assert sf.ricci_residual < 1e-8
    mass = fiber_integrate(m, sf.theta.density)
    assert np.abs(mass - 1.0).max() < 1e-10


def test_semi_flat_idempotent():
    d = base_desc(8, 16)
    d["omega0"] = {"kind": "block", "data": {"base": "chi", "potential_modes": [mode([1, 0, 1, 0], 0.01)]}}
    m = model_from_dict(d)
    sf = semi_flat(m)
    m2 = FibrationModel(m.base, m.fiber, m.tau, m.chi, sf.omega_sf, m.Omega)
    assert semi_flat(m2).psi.sup_norm() < 1e-12


def test_pushforward_product_and_constant_cases():
    d = base_desc(8, 8, tau=(0.2, 1.7))
    m = model_from_dict(d)
    one = pushforward(VolumeDensity(m.product, np.ones(m.product.shape)), m)
    assert np.allclose(one.density, 1.7, rtol=1e-14)
    base = np.exp(trig_field(m.base, [mode([1, 1], 0.3)]))
    prod = lift_scalar(m, base) * (1 / 1.7)
    assert np.abs(pushforward(VolumeDensity(m.product, prod), m).density - base).max() < 1e-14


def test_pushforward_dense_quadrature_oracle():
    m = model_from_dict(base_desc(16, 32))
    xb, _, xf, _ = m.product.coordinates()
    v = VolumeDensity(m.product, np.broadcast_to(np.exp(np.cos(2 * np.pi * xb) * np.cos(2 * np.pi * xf)), m.product.shape))
    got = pushforward(v, m).density[:, 0]
    for j, x in enumerate(m.base.coordinates()[0][:, 0]):
        c = np.cos(2 * np.pi * x)
        ref = sint.quad(lambda s: np.exp(c * np.cos(2 * np.pi * s)), 0, 1, epsabs=1e-14)[0]
        assert abs(got[j] - ref) < 1e-10
        assert abs(got[j] - i0(c)) < 1e-10


def test_pushforward_conserves_mass():
    d = base_desc(16, 8, tau=(0.2, 1.7))
    d["Omega"] = {"kind": "exp_profile", "data": {"modes": [mode([1, 0, 1, 1], 0.3), mode([0, 1, 0, 1], 0.2)]}}
    m = model_from_dict(d)
    total = integrate(m.Omega)
    assert abs(integrate(pushforward(m.Omega, m)) - total) < 1e-12 * total


def test_pushforward_uses_local_fiber_area():
    # with a varying modulus the fiber over y has area Im tau(y)
    m = model_from_dict(scenarios.get("varying_tau", base_n=16, fiber_n=8)["model"])
    dens = m.Omega.density
    manual = sum(dens[i, j].sum() * m.tau[i, j].imag / 64 for i in range(16) for j in range(16)) / 256
    assert abs(integrate(pushforward(m.Omega, m)) - manual) < 1e-13


def test_pushforward_rejects_foreign_chart():
    m = model_from_dict(base_desc(8, 8))
    with pytest.raises(ContractError):
        pushforward(VolumeDensity(m.base, np.ones(m.base.shape)), m)


def test_density_F_stationary_is_binomial():
    m = model_from_dict(scenarios.get("stationary", base_n=16)["model"])
    F = density_F(m)
    assert np.abs(F.F.values - 2.0).max() < 1e-13
    assert F.deviation < 1e-12


def test_density_F_closed_form():
    d = base_desc(16, 8, tau=(0.0, 1.3))
    d["chi"] = {"kind": "potential", "data": {"scale": 1.0, "modes": [mode([0, 1], 0.02)]}}
    d["Omega"] = {"kind": "exp_profile", "data": {"scale": 1.0, "modes": [mode([1, 0, 0, 0], -0.4)]}}
    m = model_from_dict(d)
    G = 0.4 * np.cos(2 * np.pi * m.base.coordinates()[0])
    expected = np.exp(-G) * 1.3 / ma_top(m.chi).density
    got = density_F(m)
    assert np.abs(got.F.values - expected).max() < 1e-13
    assert np.abs(got.alternate.values - got.F.values).max() < 1e-9


def test_density_F_rejects_degenerate_chi():
    d = base_desc(8, 8)
    m = model_from_dict(d)
    bad = copy.copy(m)
    object.__setattr__(bad, "chi", m.chi * 0.0)
    with pytest.raises(ContractError):
        density_F(bad)


def test_weil_petersson_constant_modulus_vanishes():
    m = model_from_dict(base_desc(8, 8, tau=(0.4, 0.8)))
    assert weil_petersson(m).sup_norm() == 0.0


def test_weil_petersson_exponential_profile():
    d = base_desc(32, 4)
    modes = [mode([1, 0], 0.2), mode([0, 2], 0.05, 0.3)]
    d["tau"] = {"kind": "profile", "data": {"re": 0.0, "im": 1.0, "modes": modes}}
    m = model_from_dict(d)
    s = trig_field(m.base, modes)
    # tau = i e^s, so -ddbar log Im tau = -ddbar s; -ddbar cos(2 pi k.x) = pi^2 |k|^2 cos for tau_b = i
    x, y = m.base.coordinates()
    oracle = np.pi**2 * 0.2 * np.cos(2 * np.pi * x) + np.pi**2 * 4 * 0.05 * np.cos(4 * np.pi * y + 0.3)
    wp = weil_petersson(m).coeffs[..., 0, 0]
    assert np.abs(wp.real - oracle).max() < 1e-10
    assert np.abs(wp.imag).max() == 0


def test_weil_petersson_is_exact():
    # a nonconstant modulus on a compact base cannot give a semi-positive form: the class is zero
    m = model_from_dict(scenarios.get("varying_tau", base_n=32)["model"])
    wp = weil_petersson(m)
    assert abs(integrate(VolumeDensity(m.base, wp.coeffs[..., 0, 0].real))) < 1e-12
    assert wp.min_eigenvalue() < 0


def test_fiber_entropy_form_matches_weil_petersson_for_semi_flat_data():
    d = base_desc(16, 8)
    m = model_from_dict(d)
    assert fiber_entropy_form(m).sup_norm() < 1e-12
    m2 = model_from_dict(scenarios.get("varying_tau", base_n=16, fiber_n=4)["model"])
    assert np.abs(fiber_entropy_form(m2).coeffs - weil_petersson(m2).coeffs).max() < 1e-10


def test_fiber_mass_normalization_enforced():
    m = model_from_dict(base_desc(8, 8))
    with pytest.raises(NormalizationError):
        FibrationModel(m.base, m.fiber, m.tau, m.chi, m.omega0 * 2.0, m.Omega)


def test_reduce_model_requires_homogeneous_data():
    d = base_desc(8, 8)
    d["Omega"] = {"kind": "exp_profile", "data": {"modes": [mode([0, 0, 1, 0], 0.1)]}}
    with pytest.raises(ContractError):
        reduce_model(model_from_dict(d))
    red = reduce_model(model_from_dict(base_desc(8, 8)))
    assert np.allclose(red.fiber_mass, 1.0)


def test_model_description_errors():
    d = base_desc(8, 8)
    d["tau"] = {"kind": "profile", "data": {"re": 0.0, "im": -1.0}}
    with pytest.raises(ContractError):
        model_from_dict(d)
    d = base_desc(8, 8)
    del d["chi"]
    with pytest.raises(ContractError):
        model_from_dict(d)
    d = base_desc(8, 8)
    d["tau"] = {"kind": "profile", "data": {"modes": [mode([1, 0], 0.1)]}}
    d["omega0"] = {"kind": "block", "data": {"potential_modes": [mode([0, 0, 1, 0], 0.01)]}}
    with pytest.raises(ContractError):
        model_from_dict(d)


def test_omega0_potential_of_base_is_closed_form():
    d = base_desc(16, 4)
    d["omega0"] = {"kind": "block", "data": {"base": {"scale": 2.0, "modes": [mode([1, 0], 0.01)]}}}
    m = model_from_dict(d)
    expect = 2.0 + ddbar_array(m.base, trig_field(m.base, [mode([1, 0], 0.01)]))[..., 0, 0]
    assert np.abs(m.omega0.coeffs[:, :, 0, 0, 0, 0] - expect).max() < 1e-14
