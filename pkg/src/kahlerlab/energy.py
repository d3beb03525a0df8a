"""Mabuchi-type energies, extremal residuals and their small-t expansions on product fibrations."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._pointwise import herm_det
from .errors import ContractError, PositivityError
from .fibration import (
    FibrationModel,
    fiber_entropy_form,
    fiber_integrate,
    lift_form,
    lift_scalar,
    weil_petersson,
)
from .forms import ma_top, ricci, scalar_curvature, trace, wedge_array
from .grid import HermitianFormField, ScalarField, ddbar_array, integrate, integrate_array

__all__ = [
    "EnergyReport",
    "mu_constant",
    "mabuchi",
    "generalized_mabuchi",
    "path_mabuchi",
    "linear_path",
    "cubic_path",
    "extremal_residual",
    "mabuchi_variation",
    "adjunction_coefficients",
    "adjunction_expansion",
    "surface_adjunction",
    "fit_expansion",
]


@dataclass
class EnergyReport:
    value: float = float("nan")
    path_value: float = float("nan")
    residual_field: Optional[ScalarField] = field(default=None, repr=False)
    expansion: Optional[dict] = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"value": self.value, "path_value": self.path_value, "expansion": self.expansion,
               "metadata": self.metadata}
        if self.residual_field is not None:
            out["residual_sup"] = self.residual_field.sup_norm()
        return out


def _arr(x, chart=None) -> np.ndarray:
    a = np.asarray(getattr(x, "values", x), dtype=float)
    return a if chart is None else np.broadcast_to(a, chart.shape)


def _check_positive(a: np.ndarray, what: str) -> None:
    if herm_det(a).min() <= 0:
        raise PositivityError(f"{what} is not positive")
    from ._pointwise import herm_eigs

    if herm_eigs(a)[..., 0].min() <= 0:
        raise PositivityError(f"{what} is not positive")


def mu_constant(omega: HermitianFormField, theta: Optional[HermitianFormField] = None,
                ricci_rep: Optional[HermitianFormField] = None) -> float:
    """(c_1 - [theta]) . [omega]^{n-1} / [omega]^n with c_1 represented by Ric(ricci_rep)."""
    chart = omega.chart
    n = chart.dim
    ric = ricci(omega) if ricci_rep is None else ricci_rep
    rho = ric.coeffs - (0.0 if theta is None else theta.coeffs)
    den = integrate(ma_top(omega))
    if not den > 0:
        raise ContractError("degenerate class: [omega]^n vanishes")
    num = integrate_array(chart, wedge_array([rho] + [omega.coeffs] * (n - 1)))
    return num / den


def generalized_mabuchi(omega: HermitianFormField, theta: Optional[HermitianFormField],
                        phi) -> float:
    """K_{omega,theta}(phi) by direct evaluation.

    K = int log(w_phi^n / w^n) w_phi^n
        - sum_{j<n} int phi (Ric(w) - theta) ^ w^j ^ w_phi^{n-1-j}
        + n mu / (n + 1) sum_{j<=n} int phi w^j ^ w_phi^{n-j}
    Its first variation is -int dphi (S - tr theta - n mu) w_phi^n.
    """
    chart = omega.chart
    n = chart.dim
    p = _arr(phi, chart)
    w = omega.coeffs
    wp = w + ddbar_array(chart, p)
    _check_positive(w, "reference form")
    _check_positive(wp, "omega + ddbar phi")
    fact = math.factorial(n)
    top, top_p = fact * herm_det(w), fact * herm_det(wp)
    ric = ricci(omega).coeffs
    rho = ric - (0.0 if theta is None else theta.coeffs)
    mu = integrate_array(chart, wedge_array([rho] + [w] * (n - 1))) / integrate_array(chart, top)
    e1 = integrate_array(chart, np.log(top_p / top) * top_p)
    e2 = 0.0
    for j in range(n):
        e2 -= integrate_array(chart, p * wedge_array([rho] + [w] * j + [wp] * (n - 1 - j)))
    e3 = 0.0
    for j in range(n + 1):
        e3 += integrate_array(chart, p * wedge_array([w] * j + [wp] * (n - j)))
    e3 *= n * mu / (n + 1)
    return e1 + e2 + e3


def mabuchi(omega: HermitianFormField, phi) -> float:
    return generalized_mabuchi(omega, None, phi)


def extremal_residual(omega_phi: HermitianFormField, theta: Optional[HermitianFormField] = None) -> ScalarField:
    """S - tr theta - n mu, whose omega_phi^n-weighted mean vanishes."""
    n = omega_phi.dim
    S = scalar_curvature(omega_phi)
    tr = trace(omega_phi, theta) if theta is not None else 0.0
    mu = mu_constant(omega_phi, theta)
    return S - tr - n * mu


def mabuchi_variation(omega: HermitianFormField, theta: Optional[HermitianFormField], phi,
                      delta) -> float:
    """-int delta (S(w_phi) - tr theta - n mu) w_phi^n."""
    chart = omega.chart
    wp = HermitianFormField(chart, omega.coeffs + ddbar_array(chart, _arr(phi, chart)))
    n = chart.dim
    mu = mu_constant(omega, theta)
    S = scalar_curvature(wp).values
    tr = trace(wp, theta).values if theta is not None else 0.0
    return -integrate_array(chart, _arr(delta, chart) * (S - tr - n * mu) * ma_top(wp).density)


def linear_path(phi) -> Callable:
    p = _arr(phi)
    return lambda s: (s * p, p)


def cubic_path(phi, bend) -> Callable:
    """s -> (3s^2 - 2s^3) phi + s(1 - s) bend, a different curve with the same endpoints."""
    p, b = _arr(phi), _arr(bend)
    return lambda s: ((3 * s * s - 2 * s**3) * p + s * (1 - s) * b, (6 * s - 6 * s * s) * p + (1 - 2 * s) * b)


def path_mabuchi(omega: HermitianFormField, theta: Optional[HermitianFormField], path: Callable,
                 nodes: int = 24) -> float:
    """-int_0^1 int dphi_s/ds (S - tr theta - n mu) w_s^n ds by Gauss-Legendre in s."""
    chart = omega.chart
    n = chart.dim
    mu = mu_constant(omega, theta)
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    for x, wgt in zip(xs, ws):
        s = 0.5 * (x + 1.0)
        p, dp = (_arr(v, chart) for v in path(s))
        a = omega.coeffs + ddbar_array(chart, p)
        try:
            _check_positive(a, "path metric")
        except PositivityError:
            raise PositivityError(f"path leaves the positive cone at s={s:.4f}") from None
        ws_form = HermitianFormField(chart, a)
        S = scalar_curvature(ws_form).values
        tr = trace(ws_form, theta).values if theta is not None else 0.0
        inner = integrate_array(chart, dp * (S - tr - n * mu) * ma_top(ws_form).density)
        total += 0.5 * wgt * inner
    return -total


# ----------------------------------------------------------------------------
# small-t expansions


def adjunction_coefficients(n: int, kappa: int) -> dict:
    """A_{i,j} with binom(n,k) A_{i,j} = binom(i+j, i) binom(n-1-i-j, k-i).

    i runs over 0..k and j over 0..n-k-1; they count how the factors
    w_t^J ^ w_phi^{n-1-J}, J = i + j, split into i copies of chi and j fiber
    copies of omega0 from w_t, the rest coming from w_phi.
    """
    m = n - kappa
    b = math.comb(n, kappa)
    return {(i, j): math.comb(i + j, i) * math.comb(n - 1 - i - j, kappa - i) / b
            for i in range(kappa + 1) for j in range(m)}


def fit_expansion(t_list: Sequence[float], values: Sequence[float], power: int,
                  prediction: float, degree: int = 2) -> dict:
    """Fit K(t)/t^power by a polynomial in t; report the constant term and the remainder slope."""
    t = np.asarray(t_list, dtype=float)
    k = np.asarray(values, dtype=float)
    scaled = k / t**power
    coeffs = np.polyfit(t, scaled, min(degree, len(t) - 1))
    leading = float(coeffs[-1])
    remainder = np.abs(k - prediction * t**power)
    slope = float("nan")
    if np.all(remainder > 0):
        slope = float(np.polyfit(np.log(t), np.log(remainder), 1)[0])
    rel = abs(leading - prediction) / abs(prediction) if prediction else abs(leading)
    return {"t_list": t.tolist(), "K_values": k.tolist(), "prediction": prediction,
            "leading_fit": leading, "relative_error": rel, "remainder": remainder.tolist(),
            "remainder_slope": slope, "power": power}


def _product_metric(model: FibrationModel, t: float, phi: np.ndarray) -> tuple:
    chi_l = lift_form(model, model.chi).coeffs
    wt = chi_l + t * model.omega0.coeffs
    wp = wt + ddbar_array(model.product, phi)
    return wt, wp


def _energy_along(model: FibrationModel, t_list: Sequence[float], potential: Callable) -> list:
    values = []
    for t in t_list:
        phi = potential(t)
        wt, wp = _product_metric(model, t, phi)
        try:
            _check_positive(wt, "omega_t")
            _check_positive(wp, "omega_t + ddbar phi")
        except PositivityError:
            raise ContractError(f"t={t} is too large: the metric leaves the positive cone") from None
        values.append(mabuchi(HermitianFormField(model.product, wt), phi))
    return values


def fiber_energy_term(model: FibrationModel, phibar, psi) -> float:
    """L(psi): fiber entropy of omega0 + ddbar_V psi against chi_phibar^k minus the A_{i,j} Ricci pairings."""
    k, n = model.kappa, model.n
    base = model.base
    pb = _arr(phibar)
    ps = _arr(psi)
    chi = model.chi.coeffs
    chi_p = chi + ddbar_array(base, pb)
    w0 = model.omega0.coeffs[..., k:, k:]
    wpsi = w0 + ddbar_array(model.product, ps)[..., k:, k:]
    m = n - k
    f0 = math.factorial(m) * herm_det(w0)
    fpsi = math.factorial(m) * herm_det(wpsi)
    if fpsi.min() <= 0:
        raise PositivityError("omega0 + ddbar_V psi is not positive on some fiber")
    entropy = fiber_integrate(model, np.log(fpsi / f0) * fpsi)
    total = integrate_array(base, entropy * math.factorial(k) * herm_det(chi_p))
    ric_f = -ddbar_array(model.product, np.log(f0))[..., k:, k:]
    for (i, j), a_ij in adjunction_coefficients(n, k).items():
        fib = fiber_integrate(model, ps * wedge_array([ric_f] + [w0] * j + [wpsi] * (m - 1 - j)))
        bas = wedge_array([chi] * i + [chi_p] * (k - i))
        total -= a_ij * integrate_array(base, fib * bas)
    return total


def adjunction_expansion(model: FibrationModel, phibar, psi, t_list: Sequence[float]) -> EnergyReport:
    """K_{omega_t}(phibar + t psi) for omega_t = chi + t omega0 against its predicted t^{n-k} coefficient."""
    model.require_constant_tau("the product-space energy")
    k, n = model.kappa, model.n
    pb = lift_scalar(model, phibar)
    ps = _arr(psi)
    if ps.shape != model.product.shape:
        raise ContractError("psi must live on the product chart")
    values = _energy_along(model, t_list, lambda t: pb + t * ps)
    wp_form = weil_petersson(model)
    k_base = generalized_mabuchi(model.chi, wp_form, phibar)
    L = fiber_energy_term(model, phibar, ps)
    prediction = math.comb(n, k) * (k_base + L)
    exp = fit_expansion(t_list, values, n - k, prediction)
    exp.update({"K_base": k_base, "L": L,
                "A": {f"{i},{j}": v for (i, j), v in adjunction_coefficients(n, k).items()}})
    return EnergyReport(value=values[-1], expansion=exp,
                        metadata={"ranges": "i=0..kappa, j=0..n-kappa-1"})


def surface_adjunction(model: FibrationModel, phi, theta: Optional[HermitianFormField] = None,
                       t_list: Sequence[float] = (0.1, 0.0707, 0.05, 0.0354, 0.025)) -> EnergyReport:
    """K_{omega_t}(phi) for a base potential against 2 t K_{chi,theta}(phi).

    The default theta is the fiber-entropy form of omega0, which equals the
    Weil-Petersson form when omega0 is semi-flat.
    """
    if model.n != 2 or model.kappa != 1:
        raise ContractError("surface expansion needs n = 2 and kappa = 1")
    model.require_constant_tau("the product-space energy")
    theta = fiber_entropy_form(model) if theta is None else theta
    pb = lift_scalar(model, phi)
    values = _energy_along(model, t_list, lambda t: pb)
    k_base = generalized_mabuchi(model.chi, theta, phi)
    exp = fit_expansion(t_list, values, 1, 2.0 * k_base)
    exp["K_base"] = k_base
    return EnergyReport(value=values[-1], expansion=exp)
