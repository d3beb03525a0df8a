"""Product-torus models of a fibration X -> base with elliptic fibers.

The fiber coordinate over a base point y is w = x_f + tau(y) y_f.  Forms on
the product carry base indices first, fiber index last.  Densities on the
product are taken against the flat measure in the (z_base, w) coordinates,
so fiber integrals use the cell area Im tau(y) / N_f^2.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._pointwise import herm_det
from .errors import ContractError, NonConvergenceError, NormalizationError, PositivityError
from .forms import ma_top
from .grid import (
    HermitianFormField,
    ScalarField,
    TorusChart,
    VolumeDensity,
    ddbar_array,
    trig_field,
)

__all__ = [
    "FibrationModel",
    "SemiFlatData",
    "DensityF",
    "ReducedData",
    "semi_flat",
    "pushforward",
    "density_F",
    "weil_petersson",
    "fiber_entropy_form",
    "reduce_model",
    "lift_scalar",
    "lift_form",
    "fiber_block",
    "base_block",
    "model_from_dict",
]

HOMOGENEITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FibrationModel:
    base: TorusChart
    fiber: TorusChart
    tau: np.ndarray  # complex fiber modulus at each base grid point
    chi: HermitianFormField
    omega0: HermitianFormField
    Omega: VolumeDensity
    description: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        if self.fiber.dim != 1:
            raise ContractError("only one-dimensional (elliptic) fibers are supported")
        tau = np.array(np.broadcast_to(np.asarray(self.tau, dtype=complex), self.base.shape))
        if not np.all(tau.imag > 0):
            raise ContractError("fiber modulus must have positive imaginary part everywhere")
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        if self.chi.chart != self.base:
            raise ContractError("chi must live on the base chart")
        if self.omega0.chart != self.product or self.Omega.chart != self.product:
            raise ContractError("omega0 and Omega must live on the product chart")
        if self.chi.min_eigenvalue() < -1e-12:
            raise ContractError("chi must be semi-positive")
        from .grid import integrate

        if integrate(ma_top(self.chi)) <= 0:
            raise ContractError("chi is not big: its top power has no mass")
        if not self.omega0.is_positive():
            raise PositivityError("omega0 must be positive definite")
        if not self.Omega.positive:
            raise PositivityError("Omega must be strictly positive")
        mass = fiber_integrate(self, ma_top_fiber(self, self.omega0))
        if np.abs(mass - 1.0).max() > 1e-9:
            raise NormalizationError(
                f"fiber mass of omega0 must be 1 on every fiber (worst {np.abs(mass - 1).max():.2e})")

    @property
    def kappa(self) -> int:
        return self.base.dim

    @property
    def n(self) -> int:
        return self.base.dim + self.fiber.dim

    @property
    def product(self) -> TorusChart:
        return _product_chart(self.base, self.fiber)

    @property
    def tau_constant(self) -> bool:
        return bool(np.ptp(self.tau.real) == 0 and np.ptp(self.tau.imag) == 0)

    def require_constant_tau(self, what: str) -> None:
        if not self.tau_constant:
            raise ContractError(f"{what} needs a constant fiber modulus")


def _product_chart(base: TorusChart, fiber: TorusChart) -> TorusChart:
    return base.product(fiber)


# ----------------------------------------------------------------------------
# lifting and blocks


def _base_expand(model: FibrationModel, arr: np.ndarray) -> np.ndarray:
    """Append singleton fiber axes to a base-shaped array."""
    return arr.reshape(arr.shape[: 2 * model.kappa] + (1, 1) + arr.shape[2 * model.kappa:])


def lift_scalar(model: FibrationModel, values) -> np.ndarray:
    """Pull a base field back to the product (constant along fibers)."""
    arr = np.asarray(getattr(values, "values", values), dtype=float)
    return np.broadcast_to(_base_expand(model, arr), model.product.shape).copy()


def lift_form(model: FibrationModel, form: HermitianFormField) -> HermitianFormField:
    """Pull a base form back to the product with zero fiber row and column."""
    k, n = model.kappa, model.n
    out = np.zeros(model.product.shape + (n, n), dtype=complex)
    out[..., :k, :k] = _base_expand(model, form.coeffs)
    return HermitianFormField(model.product, out)


def fiber_block(form) -> np.ndarray:
    coeffs = getattr(form, "coeffs", form)
    return coeffs[..., -1:, -1:]


def base_block(model: FibrationModel, form) -> np.ndarray:
    coeffs = getattr(form, "coeffs", form)
    return coeffs[..., : model.kappa, : model.kappa]


def ma_top_fiber(model: FibrationModel, form) -> np.ndarray:
    """Fiber-direction top power (for one-dimensional fibers, the fiber coefficient)."""
    return fiber_block(form)[..., 0, 0].real.copy()


def fiber_cell_area(model: FibrationModel) -> np.ndarray:
    n_f = model.fiber.resolutions[0]
    return model.tau.imag / n_f**2


def fiber_integrate(model: FibrationModel, arr: np.ndarray) -> np.ndarray:
    """Integral over each fiber slice, returned on the base grid."""
    k = model.kappa
    sums = np.sum(arr, axis=(2 * k, 2 * k + 1))
    return sums * fiber_cell_area(model)


def fiber_mean(model: FibrationModel, arr: np.ndarray) -> np.ndarray:
    k = model.kappa
    return np.mean(arr, axis=(2 * k, 2 * k + 1))


def fiber_oscillation(model: FibrationModel, arr: np.ndarray) -> float:
    k = model.kappa
    return float((arr.max(axis=(2 * k, 2 * k + 1)) - arr.min(axis=(2 * k, 2 * k + 1))).max())


def pushforward(v: VolumeDensity, model: FibrationModel) -> VolumeDensity:
    """Fiber integral of a product density; total mass is preserved exactly."""
    if v.chart != model.product:
        raise ContractError("density must live on the product chart")
    return VolumeDensity(model.base, fiber_integrate(model, v.density))


# ----------------------------------------------------------------------------
# fiber spectral calculus (per-base-point modulus)


def _fiber_symbol(model: FibrationModel) -> np.ndarray:
    """Symbol of d^2/dw dwbar over the fiber axes, broadcast over the base."""
    n_f = model.fiber.resolutions[0]
    k = np.fft.fftfreq(n_f, 1.0 / n_f)
    nyq = np.abs(k) == n_f // 2
    kx = k[:, None]
    ky = k[None, :]
    sx = np.where(nyq, 0.0, 2 * np.pi * k)[:, None]
    sy = np.where(nyq, 0.0, 2 * np.pi * k)[None, :]
    tau = _base_expand(model, model.tau)
    b = tau.imag
    xx = -((2 * np.pi * kx) ** 2)
    yy = -((2 * np.pi * ky) ** 2)
    xy = -(sx * sy)
    return (np.abs(tau) ** 2 * xx - 2 * tau.real * xy + yy) / (4 * b * b)


def fiber_ddbar(model: FibrationModel, arr: np.ndarray) -> np.ndarray:
    """Fiber-direction u_{w wbar} at every product point."""
    k = model.kappa
    axes = (2 * k, 2 * k + 1)
    return np.fft.ifft2(np.fft.fft2(arr, axes=axes) * _fiber_symbol(model), axes=axes).real


def _fiber_poisson(model: FibrationModel, src: np.ndarray) -> tuple:
    """Fiberwise mean-zero solution of u_{w wbar} = src (src fiber-mean-zero)."""
    k = model.kappa
    axes = (2 * k, 2 * k + 1)
    sym = _fiber_symbol(model)
    denom = np.where(sym == 0, 1.0, sym)
    uh = np.fft.fft2(src, axes=axes) / denom
    uh = np.where(sym == 0, 0.0, uh)
    u = np.fft.ifft2(uh, axes=axes).real
    resid = np.abs(fiber_ddbar(model, u) - src).max(axis=axes)
    return u, resid


# ----------------------------------------------------------------------------
# semi-flat forms


@dataclass(frozen=True, eq=False)
class SemiFlatData:
    psi: ScalarField
    omega_sf: Optional[HermitianFormField]  # None when the modulus varies (no product complex structure)
    theta: VolumeDensity
    fiber_metric: np.ndarray  # fiber coefficient of omega_sf at every product point
    ricci_residual: float


def semi_flat(model: FibrationModel, tol: float = 1e-10) -> SemiFlatData:
    """Fiberwise Ricci-flat correction of omega0.

    Step one finds h_y with dd^c_V h_y = -dd^c_V log omega_y and the mass
    normalization; step two solves the fiberwise Monge-Ampere equation
    (omega_y + dd^c psi_y) = e^{h_y} omega_y, which is linear on curves.
    """
    if model.fiber.dim != 1:
        raise ContractError("semi-flat construction is implemented for one-dimensional fibers")
    g = ma_top_fiber(model, model.omega0)
    k = model.kappa
    axes = (2 * k, 2 * k + 1)
    area = model.tau.imag
    mass = fiber_integrate(model, g)
    h = np.log(_base_expand(model, mass / area)) - np.log(g)
    target = np.exp(h) * g - g
    psi, resid = _fiber_poisson(model, target)
    bad = np.argwhere(resid > tol * (1.0 + np.abs(target).max()))
    if bad.size:
        raise NonConvergenceError(f"fiberwise solve failed at base index {tuple(bad[0])}",
                                  report={"residual": float(resid.max())})
    weights = g / np.sum(g, axis=axes, keepdims=True)
    psi = psi - np.sum(psi * weights, axis=axes, keepdims=True)
    fiber_metric = g + fiber_ddbar(model, psi)
    omega_sf = None
    if model.tau_constant:
        omega_sf = model.omega0 + HermitianFormField(model.product, ddbar_array(model.product, psi))
        fiber_metric = ma_top_fiber(model, omega_sf)
    theta = VolumeDensity(model.product, fiber_metric)
    ric = fiber_ddbar(model, np.log(fiber_metric))
    return SemiFlatData(ScalarField(model.product, psi), omega_sf, theta, fiber_metric,
                        float(np.abs(ric).max()))


# ----------------------------------------------------------------------------
# the density F and the Weil-Petersson form


@dataclass(frozen=True, eq=False)
class DensityF:
    F: ScalarField
    alternate: ScalarField  # fiber mean of Omega / (Theta ^ chi^kappa)
    deviation: float  # worst relative fiberwise spread of Omega / (Theta ^ chi^kappa)


def density_F(model: FibrationModel, sf: Optional[SemiFlatData] = None) -> DensityF:
    """F = f_* Omega / chi^kappa, cross-checked against Omega / (Theta ^ chi^kappa)."""
    chi_top = ma_top(model.chi).density
    if chi_top.min() <= 1e-14 * max(1.0, chi_top.max()):
        raise ContractError("chi degenerates on the base; F is undefined there")
    F = pushforward(model.Omega, model).density / chi_top
    if sf is None:
        sf = semi_flat(model)
    ratio = model.Omega.density / (sf.theta.density * _base_expand(model, chi_top))
    k = model.kappa
    axes = (2 * k, 2 * k + 1)
    spread = (ratio.max(axis=axes) - ratio.min(axis=axes)) / ratio.mean(axis=axes)
    mass = fiber_integrate(model, sf.theta.density)
    alt = fiber_mean(model, ratio) * mass
    return DensityF(ScalarField(model.base, F), ScalarField(model.base, alt), float(spread.max()))


def weil_petersson(model: FibrationModel) -> HermitianFormField:
    """-sqrt(-1) d dbar log Im tau on the base (the fiber L2 norm of dw is Im tau)."""
    if not np.all(model.tau.imag > 0):
        raise ContractError("fiber modulus left the upper half-plane")
    return HermitianFormField(model.base, -ddbar_array(model.base, np.log(model.tau.imag)))


def fiber_entropy_form(model: FibrationModel) -> HermitianFormField:
    """ddbar of y -> integral over the fiber of log(Theta0) Theta0, Theta0 the fiber power of omega0.

    For semi-flat omega0 with unit fiber mass Theta0 = 1 / Im tau, so this is
    the Weil-Petersson form; in general it is the twist that governs the small-t
    Mabuchi energy of surfaces.
    """
    g = ma_top_fiber(model, model.omega0)
    s = fiber_integrate(model, np.log(g) * g)
    return HermitianFormField(model.base, ddbar_array(model.base, s))


# ----------------------------------------------------------------------------
# reduction to the base for fiber-homogeneous data


@dataclass(frozen=True, eq=False)
class ReducedData:
    omega0_base: HermitianFormField
    fiber_coeff: np.ndarray  # fiber coefficient of omega0 as a function on the base
    omega_red: VolumeDensity  # pushforward of Omega
    fiber_mass: np.ndarray


def fiber_homogeneity_defect(model: FibrationModel) -> float:
    """Largest fiberwise variation of the data that reduced mode assumes constant."""
    k = model.kappa
    axes = (2 * k, 2 * k + 1)
    c = model.omega0.coeffs
    worst = 0.0
    if k and np.abs(c[..., :k, k:]).max() > 0:
        worst = max(worst, float(np.abs(c[..., :k, k:]).max()))
    for arr in (c[..., :k, :k], c[..., k:, k:]):
        worst = max(worst, float(np.abs(np.ptp(arr.real, axis=axes)).max()),
                    float(np.abs(np.ptp(arr.imag, axis=axes)).max()))
    ratio = model.Omega.density / ma_top_fiber(model, model.omega0)
    worst = max(worst, float((np.ptp(ratio, axis=axes) / ratio.mean(axis=axes)).max()))
    return worst


def reduce_model(model: FibrationModel, tol: float = HOMOGENEITY_TOL) -> ReducedData:
    defect = fiber_homogeneity_defect(model)
    if defect > tol:
        raise ContractError(f"data are not fiber-homogeneous (defect {defect:.2e}); use full mode")
    k = model.kappa
    c = model.omega0.coeffs
    first = (slice(None),) * (2 * k) + (0, 0)
    return ReducedData(
        omega0_base=HermitianFormField(model.base, c[first][..., :k, :k]),
        fiber_coeff=c[first][..., k, k].real.copy(),
        omega_red=pushforward(model.Omega, model),
        fiber_mass=fiber_integrate(model, ma_top_fiber(model, model.omega0)),
    )


# ----------------------------------------------------------------------------
# model description files


def _modes(data) -> list:
    return list(data.get("modes", [])) if isinstance(data, dict) else []


def _potential_form(chart: TorusChart, data) -> HermitianFormField:
    if isinstance(data, (int, float)):
        return HermitianFormField.identity(chart, float(data))
    scale = float(data.get("scale", 1.0))
    form = scale * np.eye(chart.dim) + ddbar_array(chart, trig_field(chart, _modes(data)))
    return HermitianFormField(chart, form)


def _tau_from(desc: dict, base: TorusChart, fiber: TorusChart) -> np.ndarray:
    spec = desc.get("tau", {"kind": "constant", "data": [fiber.moduli[0].real, fiber.moduli[0].imag]})
    kind = spec.get("kind")
    data = spec.get("data")
    if kind == "constant":
        re, im = data
        return np.full(base.shape, complex(re, im))
    if kind == "profile":
        re = float(data.get("re", 0.0))
        im = float(data.get("im", 1.0))
        return re + 1j * im * np.exp(trig_field(base, _modes(data)))
    raise ContractError(f"tau.kind must be 'constant' or 'profile', got {kind!r}")


def model_from_dict(desc: dict) -> FibrationModel:
    """Build a model from its JSON description.

    Keys: base, fiber (charts); tau {constant | profile}; chi {flat_scaled |
    potential}; omega0 {block}; Omega {flat | exp_profile | stationary}.
    Mode lists hold {k, amp, phase} entries evaluated by ``trig_field``.
    """
    try:
        base = TorusChart.from_dict(desc["base"])
        fiber = TorusChart.from_dict(desc["fiber"])
        chi_spec = desc["chi"]
        om_spec = desc.get("omega0", {"kind": "block", "data": {"base": "chi"}})
        Om_spec = desc.get("Omega", {"kind": "flat", "data": 1.0})
    except KeyError as exc:
        raise ContractError(f"model description is missing field {exc}") from None
    product = base.product(fiber)
    k = base.dim
    tau = _tau_from(desc, base, fiber)
    if not np.all(tau.imag > 0):
        raise ContractError("tau profile leaves the upper half-plane")

    if chi_spec.get("kind") == "flat_scaled":
        chi = HermitianFormField.identity(base, float(chi_spec["data"]))
    elif chi_spec.get("kind") == "potential":
        chi = _potential_form(base, chi_spec["data"])
    else:
        raise ContractError("chi.kind must be 'flat_scaled' or 'potential'")

    if om_spec.get("kind") != "block":
        raise ContractError("omega0.kind must be 'block'")
    od = om_spec.get("data", {})
    base_part = chi if od.get("base", "chi") == "chi" else _potential_form(base, od["base"])
    coeffs = np.zeros(product.shape + (k + 1, k + 1), dtype=complex)
    coeffs[..., :k, :k] = base_part.coeffs.reshape(base.shape + (1, 1, k, k))
    coeffs[..., k, k] = (1.0 / tau.imag).reshape(base.shape + (1, 1))
    pmodes = list(od.get("potential_modes", []))
    if pmodes:
        if np.ptp(tau.real) or np.ptp(tau.imag):
            raise ContractError("product potential modes need a constant fiber modulus")
        coeffs = coeffs + ddbar_array(product, trig_field(product, pmodes))
    omega0 = HermitianFormField(product, coeffs)

    # flat and exp_profile densities are taken against the flat measure in (z, w),
    # so their fiber integrals carry the fiber area Im tau
    kind = Om_spec.get("kind")
    data = Om_spec.get("data")
    if kind == "flat":
        Omega = np.full(product.shape, float(data if data is not None else 1.0))
    elif kind == "exp_profile":
        Omega = float(data.get("scale", 1.0)) * np.exp(trig_field(product, _modes(data)))
    elif kind == "stationary":
        n = k + 1
        chi_top = ma_top(chi).density.reshape(base.shape + (1, 1))
        Omega = math.comb(n, k) * chi_top * omega0.coeffs[..., k, k].real
    else:
        raise ContractError("Omega.kind must be 'flat', 'exp_profile' or 'stationary'")
    return FibrationModel(base, fiber, tau, chi, omega0, VolumeDensity(product, Omega),
                          description=copy.deepcopy(desc))
