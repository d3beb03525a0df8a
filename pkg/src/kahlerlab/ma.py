"""Damped Newton solvers for complex Monge-Ampere equations and related property checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._pointwise import herm_det, herm_eigs
from .errors import ConeExitError, ContractError, NonConvergenceError, NormalizationError, PositivityError
from .forms import ma_top
from .grid import (
    HermitianFormField,
    ScalarField,
    TorusChart,
    VolumeDensity,
    ddbar_array,
    integrate,
    integrate_array,
    solve_elliptic,
)

__all__ = [
    "SolveReport",
    "solve_twisted_ma",
    "solve_calabi",
    "solve_ma_density",
    "continuity_path",
    "ContinuityReport",
    "comparison_check",
    "ComparisonReport",
    "monotonicity_check",
    "MonotonicityReport",
    "linearized_twisted",
    "EIGEN_FLOOR",
]

EIGEN_FLOOR = 1e-8
MIN_STEP = 2.0**-30
COMPARISON_CONSTANT = 1.0


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)
    oscillation: float = float("nan")
    converged: bool = False
    linear_iterations: list = field(default_factory=list)
    constant: float = 0.0  # compatibility constant of the Calabi problem (mass defect)
    equation: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _metric(ref: np.ndarray, chart: TorusChart, phi: np.ndarray) -> np.ndarray:
    return ref + ddbar_array(chart, phi)


def _min_eig(a: np.ndarray) -> float:
    return float(herm_eigs(a)[..., 0].min())


def _ma(chart: TorusChart, a: np.ndarray) -> np.ndarray:
    return math.factorial(chart.dim) * herm_det(a)


def _linear_tol(res: float) -> float:
    return min(1e-4, max(1e-13, 1e-3 * res))


def solve_ma_density(ref: HermitianFormField, G, phi0=None, tol: float = 1e-11,
                     maxiter: int = 60, equation: str = "ma_top(ref + ddbar phi) = G e^phi"):
    """Solve ma_top(ref + ddbar phi) = G e^phi for a positive density G.

    ``ref`` need not be positive; ``ref + ddbar phi0`` must be.  The residual is
    sup |ma_top(ref + ddbar phi) - G e^phi| / sup G.
    """
    chart = ref.chart
    g = np.asarray(getattr(G, "density", getattr(G, "values", G)), dtype=float)
    if g.shape != chart.shape or g.min() <= 0 or not np.all(np.isfinite(g)):
        raise ContractError("right-hand density must be positive and finite on the chart")
    phi = np.zeros(chart.shape) if phi0 is None else np.array(getattr(phi0, "values", phi0), dtype=float)
    scale = float(g.max())
    log_g = np.log(g)
    report = SolveReport(equation=equation)

    a = _metric(ref.coeffs, chart, phi)
    if _min_eig(a) <= EIGEN_FLOOR:
        raise ConeExitError("initial guess is outside the positive cone")

    def residual(a_, phi_):
        return float(np.abs(_ma(chart, a_) - g * np.exp(phi_)).max()) / scale

    res = residual(a, phi)
    report.residual_history.append(res)
    for it in range(maxiter):
        if res <= tol:
            report.converged = True
            break
        log_r = np.log(_ma(chart, a)) - log_g - phi
        sol = solve_elliptic(chart, a, 1.0, -log_r, tol=_linear_tol(res))
        report.linear_iterations.append(sol.iterations)
        step = 1.0
        while True:
            trial = phi + step * sol.u
            a_trial = _metric(ref.coeffs, chart, trial)
            if _min_eig(a_trial) > EIGEN_FLOOR:
                res_trial = residual(a_trial, trial)
                if res_trial < (1.0 - 1e-4 * step) * res or res_trial <= tol:
                    break
            step *= 0.5
            if step < MIN_STEP:
                report.iterations = it
                report.oscillation = float(np.ptp(phi))
                raise NonConvergenceError(
                    f"Newton damping floor reached at residual {res:.3e}", report=report)
        phi, a, res = trial, a_trial, res_trial
        report.damping_history.append(step)
        report.residual_history.append(res)
        report.iterations = it + 1
    else:
        report.converged = res <= tol
    report.oscillation = float(np.ptp(phi))
    if not report.converged:
        raise NonConvergenceError(f"Newton stopped at residual {res:.3e} > {tol:.1e}", report=report)
    return ScalarField(chart, phi), report


def solve_twisted_ma(chi: HermitianFormField, F, tol: float = 1e-11, phi0=None,
                     maxiter: int = 60):
    """Solve (chi + ddbar phi)^k = F e^phi chi^k for positive chi and F > 0."""
    f = np.asarray(getattr(F, "values", getattr(F, "density", F)), dtype=float)
    if f.shape != chi.chart.shape:
        raise ContractError("F must live on the chart of chi")
    if f.min() <= 0:
        raise ContractError("F must be strictly positive")
    if chi.min_eigenvalue() <= EIGEN_FLOOR:
        raise ContractError("chi is not positive; use continuity_path for degenerate chi")
    G = f * ma_top(chi).density
    return solve_ma_density(chi, G, phi0=phi0, tol=tol, maxiter=maxiter,
                            equation="(chi + ddbar phi)^k = F e^phi chi^k")


def linearized_twisted(chi: HermitianFormField, phi: ScalarField, delta: ScalarField) -> ScalarField:
    """Derivative of phi -> log ma_top(chi + ddbar phi) - phi in direction delta."""
    from .forms import trace

    omega = chi + HermitianFormField(chi.chart, ddbar_array(chi.chart, phi.values))
    dd = HermitianFormField(chi.chart, ddbar_array(chi.chart, delta.values))
    return trace(omega, dd) - delta


def solve_calabi(omega: HermitianFormField, Omega: VolumeDensity, tol: float = 1e-10,
                 phi0=None, maxiter: int = 60, mass_tol: float = 1e-10):
    """Mean-zero phi with ma_top(omega + ddbar phi) = Omega."""
    chart = omega.chart
    if Omega.chart != chart:
        raise ContractError("Omega must live on the chart of omega")
    if not Omega.nonnegative:
        raise ContractError("Omega must be nonnegative")
    if not omega.is_positive(EIGEN_FLOOR):
        raise PositivityError("reference form is not positive")
    m_ref = integrate(ma_top(omega))
    m_om = integrate(Omega)
    if m_om <= 0 or abs(m_om - m_ref) > mass_tol * m_ref:
        raise NormalizationError(
            f"total masses differ: Omega {m_om:.12g} vs omega^n {m_ref:.12g}")
    target = Omega.density
    scale = float(target.max())
    phi = np.zeros(chart.shape) if phi0 is None else np.array(getattr(phi0, "values", phi0), dtype=float)
    report = SolveReport(equation="(omega + ddbar phi)^n = Omega")
    a = _metric(omega.coeffs, chart, phi)
    if _min_eig(a) <= EIGEN_FLOOR:
        raise ConeExitError("initial guess is outside the positive cone")

    def residual(a_):
        return float(np.abs(_ma(chart, a_) - target).max()) / scale

    res = residual(a)
    report.residual_history.append(res)
    for it in range(maxiter):
        if res <= tol and abs(phi.mean()) <= 1e-14:
            report.converged = True
            break
        ma = _ma(chart, a)
        sol = solve_elliptic(chart, a, 0.0, target / ma - 1.0, tol=_linear_tol(res),
                             mean=-float(phi.mean()))
        report.linear_iterations.append(sol.iterations)
        report.constant = sol.constant
        step = 1.0
        while True:
            trial = phi + step * sol.u
            a_trial = _metric(omega.coeffs, chart, trial)
            if _min_eig(a_trial) > EIGEN_FLOOR:
                res_trial = residual(a_trial)
                if res_trial < (1.0 - 1e-4 * step) * res or res_trial <= tol:
                    break
            step *= 0.5
            if step < MIN_STEP:
                report.iterations = it
                raise NonConvergenceError(
                    f"Newton damping floor reached at residual {res:.3e}", report=report)
        phi, a, res = trial, a_trial, res_trial
        report.damping_history.append(step)
        report.residual_history.append(res)
        report.iterations = it + 1
    else:
        report.converged = res <= tol
    phi = phi - phi.mean()
    report.oscillation = float(np.ptp(phi))
    if not report.converged:
        raise NonConvergenceError(f"Newton stopped at residual {res:.3e} > {tol:.1e}", report=report)
    return ScalarField(chart, phi), report


# ----------------------------------------------------------------------------
# continuity method for degenerate chi


@dataclass
class ContinuityReport:
    schedule: list
    oscillations: list
    sups: list
    infs: list
    reports: list
    potentials: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule,
            "oscillations": self.oscillations,
            "sups": self.sups,
            "infs": self.infs,
            "reports": [r.to_dict() for r in self.reports],
        }


def continuity_path(chi: HermitianFormField, F, omega_aux: HermitianFormField, steps: int = 8,
                    tol: float = 1e-11):
    """Solve (chi_j + ddbar phi)^k = F e^phi chi_j^k along chi_j = chi + omega_aux / j.

    j runs over 1, 2, 4, ..., 2^(steps-1) with warm starts.  A positive chi
    needs no regularization and is solved directly.
    """
    if chi.chart != omega_aux.chart:
        raise ContractError("chi and the regularizer live on different charts")
    if chi.min_eigenvalue() < -1e-12:
        raise ContractError("chi must be semi-positive")
    if not omega_aux.is_positive():
        raise ContractError("the regularizing form must be positive")
    if integrate(ma_top(chi)) <= 0:
        raise ContractError("chi must be big")
    if chi.min_eigenvalue() > EIGEN_FLOOR:
        phi, rep = solve_twisted_ma(chi, F, tol=tol)
        return phi, ContinuityReport([math.inf], [rep.oscillation], [phi.sup()], [phi.inf()], [rep], [phi])
    schedule = [2**i for i in range(steps)]
    out = ContinuityReport(schedule, [], [], [], [], [])
    phi = None
    for j in schedule:
        chi_j = chi + omega_aux * (1.0 / j)
        guess = None
        if phi is not None:
            for s in (1.0, 0.5, 0.25, 0.125, 0.0):
                trial = chi_j.coeffs + s * ddbar_array(chi.chart, phi.values)
                if _min_eig(trial) > EIGEN_FLOOR:
                    guess = s * phi.values
                    break
        try:
            phi, rep = solve_twisted_ma(chi_j, F, tol=tol, phi0=guess)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"continuity step j={j} failed: {exc}", report=exc.report) from exc
        out.oscillations.append(rep.oscillation)
        out.sups.append(phi.sup())
        out.infs.append(phi.inf())
        out.reports.append(rep)
        out.potentials.append(phi)
    return phi, out


# ----------------------------------------------------------------------------
# comparison principle and monotonicity


@dataclass
class ComparisonReport:
    lhs: float  # integral of (omega + ddbar psi)^n over {phi < psi}
    rhs: float  # integral of (omega + ddbar phi)^n over {phi < psi}
    gap: float
    eps_disc: float
    set_fraction: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def comparison_check(phi: ScalarField, psi: ScalarField, omega: HermitianFormField,
                     constant: float = COMPARISON_CONSTANT) -> ComparisonReport:
    """Masses of the two Monge-Ampere measures on the discrete set {phi < psi}."""
    chart = omega.chart
    mask = phi.values < psi.values
    ma_phi = _ma(chart, _metric(omega.coeffs, chart, phi.values))
    ma_psi = _ma(chart, _metric(omega.coeffs, chart, psi.values))
    lhs = integrate_array(chart, np.where(mask, ma_psi, 0.0))
    rhs = integrate_array(chart, np.where(mask, ma_phi, 0.0))
    eps = constant * chart.spacing**2 * integrate(ma_top(omega))
    gap = rhs - lhs
    return ComparisonReport(lhs, rhs, gap, eps, float(mask.mean()), gap >= -eps)


@dataclass
class MonotonicityReport:
    worst_violation: float
    eps_disc: float
    passed: bool
    phi_a: ScalarField = field(repr=False)
    phi_b: ScalarField = field(repr=False)
    reports: list = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {"worst_violation": self.worst_violation, "eps_disc": self.eps_disc,
                "passed": self.passed, "reports": [r.to_dict() for r in self.reports]}


def monotonicity_check(Omega_a: VolumeDensity, Omega_b: VolumeDensity, chi: HermitianFormField,
                       tol: float = 1e-12, eps_disc: Optional[float] = None) -> MonotonicityReport:
    """Solve (chi_* + ddbar phi)^k = e^phi Omega_* for both measures and compare e^phi Omega.

    Each measure carries its own reference form chi_* = chi + ddbar log Omega_*,
    the curvature form of the measure twisted by chi.  Each solve starts from
    phi = -log Omega_*, where the metric equals chi.
    """
    a, b = Omega_a.density, Omega_b.density
    if a.min() <= 0 or b.min() <= 0:
        raise ContractError("both measures must be strictly positive")
    if np.any(a > b):
        raise ContractError("monotonicity check needs Omega_a <= Omega_b pointwise")
    if not chi.is_positive(EIGEN_FLOOR):
        raise ContractError("chi must be positive")
    chart = chi.chart
    phis, reports, vols = [], [], []
    for dens in (a, b):
        log_d = np.log(dens)
        ref = chi + HermitianFormField(chart, ddbar_array(chart, log_d))
        phi, rep = solve_ma_density(ref, dens, phi0=-log_d, tol=tol,
                                    equation="(chi + ddbar log Omega + ddbar phi)^k = e^phi Omega")
        phis.append(phi)
        reports.append(rep)
        vols.append(np.exp(phi.values) * dens)
    if eps_disc is None:
        eps_disc = 10 * tol * float(max(v.max() for v in vols))
    worst = float(max(0.0, (vols[0] - vols[1]).max()))
    return MonotonicityReport(worst, eps_disc, worst <= eps_disc, phis[0], phis[1], reports)
