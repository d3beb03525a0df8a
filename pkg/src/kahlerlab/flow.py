"""Potential form of the normalized Kahler-Ricci flow on product fibrations.

The flow is phi' = log(e^{(n-k)t} (omega_t + ddbar phi)^n / Omega) - phi with
omega_t = chi + e^{-t}(omega0 - chi).  Full mode evolves phi on the product
grid.  Reduced mode evolves a base potential for fiber-homogeneous data using
(omega_t + ddbar phi)^n = binom(n, k) (base part)^k ^ (e^{-t} fiber part),
so the e^{(n-k)t} factor cancels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._pointwise import herm_det, herm_eigs, herm_inv, herm_trace_product
from .errors import ConeExitError, ContractError
from .fibration import (
    FibrationModel,
    fiber_block,
    fiber_integrate,
    fiber_oscillation,
    lift_form,
    lift_scalar,
    ma_top_fiber,
    reduce_model,
)
from .grid import (
    HermitianFormField,
    ScalarField,
    TorusChart,
    _symbols,
    ddbar_array,
    dz_array,
    field_from_dict,
    field_to_dict,
    solve_elliptic,
)

__all__ = [
    "FlowState",
    "DiagnosticsRecord",
    "FlowSchedule",
    "FlowProblem",
    "FlowRun",
    "reference_metric",
    "flow_rhs",
    "step",
    "run_flow",
    "convergence_check",
    "limit_potential",
    "limit_residuals",
    "diagnostics",
    "initial_state",
    "ConvergenceReport",
    "stable_dt",
    "state_to_dict",
    "state_from_dict",
    "TRAJECTORY_COLUMNS",
]

TRAJECTORY_COLUMNS = (
    "t", "sup_phi", "inf_phi", "sup_phidot", "sup_e_nt_vol_ratio", "fiber_vol_ratio",
    "R_min", "R_max", "grad_u_sup", "fiber_osc", "c0_dist_to_limit",
)


def reference_metric(t: float, chi: HermitianFormField, omega0: HermitianFormField) -> HermitianFormField:
    """chi + e^{-t}(omega0 - chi)."""
    if chi.chart != omega0.chart:
        raise ContractError("chi and omega0 must share a chart (lift chi first)")
    if math.isinf(t):
        return chi
    return HermitianFormField(chi.chart, chi.coeffs + math.exp(-t) * (omega0.coeffs - chi.coeffs))


class FlowProblem:
    """Precomputed data for one model in one mode."""

    def __init__(self, model: FibrationModel, mode: str = "reduced"):
        if mode not in ("full", "reduced"):
            raise ContractError("mode must be 'full' or 'reduced'")
        self.model = model
        self.mode = mode
        self.n = model.n
        self.kappa = model.kappa
        self.binom = math.comb(model.n, model.kappa)
        if mode == "reduced":
            red = reduce_model(model)
            self.chart = model.base
            self.chi = model.chi.coeffs
            self.omega0 = red.omega0_base.coeffs
            self.log_density = np.log(red.omega_red.density) - np.log(red.fiber_mass)
            self.log_fiber_coeff = np.log(red.fiber_coeff)
            self.fiber_mass = red.fiber_mass
        else:
            model.require_constant_tau("full-mode flow")
            self.chart = model.product
            self.chi = lift_form(model, model.chi).coeffs
            self.omega0 = model.omega0.coeffs
            self.log_density = np.log(model.Omega.density)
        self.dim = self.chart.dim
        self._flat_symbol_max = float(sum(np.abs(s).max() for s in _symbols(self.chart).diag))

    def reference(self, t: float) -> np.ndarray:
        return self.chi + math.exp(-t) * (self.omega0 - self.chi)

    def metric(self, t: float, phi: np.ndarray) -> np.ndarray:
        return self.reference(t) + ddbar_array(self.chart, phi)

    def log_volume_ratio(self, t: float, a: np.ndarray) -> np.ndarray:
        """log of e^{(n-k)t} omega^n / Omega (equivalently of its reduced form)."""
        det = herm_det(a)
        if det.min() <= 0:
            bad = np.unravel_index(int(np.argmin(det)), det.shape)
            raise ConeExitError(f"flow metric degenerate at index {bad}, t={t:.6g}", bad)
        top = math.factorial(self.dim) * det
        if self.mode == "reduced":
            return math.log(self.binom) + np.log(top) - self.log_density
        return (self.n - self.kappa) * t + np.log(top) - self.log_density

    def rhs(self, t: float, phi: np.ndarray) -> np.ndarray:
        return self.log_volume_ratio(t, self.metric(t, phi)) - phi

    def check_cone(self, t: float, a: np.ndarray) -> None:
        eig = herm_eigs(a)[..., 0]
        if eig.min() <= 0:
            bad = np.unravel_index(int(np.argmin(eig)), eig.shape)
            raise ConeExitError(f"flow left the Kahler cone at index {bad}, t={t:.6g}", bad)

    def laplacian_bound(self, a: np.ndarray) -> float:
        inv_max = float(herm_eigs(herm_inv(a))[..., -1].max())
        return inv_max * self._flat_symbol_max + 1.0


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: ScalarField
    mode: str
    step_count: int = 0
    dt: float = 0.0
    omega: Optional[HermitianFormField] = field(default=None, repr=False)


def flow_rhs(phi: ScalarField, t: float, model: FibrationModel, mode: str = "reduced") -> ScalarField:
    prob = model if isinstance(model, FlowProblem) else FlowProblem(model, mode)
    return ScalarField(prob.chart, prob.rhs(t, phi.values))


def stable_dt(state: FlowState, problem: FlowProblem) -> float:
    """Largest explicit step allowed: 0.4 / lambda_max of the linearized operator."""
    a = problem.metric(state.t, state.phi.values)
    return 0.4 / problem.laplacian_bound(a)


def _make_state(problem: FlowProblem, t: float, phi: np.ndarray, count: int, dt: float) -> FlowState:
    a = problem.metric(t, phi)
    problem.check_cone(t, a)
    return FlowState(t, ScalarField(problem.chart, phi), problem.mode, count,
                     dt, HermitianFormField(problem.chart, a))


def step(state: FlowState, dt: float, problem: FlowProblem, scheme: str = "semi_implicit",
         lin_tol: float = 1e-12) -> FlowState:
    """Advance by dt.

    ``semi_implicit`` is linearly implicit Euler: (I + dt (L + 1)) delta = dt rhs
    with L = -tr_omega ddbar the metric Laplacian.  ``explicit_rk4`` is classical
    Runge-Kutta and requires dt below the stability bound.
    """
    if dt <= 0:
        raise ContractError("time step must be positive")
    if state.mode != problem.mode:
        raise ContractError("state and problem use different modes")
    t, phi = state.t, state.phi.values
    count = state.step_count + 1
    t_new = t + dt
    if scheme == "semi_implicit":
        a = problem.metric(t, phi)
        r = problem.log_volume_ratio(t, a) - phi
        sol = solve_elliptic(problem.chart, a, (1.0 + dt) / dt, -r, tol=lin_tol)
        new = phi + sol.u
    elif scheme == "explicit_rk4":
        limit = stable_dt(state, problem)
        if dt > limit * (1 + 1e-12):
            raise ContractError(f"explicit step {dt:.3e} exceeds stability bound {limit:.3e}")
        f = problem.rhs
        k1 = f(t, phi)
        k2 = f(t + dt / 2, phi + dt / 2 * k1)
        k3 = f(t + dt / 2, phi + dt / 2 * k2)
        k4 = f(t + dt, phi + dt * k3)
        new = phi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ContractError(f"unknown scheme {scheme!r}")
    return _make_state(problem, t_new, new, count, dt)


# ----------------------------------------------------------------------------
# diagnostics


@dataclass
class DiagnosticsRecord:
    t: float
    sup_phi: float
    inf_phi: float
    sup_phidot: float
    inf_phidot: float
    sup_e_nt_vol_ratio: float
    fiber_vol_ratio: float
    R_min: float
    R_max: float
    grad_u_sup: float
    fiber_osc: float
    c0_dist_to_limit: float = float("nan")

    def row(self) -> list:
        return [getattr(self, c) for c in TRAJECTORY_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def _scalar_curvature(problem: FlowProblem, a: np.ndarray) -> np.ndarray:
    log_det = np.log(herm_det(a))
    if problem.mode == "reduced":
        log_det = log_det + problem.log_fiber_coeff
    ric = -ddbar_array(problem.chart, log_det)
    return herm_trace_product(herm_inv(a), ric)


def diagnostics(state: FlowState, problem: FlowProblem, phi_limit=None) -> DiagnosticsRecord:
    t = state.t
    phi = state.phi.values
    a = problem.metric(t, phi)
    log_ratio = problem.log_volume_ratio(t, a)
    phidot = log_ratio - phi
    u = log_ratio
    grad = dz_array(problem.chart, u)
    inv = herm_inv(a)
    grad_sq = np.einsum("...ij,...i,...j->...", inv, np.conj(grad), grad).real
    R = _scalar_curvature(problem, a)
    model = problem.model
    if problem.mode == "reduced":
        fiber_ratio = float(problem.fiber_mass.max())
        fiber_osc = 0.0
    else:
        m = problem.n - problem.kappa
        fiber_top = ma_top_fiber(model, a)
        fiber_ratio = float((math.exp(m * t) * fiber_integrate(model, fiber_top)).max())
        fiber_osc = fiber_oscillation(model, phi)
    dist = float("nan")
    if phi_limit is not None:
        lim = np.asarray(getattr(phi_limit, "values", phi_limit))
        if problem.mode == "full" and lim.shape == model.base.shape:
            lim = lift_scalar(model, lim)
        dist = float(np.abs(phi - math.log(problem.binom) - lim).max())
    return DiagnosticsRecord(
        t=t,
        sup_phi=float(phi.max()),
        inf_phi=float(phi.min()),
        sup_phidot=float(phidot.max()),
        inf_phidot=float(phidot.min()),
        sup_e_nt_vol_ratio=float(np.exp(log_ratio).max()),
        fiber_vol_ratio=fiber_ratio,
        R_min=float(R.min()),
        R_max=float(R.max()),
        grad_u_sup=float(grad_sq.max()),
        fiber_osc=fiber_osc,
        c0_dist_to_limit=dist,
    )


# ----------------------------------------------------------------------------
# trajectories


@dataclass
class FlowSchedule:
    T: float = 10.0
    dt: float = 0.05
    scheme: str = "semi_implicit"
    probes: Sequence = ()
    checkpoint_every: float = 0.5

    def probe_times(self) -> list:
        if self.probes:
            return sorted(float(p) for p in self.probes)
        k = int(round(self.T / self.checkpoint_every))
        return [i * self.checkpoint_every for i in range(k + 1)]


@dataclass
class FlowRun:
    records: list
    final: FlowState
    checkpoints: list = field(default_factory=list, repr=False)


def _on_grid(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ContractError(f"probe time {t} is not a multiple of dt={dt}")
    return k


def initial_state(problem: FlowProblem, phi0=None, dt: float = 0.0) -> FlowState:
    phi = np.zeros(problem.chart.shape) if phi0 is None else np.array(getattr(phi0, "values", phi0), float)
    return _make_state(problem, 0.0, phi, 0, dt)


def run_flow(model, schedule: FlowSchedule, mode: str = "reduced", phi_limit=None,
             start: Optional[FlowState] = None, phi0=None, keep_checkpoints: bool = False) -> FlowRun:
    """Integrate to schedule.T, recording diagnostics at the probe times.

    Times are kept as step_count * dt so a run resumed from a checkpoint is
    bit-identical to an uninterrupted one.
    """
    problem = model if isinstance(model, FlowProblem) else FlowProblem(model, mode)
    dt = float(schedule.dt)
    state = start if start is not None else initial_state(problem, phi0, dt)
    if start is not None and start.step_count and abs(start.dt - dt) > 0:
        raise ContractError("resumed runs must keep the time step of the checkpoint")
    probe_steps = {_on_grid(p, dt) for p in schedule.probe_times() if p <= schedule.T + 1e-12}
    last = _on_grid(schedule.T, dt)
    records, checkpoints = [], []
    if state.step_count in probe_steps:
        records.append(diagnostics(state, problem, phi_limit))
    while state.step_count < last:
        state = _advance(state, dt, problem, schedule.scheme)
        if state.step_count in probe_steps:
            records.append(diagnostics(state, problem, phi_limit))
            if keep_checkpoints:
                checkpoints.append(state_to_dict(state))
    return FlowRun(records, state, checkpoints)


def _advance(state: FlowState, dt: float, problem: FlowProblem, scheme: str) -> FlowState:
    nxt = step(state, dt, problem, scheme)
    t = (state.step_count + 1) * dt
    return FlowState(t, nxt.phi, nxt.mode, nxt.step_count, dt, nxt.omega)


def state_to_dict(state: FlowState) -> dict:
    return {"t": state.t, "mode": state.mode, "step_count": state.step_count, "dt": state.dt,
            "phi": field_to_dict(state.phi)}


def state_from_dict(data: dict, problem: FlowProblem) -> FlowState:
    phi = field_from_dict(data["phi"])
    if phi.chart != problem.chart or data["mode"] != problem.mode:
        raise ContractError("checkpoint does not match the flow problem")
    st = _make_state(problem, float(data["t"]), phi.values, int(data["step_count"]), float(data["dt"]))
    return st


# ----------------------------------------------------------------------------
# convergence to the limit potential


@dataclass
class ConvergenceReport:
    times: list
    distances: list
    rate: float
    strictly_decreasing: bool
    limit_residual: float  # sup of Ric(w) + w - w_WP
    twisted_residual: float  # same minus the data twist chi + Ric(Omega)
    solver_tol: float

    def to_dict(self) -> dict:
        return asdict(self)


def limit_potential(model: FibrationModel, tol: float = 1e-11):
    """phi_inf solving (chi + ddbar phi)^k = F e^phi chi^k with F = f_* Omega / chi^k."""
    from .fibration import density_F
    from .ma import solve_twisted_ma

    F = density_F(model).F
    return solve_twisted_ma(model.chi, F, tol=tol)


def limit_residuals(model: FibrationModel, phi_inf: ScalarField) -> tuple:
    """Sup norms of Ric(w) + w - w_WP and of the same form minus chi + Ric(Omega_hol)."""
    from .fibration import pushforward, weil_petersson
    from .forms import ricci

    base = model.base
    w = model.chi + HermitianFormField(base, ddbar_array(base, phi_inf.values))
    wp = weil_petersson(model)
    res = ricci(w) + w - wp
    omega_hol = pushforward(model.Omega, model).density / model.tau.imag
    twist = model.chi - HermitianFormField(base, ddbar_array(base, np.log(omega_hol)))
    return res.sup_norm(), (res - twist).sup_norm()


def convergence_check(run: FlowRun, model: FibrationModel, phi_inf: Optional[ScalarField] = None,
                      solver_tol: float = 1e-11) -> ConvergenceReport:
    """Distances to phi_inf + log binom(n, k) at the probes, fitted decay rate, limit residuals."""
    if phi_inf is None:
        phi_inf, _ = limit_potential(model, solver_tol)
    recs = [r for r in run.records if r.t > 0]
    if any(math.isnan(r.c0_dist_to_limit) for r in recs):
        raise ContractError("run was recorded without the limit potential")
    times = [r.t for r in recs]
    dists = [r.c0_dist_to_limit for r in recs]
    rate = float("nan")
    if len(times) >= 2 and min(dists) > 0:
        slope = np.polyfit(times, np.log(dists), 1)[0]
        rate = float(-slope)
    dec = all(b < a for a, b in zip(dists, dists[1:]))
    res, twisted = limit_residuals(model, phi_inf)
    return ConvergenceReport(times, dists, rate, dec, res, twisted, solver_tol)
