"""Acceptance battery: each check measures one quantity and compares it with a fixed bound."""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import scenarios
from .energy import (
    adjunction_expansion,
    cubic_path,
    generalized_mabuchi,
    linear_path,
    mabuchi_variation,
    path_mabuchi,
    surface_adjunction,
)
from .fibration import model_from_dict
from .flow import FlowSchedule, convergence_check, limit_potential, limit_residuals, run_flow
from .forms import ma_top
from .grid import (
    HermitianFormField,
    TorusChart,
    VolumeDensity,
    _symbols,
    band_limited,
    ddbar_array,
    field_from_dict,
    integrate,
    trig_field,
)
from .ma import comparison_check, monotonicity_check, solve_calabi, solve_twisted_ma

SUITE_VERSION = "1"
MA_TOL = 1e-11


@dataclass
class CriterionResult:
    id: str
    status: str
    measured: float
    bound: float
    runtime_s: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def _result(cid: str, ok: bool, measured: float, bound: float, **detail) -> CriterionResult:
    return CriterionResult(cid, "pass" if ok else "fail", float(measured), float(bound), 0.0, detail)


def _model(name: str, **kw):
    return model_from_dict(scenarios.get(name, **kw)["model"])


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ----------------------------------------------------------------------------
# independent oracle for the symmetric one-dimensional problem


def line_oracle(amplitude: float = 0.1, points: int = 4096, tol: float = 1e-14) -> np.ndarray:
    """phi(x) solving 1 + phi''/4 = exp(a cos 2 pi x) e^phi on the unit circle.

    Newton iteration on a fourth-order periodic finite-difference Laplacian,
    sharing no code with the spectral solvers.
    """
    h = 1.0 / points
    x = np.arange(points) * h
    f = np.exp(amplitude * np.cos(2 * np.pi * x))
    stencil = {0: -30.0, 1: 16.0, -1: 16.0, 2: -1.0, -2: -1.0}
    lap = sp.csc_matrix((points, points))
    for off, c in stencil.items():
        shift = sp.eye(points, k=off) + (sp.eye(points, k=off - np.sign(off) * points) if off else 0)
        lap = lap + c / (12 * h * h) * shift
    phi = np.zeros(points)
    for _ in range(50):
        res = 1 + lap @ phi / 4 - f * np.exp(phi)
        if np.abs(res).max() < tol:
            break
        jac = lap / 4 - sp.diags(f * np.exp(phi))
        phi = phi - spla.spsolve(jac.tocsc(), res)
    return phi


# ----------------------------------------------------------------------------
# criteria


def c1_trivial_twisted() -> CriterionResult:
    model = _model("product_generic")
    F = np.ones(model.base.shape)
    t0 = time.perf_counter()
    phi, _ = solve_twisted_ma(model.chi, F, tol=MA_TOL)
    elapsed = time.perf_counter() - t0
    sup = phi.sup_norm()
    return _result("1", sup <= 1e-10 and elapsed < 1.0, sup, 1e-10, solve_seconds=elapsed)


def c2_line_oracle() -> CriterionResult:
    chart = TorusChart.square(1, 64)
    x = chart.coordinates()[0]
    F = np.broadcast_to(np.exp(0.1 * np.cos(2 * np.pi * x)), chart.shape)
    phi, _ = solve_twisted_ma(HermitianFormField.identity(chart), F, tol=1e-13)
    ref = line_oracle()[:: 4096 // 64]
    dev = float(np.abs(phi.values - ref[:, None]).max())
    return _result("2", dev <= 1e-7, dev, 1e-7)


def _random_density(chart, rng, mass: float, amplitude: float = 0.3) -> VolumeDensity:
    d = np.exp(band_limited(chart, rng, 2, amplitude))
    return VolumeDensity(chart, d * mass / integrate(VolumeDensity(chart, d)))


def c3_calabi(seed: int = 3) -> CriterionResult:
    rng = np.random.default_rng(seed)
    chart = TorusChart.square(2, 16)
    omega = HermitianFormField.identity(chart) + HermitianFormField(
        chart, ddbar_array(chart, band_limited(chart, rng, 1, 0.02)))
    phi, _ = solve_calabi(omega, ma_top(omega))
    trivial = phi.sup_norm()
    Omega = _random_density(chart, rng, integrate(ma_top(omega)))
    phi_a, rep_a = solve_calabi(omega, Omega)
    phi_b, rep_b = solve_calabi(omega, Omega, phi0=band_limited(chart, rng, 1, 0.01))
    residual = max(rep_a.residual_history[-1], rep_b.residual_history[-1])
    agree = float(np.abs(phi_a.values - phi_b.values).max())
    ok = trivial <= 1e-10 and residual <= 1e-8 and agree <= 1e-8
    return _result("3", ok, max(trivial / 1e-10, residual / 1e-8, agree / 1e-8), 1.0,
                   trivial_sup=trivial, residual=residual, init_agreement=agree,
                   note="measured is the worst ratio to its own bound")


def c4_comparison(seed: int = 4, pairs: int = 50) -> CriterionResult:
    rng = np.random.default_rng(seed)
    chart = TorusChart.square(1, 64)
    omega = HermitianFormField.identity(chart)
    worst = math.inf
    from .grid import ScalarField

    for _ in range(pairs):
        phi = band_limited(chart, rng, 3, 0.01)
        psi = band_limited(chart, rng, 3, 0.01)
        rep = comparison_check(ScalarField(chart, phi), ScalarField(chart, psi), omega)
        worst = min(worst, rep.gap)
    return _result("4", worst >= -1e-6, worst, -1e-6, pairs=pairs)


def c5_monotonicity(seed: int = 5, pairs: int = 20) -> CriterionResult:
    rng = np.random.default_rng(seed)
    chart = TorusChart.square(1, 64)
    chi = HermitianFormField.identity(chart)
    worst = 0.0
    for _ in range(pairs):
        a = np.exp(band_limited(chart, rng, 2, 0.05))
        b = a * (1 + 0.5 * np.exp(band_limited(chart, rng, 2, 0.3)) * rng.uniform(0.1, 1.0))
        rep = monotonicity_check(VolumeDensity(chart, a), VolumeDensity(chart, b), chi)
        worst = max(worst, rep.worst_violation)
    return _result("5", worst <= 1e-7, worst, 1e-7, pairs=pairs)


def _flow_maxima(records) -> dict:
    return {k: max(getattr(r, k) for r in records)
            for k in ("sup_phi", "sup_phidot", "sup_e_nt_vol_ratio")}


def c6_uniform_bounds() -> CriterionResult:
    model = _model("product_generic")
    short = run_flow(model, FlowSchedule(T=10.0, dt=0.05))
    long = run_flow(model, FlowSchedule(T=20.0, dt=0.05))
    a, b = _flow_maxima(short.records), _flow_maxima(long.records)
    worst = max(_rel(a[k], b[k]) for k in a)
    return _result("6", worst <= 0.01, worst, 0.01, T10=a, T20=b)


def c7_collapse_rate() -> CriterionResult:
    cfg = scenarios.get("product_generic", base_n=8, fiber_n=8)
    cfg["model"]["Omega"]["data"]["modes"].append({"k": [0, 0, 1, 0], "amp": 0.2, "phase": 0.0})
    model = model_from_dict(cfg["model"])
    run = run_flow(model, FlowSchedule(T=10.0, dt=0.05), mode="full")
    vals = [r.fiber_vol_ratio for r in run.records if r.t >= 1.0]
    ratio = max(vals) / min(vals)
    return _result("7", ratio <= 4.0, ratio, 4.0, band=[min(vals), max(vals)], mode="full")


def _probe_run(name: str, probes=(0.0, 2.0, 4.0, 6.0, 8.0, 10.0)):
    model = _model(name)
    phi_inf, _ = limit_potential(model, MA_TOL)
    run = run_flow(model, FlowSchedule(T=10.0, dt=0.05, probes=list(probes)), phi_limit=phi_inf)
    return model, phi_inf, run


def c8_convergence() -> list:
    out = []
    model, phi_inf, run = _probe_run("varying_tau")
    rep = convergence_check(run, model, phi_inf, MA_TOL)
    ok = rep.strictly_decreasing and rep.rate >= 0.5
    out.append(_result("8a", ok, rep.rate, 0.5, distances=rep.distances,
                       strictly_decreasing=rep.strictly_decreasing))
    bound = 10 * MA_TOL
    out.append(_result("8b", rep.limit_residual <= bound, rep.limit_residual, bound,
                       residual="sup |Ric(w) + w - w_WP|",
                       twisted_residual=rep.twisted_residual))
    return out


def twisted_residual_bound(chart: TorusChart, tol: float = MA_TOL) -> float:
    """10 tol times the largest ddbar symbol: second derivatives amplify solver noise by that factor."""
    return 10 * tol * float(np.abs(_symbols(chart).diag).max())


def c9_curvature_band() -> CriterionResult:
    bands = {}
    for n in (64, 128):
        run = run_flow(_model("product_generic", base_n=n), FlowSchedule(T=10.0, dt=0.05))
        bands[n] = (min(r.R_min for r in run.records), max(r.R_max for r in run.records))
    scale = max(abs(v) for v in bands[64])
    dev = max(abs(bands[64][i] - bands[128][i]) for i in range(2)) / scale
    return _result("9", dev <= 0.05, dev, 0.05, band_64=bands[64], band_128=bands[128])


def c10_full_vs_reduced() -> CriterionResult:
    probes = [0.5, 1.0, 2.0]
    sch = FlowSchedule(T=2.0, dt=0.05, probes=probes)
    red = run_flow(_model("product_generic", base_n=64, fiber_n=4), sch, keep_checkpoints=True)
    full = run_flow(_model("product_generic", base_n=16, fiber_n=16), sch, mode="full",
                    keep_checkpoints=True)
    worst = 0.0
    for a, b in zip(red.checkpoints, full.checkpoints):
        pr = field_from_dict(a["phi"]).values[::4, ::4]
        pf = field_from_dict(b["phi"]).values
        worst = max(worst, float(np.abs(pf - pr[:, :, None, None]).max()))
    return _result("10", worst <= 1e-4, worst, 1e-4, times=probes)


def c11_mabuchi(seed: int = 11) -> list:
    rng = np.random.default_rng(seed)
    chart = TorusChart.square(2, 16)
    omega = HermitianFormField.identity(chart) + HermitianFormField(
        chart, ddbar_array(chart, band_limited(chart, rng, 1, 0.01)))
    theta = HermitianFormField(chart, ddbar_array(chart, band_limited(chart, rng, 1, 0.01)))
    phi = band_limited(chart, rng, 1, 0.01)
    bend = band_limited(chart, rng, 1, 0.01)
    lin = path_mabuchi(omega, theta, linear_path(phi))
    cub = path_mabuchi(omega, theta, cubic_path(phi, bend))
    path_gap = abs(lin - cub)
    delta = band_limited(chart, rng, 2, 1.0)
    s = 1e-5  # central differences converge as s^2; 1e-4 leaves a 3e-6 truncation error
    fd = (generalized_mabuchi(omega, theta, phi + s * delta)
          - generalized_mabuchi(omega, theta, phi - s * delta)) / (2 * s)
    exact = mabuchi_variation(omega, theta, phi, delta)
    var = _rel(fd, exact)
    return [_result("11a", path_gap <= 1e-8, path_gap, 1e-8, linear=lin, cubic=cub),
            _result("11b", var <= 1e-6, var, 1e-6, finite_difference=fd, formula=exact)]


def _energy_inputs(name: str):
    cfg = scenarios.get(name)
    model = model_from_dict(cfg["model"])
    e = cfg["energy"]
    phibar = trig_field(model.base, e["phibar_modes"])
    psi = (trig_field(model.product, e["psi_modes"]) if e["psi_modes"]
           else np.zeros(model.product.shape))
    return model, phibar, psi, e["t_list"]


def c12_adjunction() -> list:
    model, phibar, psi, t_list = _energy_inputs("mabuchi_adjunction")
    rep = adjunction_expansion(model, phibar, psi, t_list).expansion
    m = model.n - model.kappa
    out = [_result("12a", rep["relative_error"] <= 0.01, rep["relative_error"], 0.01,
                   leading_fit=rep["leading_fit"], prediction=rep["prediction"]),
           _result("12b", rep["remainder_slope"] >= m + 0.8, rep["remainder_slope"], m + 0.8)]
    model, phi, _, t_list = _energy_inputs("surface_adjunction")
    rep = surface_adjunction(model, phi, t_list=t_list).expansion
    out += [_result("12c", rep["relative_error"] <= 0.02, rep["relative_error"], 0.02,
                    leading_fit=rep["leading_fit"], prediction=rep["prediction"]),
            _result("12d", rep["remainder_slope"] >= 1.8, rep["remainder_slope"], 1.8)]
    return out


def _outputs_twice(command: str, cfg_dict: dict) -> list:
    from .cli import main

    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = Path(tmp) / "config.json"
        cfg_path.write_text(json.dumps(cfg_dict))
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            code = main([command, "--config", str(cfg_path), "--out", str(out)])
            outputs.append({p.relative_to(out).as_posix(): p.read_bytes()
                            for p in sorted(out.rglob("*")) if p.is_file()} if code == 0 else {})
    return outputs


def c13_determinism(scenario: str = "product_generic") -> CriterionResult:
    flow_cfg = scenarios.get(scenario)
    flow_cfg["flow"]["T"] = 1.0
    flow_cfg["probes"] = [0.0, 0.5, 1.0]
    mismatched = []
    for command, cfg in (("flow", flow_cfg), ("energy", scenarios.get("mabuchi_adjunction"))):
        a, b = _outputs_twice(command, cfg)
        if not a or a.keys() != b.keys():
            mismatched.append(f"{command}: missing or differing files")
        mismatched += [f"{command}:{k}" for k in a if a[k] != b.get(k)]
    return _result("13", not mismatched, len(mismatched), 0, mismatched=mismatched)


# ----------------------------------------------------------------------------
# stationary battery


def stationary_battery() -> list:
    model = _model("stationary")
    phi_inf, rep = limit_potential(model, MA_TOL)
    run = run_flow(model, FlowSchedule(T=10.0, dt=0.05), phi_limit=phi_inf)
    drift = max(max(abs(r.sup_phi), abs(r.inf_phi)) for r in run.records)
    dist = max(r.c0_dist_to_limit for r in run.records)
    vols = [r.fiber_vol_ratio for r in run.records]
    _, twisted = limit_residuals(model, phi_inf)
    tw_bound = twisted_residual_bound(model.base)
    return [
        _result("S1", drift <= 1e-10, drift, 1e-10, what="sup |phi(t)| along the flow"),
        _result("S2", dist <= 1e-10, dist, 1e-10, what="distance to phi_inf + log binom"),
        _result("S3", max(vols) - min(vols) <= 1e-12, max(vols) - min(vols), 1e-12,
                what="spread of the rescaled fiber volume"),
        _result("S4", twisted <= tw_bound, twisted, tw_bound, what="twisted limit residual"),
        c13_determinism("stationary"),
    ]


FULL_BATTERY = (c1_trivial_twisted, c2_line_oracle, c3_calabi, c4_comparison, c5_monotonicity,
                c6_uniform_bounds, c7_collapse_rate, c8_convergence, c9_curvature_band,
                c10_full_vs_reduced, c11_mabuchi, c12_adjunction, c13_determinism)


SEEDED = {c3_calabi: 3, c4_comparison: 4, c5_monotonicity: 5, c11_mabuchi: 11}


def run_battery(which: str = "full", seed: int = 0) -> list:
    """Run every check; randomized ones use seed + their own offset."""
    checks = (stationary_battery,) if which == "stationary" else FULL_BATTERY
    results = []
    for check in checks:
        t0 = time.perf_counter()
        got = check(seed=seed + SEEDED[check]) if check in SEEDED else check()
        got = got if isinstance(got, list) else [got]
        elapsed = time.perf_counter() - t0
        for r in got:
            r.runtime_s = elapsed / len(got)
        results += got
    return results


def verdict(results: list) -> dict:
    return {"suite_version": SUITE_VERSION,
            "criteria": [{"id": r.id, "status": r.status, "measured": r.measured,
                          "bound": r.bound, "runtime_s": r.runtime_s} for r in results]}
