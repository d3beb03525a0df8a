"""Command-line runner: solve-ma, solve-calabi, flow, energy and suite."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, scenarios
from .errors import KahlerLabError

__all__ = ["ExperimentConfig", "ConfigError", "main", "config_hash"]

DEFAULT_TOLERANCES = {"ma": 1e-11, "calabi": 1e-10}
MODES = ("full", "reduced")
SCHEMES = ("semi_implicit", "explicit_rk4")


class ConfigError(KahlerLabError, ValueError):
    """Schema violation; the message starts with the offending field path."""


def _num(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{path}: expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be positive, got {value!r}")
    return float(value)


@dataclass
class ExperimentConfig:
    scenario: str = "custom"
    model: Optional[dict] = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    flow: dict = field(default_factory=lambda: {"T": 10.0, "dt": 0.05, "scheme": "semi_implicit"})
    probes: Optional[list] = None
    mode: str = "reduced"
    out: str = "out"
    seed: int = 0
    energy: Optional[dict] = None
    elliptic: Optional[dict] = None

    KEYS = ("scenario", "model", "tolerances", "flow", "probes", "mode", "out", "seed", "energy",
            "elliptic")

    def validate(self) -> "ExperimentConfig":
        if not isinstance(self.scenario, str):
            raise ConfigError("scenario: expected a string")
        if self.model is not None and not isinstance(self.model, dict):
            raise ConfigError("model: expected an object")
        if not isinstance(self.tolerances, dict):
            raise ConfigError("tolerances: expected an object")
        for k, v in self.tolerances.items():
            _num(v, f"tolerances.{k}", positive=True)
        if not isinstance(self.flow, dict):
            raise ConfigError("flow: expected an object")
        for k in ("T", "dt"):
            if k in self.flow:
                _num(self.flow[k], f"flow.{k}", positive=True)
        if self.flow.get("scheme", "semi_implicit") not in SCHEMES:
            raise ConfigError(f"flow.scheme: expected one of {SCHEMES}")
        if self.probes is not None:
            if not isinstance(self.probes, list):
                raise ConfigError("probes: expected a list of times")
            for i, p in enumerate(self.probes):
                if _num(p, f"probes[{i}]") < 0:
                    raise ConfigError(f"probes[{i}]: must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {MODES}, got {self.mode!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed: expected a 64-bit nonnegative integer")
        for k in ("energy", "elliptic"):
            if getattr(self, k) is not None and not isinstance(getattr(self, k), dict):
                raise ConfigError(f"{k}: expected an object")
        return self

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.KEYS}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>: expected a JSON object")
        unknown = sorted(set(data) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        kw = {k: copy.deepcopy(data[k]) for k in cls.KEYS if k in data}
        if "tolerances" in kw and isinstance(kw["tolerances"], dict):
            kw["tolerances"] = {**DEFAULT_TOLERANCES, **kw["tolerances"]}
        return cls(**kw).validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def from_scenario(cls, name: str) -> "ExperimentConfig":
        try:
            data = scenarios.get(name)
        except KahlerLabError as exc:
            raise ConfigError(f"--scenario: {exc}") from None
        return cls.from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of everything that determines the results (the output directory does not)."""
    data = cfg.to_dict()
    data.pop("out")
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _metadata(cfg: ExperimentConfig, command: str) -> dict:
    return {"tool": "kahlerlab", "tool_version": __version__, "config_hash": config_hash(cfg),
            "command": command, "scenario": cfg.scenario}


# ----------------------------------------------------------------------------
# writers


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _write_json(path: Path, payload: dict, meta: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean({"metadata": meta, **payload}), sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, columns, rows, meta: dict) -> None:
    buf = io.StringIO()
    buf.write(f"# kahlerlab {meta['tool_version']} config_hash={meta['config_hash']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _require(cfg: ExperimentConfig, key: str):
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"{key}: required by this command (scenario {cfg.scenario!r})")
    return value


def _build_model(cfg: ExperimentConfig):
    from .fibration import model_from_dict

    try:
        return model_from_dict(_require(cfg, "model"))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"model: malformed description ({exc})") from None


# ----------------------------------------------------------------------------
# commands


def cmd_solve_ma(cfg: ExperimentConfig) -> int:
    from .grid import HermitianFormField, TorusChart, ddbar_array, field_to_dict, trig_field
    from .ma import continuity_path, solve_twisted_ma

    out = Path(cfg.out)
    meta = _metadata(cfg, "solve-ma")
    tol = cfg.tolerances["ma"]
    if cfg.elliptic is not None:
        e = cfg.elliptic
        chart = TorusChart.from_dict(e["chart"])
        potential = trig_field(chart, e["chi"].get("modes", []))
        chi = HermitianFormField.identity(chart, e["chi"].get("scale", 1.0)) + HermitianFormField(
            chart, ddbar_array(chart, potential))
        F = np.exp(trig_field(chart, e.get("log_F_modes", [])))
        aux = HermitianFormField.identity(chart, e.get("regularizer", 1.0))
        phi, rep = continuity_path(chi, F, aux, steps=int(e.get("steps", 8)), tol=tol)
        rows = list(zip(rep.schedule, rep.oscillations, rep.sups, rep.infs))
        _write_csv(out / "continuity.csv", ["j", "oscillation", "sup_phi", "inf_phi"], rows, meta)
        _write_json(out / "ma_solution.json", {"phi": field_to_dict(phi), "report": rep.to_dict()}, meta)
        return 0
    from .fibration import density_F

    model = _build_model(cfg)
    phi, rep = solve_twisted_ma(model.chi, density_F(model).F, tol=tol)
    _write_json(out / "ma_solution.json", {"phi": field_to_dict(phi), "report": rep.to_dict()}, meta)
    return 0


def cmd_solve_calabi(cfg: ExperimentConfig) -> int:
    from .forms import ma_top
    from .grid import VolumeDensity, field_to_dict, integrate
    from .ma import solve_calabi

    model = _build_model(cfg)
    omega = model.omega0
    Omega = model.Omega
    Omega = VolumeDensity(Omega.chart, Omega.density * integrate(ma_top(omega)) / integrate(Omega))
    phi, rep = solve_calabi(omega, Omega, tol=cfg.tolerances["calabi"])
    _write_json(Path(cfg.out) / "calabi_solution.json",
                {"phi": field_to_dict(phi), "report": rep.to_dict()}, _metadata(cfg, "solve-calabi"))
    return 0


def cmd_flow(cfg: ExperimentConfig) -> int:
    from .flow import TRAJECTORY_COLUMNS, FlowSchedule, convergence_check, limit_potential, run_flow

    model = _build_model(cfg)
    out = Path(cfg.out)
    meta = _metadata(cfg, "flow")
    f = cfg.flow
    sched = FlowSchedule(T=float(f.get("T", 10.0)), dt=float(f.get("dt", 0.05)),
                         scheme=f.get("scheme", "semi_implicit"), probes=cfg.probes or (),
                         checkpoint_every=float(f.get("checkpoint_every", 0.5)))
    phi_inf, _ = limit_potential(model, cfg.tolerances["ma"])
    run = run_flow(model, sched, mode=cfg.mode, phi_limit=phi_inf, keep_checkpoints=True)
    _write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, [r.row() for r in run.records], meta)
    for ck in run.checkpoints:
        _write_json(out / "checkpoints" / f"step_{ck['step_count']:06d}.json", ck, meta)
    if sum(1 for r in run.records if r.t > 0) >= 2:
        rep = convergence_check(run, model, phi_inf, cfg.tolerances["ma"])
        _write_json(out / "convergence.json", rep.to_dict(), meta)
    return 0


def cmd_energy(cfg: ExperimentConfig) -> int:
    from .energy import adjunction_expansion, surface_adjunction
    from .fibration import model_from_dict
    from .grid import trig_field

    e = _require(cfg, "energy")
    model = model_from_dict(_require(cfg, "model"))
    phibar = trig_field(model.base, e.get("phibar_modes", []))
    t_list = [float(t) for t in e.get("t_list", [])]
    if len(t_list) < 2:
        raise ConfigError("energy.t_list: needs at least two values")
    if e.get("psi_modes"):
        psi = trig_field(model.product, e["psi_modes"])
        rep = adjunction_expansion(model, phibar, psi, t_list)
    elif model.n == 2 and model.kappa == 1:
        rep = surface_adjunction(model, phibar, t_list=t_list)
    else:
        rep = adjunction_expansion(model, phibar, np.zeros(model.product.shape), t_list)
    exp = rep.expansion
    meta = _metadata(cfg, "energy")
    p = exp["power"]
    rows = [(t, k, exp["prediction"] * t**p, r) for t, k, r in zip(exp["t_list"], exp["K_values"], exp["remainder"])]
    _write_csv(Path(cfg.out) / "expansion.csv", ["t", "K", "prediction", "remainder"], rows, meta)
    _write_json(Path(cfg.out) / "energy.json", rep.to_dict(), meta)
    return 0


def cmd_suite(cfg: ExperimentConfig) -> int:
    from .acceptance import run_battery, verdict

    which = "stationary" if cfg.scenario == "stationary" else "full"
    results = run_battery(which, seed=cfg.seed)
    payload = verdict(results)
    out = Path(cfg.out)
    _write_json(out / "verdict.json", payload, _metadata(cfg, "suite"))
    for r in results:
        print(f"criterion {r.id}: {r.status.upper()} measured={r.measured:.6g} bound={r.bound:.6g}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"solve-ma": cmd_solve_ma, "solve-calabi": cmd_solve_calabi, "flow": cmd_flow,
            "energy": cmd_energy, "suite": cmd_suite}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kahlerlab", description="Monge-Ampere and Kahler-Ricci flow experiments on tori.")
    p.add_argument("--version", action="version", version=f"kahlerlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="experiment configuration (JSON)")
        s.add_argument("--scenario", help=f"built-in scenario: {', '.join(scenarios.REGISTRY)}")
        s.add_argument("--out", help="output directory")
        s.add_argument("--probes", help="comma-separated probe times")
        s.add_argument("--tol", type=float, help="tolerance of the main nonlinear solver")
        s.add_argument("--mode", choices=MODES)
        s.add_argument("--seed", type=int)
    return p


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {args.config} ({exc.strerror})") from None
        cfg = ExperimentConfig.from_json(text)
        if args.scenario:
            cfg.scenario = args.scenario
    elif args.scenario:
        cfg = ExperimentConfig.from_scenario(args.scenario)
    elif args.command == "suite":
        cfg = ExperimentConfig(scenario="all")
    else:
        raise ConfigError("--config or --scenario is required")
    if args.out:
        cfg.out = args.out
    if args.probes:
        try:
            cfg.probes = [float(x) for x in args.probes.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--probes: not a comma-separated list of numbers: {args.probes!r}") from None
    if args.tol is not None:
        key = "calabi" if args.command == "solve-calabi" else "ma"
        cfg.tolerances[key] = args.tol
    if args.mode:
        cfg.mode = args.mode
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        parser.exit(2, f"kahlerlab {args.command}: usage error: {exc}\n")
    except KahlerLabError as exc:
        print(f"kahlerlab {args.command} [{getattr(args, 'scenario', None) or 'config'}]: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
