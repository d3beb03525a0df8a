"""Built-in experiment scenarios, each a JSON-serializable configuration dict."""

from __future__ import annotations

import copy
import math

from .errors import ContractError

PI2 = math.pi**2


def _chart(n: int, dims: int = 1, tau=(0.0, 1.0)) -> dict:
    return {"dims": dims, "resolutions": [n] * dims, "moduli": [list(tau)] * dims}


def _mode(k, amp, phase=0.0) -> dict:
    return {"k": list(k), "amp": amp, "phase": phase}


def _product_base(base_n: int, fiber_n: int) -> dict:
    return {"base": _chart(base_n), "fiber": _chart(fiber_n), "tau": {"kind": "constant", "data": [0.0, 1.0]}}


CHI_GENERIC = {"kind": "potential",
               "data": {"scale": 1.0, "modes": [_mode([1, 0], 0.03), _mode([1, 1], 0.01, 0.4)]}}
OMEGA0_BASE_GENERIC = {"scale": 1.5, "modes": [_mode([0, 1], 0.03, 0.2)]}
OMEGA_GENERIC = {"kind": "exp_profile",
                 "data": {"scale": 1.0, "modes": [_mode([1, 0, 0, 0], 0.3), _mode([0, 1, 0, 0], 0.2, 1.0)]}}


def stationary(base_n: int = 64, fiber_n: int = 4) -> dict:
    model = _product_base(base_n, fiber_n)
    model["chi"] = copy.deepcopy(CHI_GENERIC)
    model["omega0"] = {"kind": "block", "data": {"base": "chi"}}
    model["Omega"] = {"kind": "stationary"}
    return {"scenario": "stationary", "model": model,
            "flow": {"T": 10.0, "dt": 0.05, "scheme": "semi_implicit"}, "mode": "reduced"}


def product_generic(base_n: int = 64, fiber_n: int = 4) -> dict:
    model = _product_base(base_n, fiber_n)
    model["chi"] = copy.deepcopy(CHI_GENERIC)
    model["omega0"] = {"kind": "block", "data": {"base": copy.deepcopy(OMEGA0_BASE_GENERIC)}}
    model["Omega"] = copy.deepcopy(OMEGA_GENERIC)
    return {"scenario": "product_generic", "model": model,
            "flow": {"T": 10.0, "dt": 0.05, "scheme": "semi_implicit"}, "mode": "reduced",
            "probes": [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]}


def varying_tau(base_n: int = 64, fiber_n: int = 4) -> dict:
    cfg = product_generic(base_n, fiber_n)
    cfg["scenario"] = "varying_tau"
    cfg["model"]["tau"] = {"kind": "profile",
                           "data": {"re": 0.1, "im": 1.0,
                                    "modes": [_mode([1, 0], 0.2), _mode([0, 1], 0.1, 1.0)]}}
    return cfg


def degenerate_chi(n: int = 64) -> dict:
    # chi = (1 - cos 2 pi x) dz dzbar vanishes on the circle x = 0
    return {"scenario": "degenerate_chi",
            "elliptic": {"chart": _chart(n),
                         "chi": {"scale": 1.0, "modes": [_mode([1, 0], 1.0 / PI2)]},
                         "log_F_modes": [_mode([1, 0], 0.1), _mode([0, 1], 0.1, 0.5)],
                         "regularizer": 0.25, "steps": 8}}


def mabuchi_adjunction(n: int = 16) -> dict:
    model = _product_base(n, n)
    model["chi"] = {"kind": "potential", "data": {"scale": 1.0, "modes": [_mode([0, 1], 0.02, 0.3)]}}
    model["omega0"] = {"kind": "block", "data": {"base": {"scale": 1.0, "modes": [_mode([1, 0], 0.02)]}}}
    model["Omega"] = {"kind": "flat", "data": 1.0}
    return {"scenario": "mabuchi_adjunction", "model": model,
            "energy": {"phibar_modes": [_mode([1, 0], 0.05)],
                       "psi_modes": [_mode([0, 0, 1, 0], 0.02), _mode([1, 0, 1, 1], 0.01, 0.7)],
                       "t_list": [0.1 * 2 ** (-i / 2) for i in range(5)]}}


def surface_adjunction(n: int = 16) -> dict:
    model = _product_base(n, n)
    model["chi"] = {"kind": "potential", "data": {"scale": 1.0, "modes": [_mode([0, 1], 0.02, 0.3)]}}
    model["omega0"] = {"kind": "block",
                       "data": {"base": {"scale": 1.0, "modes": [_mode([1, 0], 0.02)]},
                                "potential_modes": [_mode([0, 0, 1, 0], 0.02),
                                                    _mode([1, 0, 0, 1], 0.01, 0.3)]}}
    model["Omega"] = {"kind": "flat", "data": 1.0}
    return {"scenario": "surface_adjunction", "model": model,
            "energy": {"phibar_modes": [_mode([1, 0], 0.05), _mode([0, 1], 0.03, 1.1)],
                       "psi_modes": [],
                       "t_list": [0.1 * 2 ** (-i / 2) for i in range(5)]}}


REGISTRY = {
    "stationary": stationary,
    "product_generic": product_generic,
    "varying_tau": varying_tau,
    "degenerate_chi": degenerate_chi,
    "mabuchi_adjunction": mabuchi_adjunction,
    "surface_adjunction": surface_adjunction,
}


def get(name: str, **kwargs) -> dict:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown scenario {name!r}; known: {sorted(REGISTRY)}") from None
    return builder(**kwargs)
