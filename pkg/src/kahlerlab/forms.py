"""Pointwise algebra of (1,1)-forms: top powers, mixed wedges, curvature and traces."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._pointwise import herm_det, herm_inv, herm_trace_product
from .errors import ContractError, PositivityError
from .grid import HermitianFormField, ScalarField, VolumeDensity, ddbar_array

__all__ = [
    "WedgeWord",
    "ma_top",
    "wedge_density",
    "ricci",
    "scalar_curvature",
    "trace",
    "log_ma_top",
]


def ma_top(omega: HermitianFormField) -> VolumeDensity:
    """d! det(omega) against the flat volume; nonpositive values are kept and flagged."""
    return VolumeDensity(omega.chart, math.factorial(omega.dim) * herm_det(omega.coeffs))


def log_ma_top(omega: HermitianFormField) -> np.ndarray:
    det = herm_det(omega.coeffs)
    if det.min() <= 0:
        bad = np.unravel_index(int(np.argmin(det)), det.shape)
        raise PositivityError(f"determinant {det.min():.3e} is not positive at index {bad}", bad)
    return np.log(math.factorial(omega.dim) * det)


@dataclass(frozen=True)
class WedgeWord:
    """Forms with multiplicities; the multiplicities must add up to the chart dimension."""

    factors: tuple

    def __init__(self, *factors):
        items = []
        for f in factors:
            if isinstance(f, HermitianFormField):
                items.append((f, 1))
            else:
                form, mult = f
                if int(mult) < 0:
                    raise ContractError("negative multiplicity in wedge word")
                if int(mult):
                    items.append((form, int(mult)))
        object.__setattr__(self, "factors", tuple(items))

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.factors)

    def expanded(self) -> list:
        return [f for f, m in self.factors for _ in range(m)]


@functools.lru_cache(maxsize=None)
def _signed_permutations(d: int) -> tuple:
    out = []
    for perm in itertools.permutations(range(d)):
        inversions = sum(1 for i in range(d) for j in range(i + 1, d) if perm[i] > perm[j])
        out.append((perm, -1 if inversions % 2 else 1))
    return tuple(out)


def _wedge_coeff(arrays: Sequence[np.ndarray]) -> np.ndarray:
    d = len(arrays)
    total = np.zeros(arrays[0].shape[:-2], dtype=complex)
    perms = _signed_permutations(d)
    for sigma, s1 in perms:
        for pi, s2 in perms:
            term = arrays[0][..., sigma[0], pi[0]]
            for k in range(1, d):
                term = term * arrays[k][..., sigma[k], pi[k]]
            total += (s1 * s2) * term
    return total.real


def wedge_density(word) -> VolumeDensity:
    """Coefficient of the top-degree wedge of the listed forms against the flat volume.

    Accepts a WedgeWord or a plain sequence of forms.  For d identical factors
    this is ma_top; for d = 2, diag(1,0) ^ diag(0,1) gives 1.
    """
    if not isinstance(word, WedgeWord):
        word = WedgeWord(*word)
    forms = word.expanded()
    if not forms:
        raise ContractError("empty wedge word")
    chart = forms[0].chart
    if any(f.chart != chart for f in forms):
        raise ContractError("wedge factors live on different charts")
    if len(forms) != chart.dim:
        raise ContractError(f"wedge degree {len(forms)} does not match dimension {chart.dim}")
    if chart.dim > 3:
        raise ContractError("mixed wedges are supported for d <= 3")
    return VolumeDensity(chart, _wedge_coeff([f.coeffs for f in forms]))


def wedge_array(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Array-level wedge coefficient used inside tight loops."""
    return _wedge_coeff(list(arrays))


def ricci(omega: HermitianFormField) -> HermitianFormField:
    """-sqrt(-1) d dbar log det(omega)."""
    return HermitianFormField(omega.chart, -ddbar_array(omega.chart, log_ma_top(omega)))


def _require_positive(omega: HermitianFormField) -> None:
    if herm_det(omega.coeffs).min() <= 0 or not omega.is_positive():
        raise PositivityError("form is not positive definite")


def trace(omega: HermitianFormField, theta: HermitianFormField) -> ScalarField:
    """sum g^{i jbar} theta_{i jbar} pointwise."""
    _require_positive(omega)
    if theta.chart != omega.chart:
        raise ContractError("forms live on different charts")
    return ScalarField(omega.chart, herm_trace_product(herm_inv(omega.coeffs), theta.coeffs))


def scalar_curvature(omega: HermitianFormField) -> ScalarField:
    return trace(omega, ricci(omega))
