"""Periodic grids on products of flat complex tori.

Each complex factor j is sampled on an N_j x N_j grid over the unit square
with complex coordinate z_j = x_j + tau_j y_j.  Arrays carry the real axes
in the order (x_1, y_1, x_2, y_2, ...).  Derivatives are spectral; the
Nyquist mode is kept for pure second derivatives in one real direction and
zeroed for every first derivative (and hence for mixed derivatives).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from ._pointwise import herm_adj, herm_det, herm_eigs, herm_trace_product, hermitize
from .errors import ContractError, NonConvergenceError, PositivityError

__all__ = [
    "TorusChart",
    "ScalarField",
    "HermitianFormField",
    "VolumeDensity",
    "ddbar",
    "dz",
    "integrate",
    "poisson_solve",
    "solve_elliptic",
    "EllipticSolution",
    "trig_field",
    "band_limited",
    "field_to_dict",
    "field_from_dict",
]


@dataclass(frozen=True)
class TorusChart:
    resolutions: tuple
    moduli: tuple

    def __post_init__(self):
        res = tuple(int(n) for n in self.resolutions)
        mod = tuple(complex(t) for t in self.moduli)
        if not res or len(res) != len(mod):
            raise ContractError("need one resolution and one modulus per complex factor")
        for n in res:
            if n < 2 or n % 2:
                raise ContractError(f"resolution {n} must be a positive even integer")
        for t in mod:
            if not t.imag > 0:
                raise ContractError(f"modulus {t} must have positive imaginary part")
        object.__setattr__(self, "resolutions", res)
        object.__setattr__(self, "moduli", mod)

    @classmethod
    def square(cls, dim: int, n: int, tau: complex = 1j) -> "TorusChart":
        return cls((n,) * dim, (tau,) * dim)

    @property
    def dim(self) -> int:
        return len(self.resolutions)

    @property
    def shape(self) -> tuple:
        return tuple(n for n in self.resolutions for _ in (0, 1))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def volume(self) -> float:
        return math.prod(t.imag for t in self.moduli)

    @property
    def cell_volume(self) -> float:
        return math.prod(t.imag / n**2 for t, n in zip(self.moduli, self.resolutions))

    @property
    def spacing(self) -> float:
        """Largest real grid step, used for discretization allowances."""
        return max(1.0 / n for n in self.resolutions)

    def coordinates(self) -> tuple:
        """Broadcastable real coordinates (x_1, y_1, x_2, y_2, ...) in [0, 1)."""
        out = []
        ndim = 2 * self.dim
        for axis, n in enumerate(self.shape):
            shape = [1] * ndim
            shape[axis] = n
            out.append((np.arange(n) / n).reshape(shape))
        return tuple(out)

    def product(self, other: "TorusChart") -> "TorusChart":
        return TorusChart(self.resolutions + other.resolutions, self.moduli + other.moduli)

    def to_dict(self) -> dict:
        return {
            "dims": self.dim,
            "resolutions": list(self.resolutions),
            "moduli": [[t.real, t.imag] for t in self.moduli],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TorusChart":
        try:
            res = data["resolutions"]
            mod = [complex(a, b) for a, b in data["moduli"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"malformed chart description: {exc}") from None
        chart = cls(tuple(res), tuple(mod))
        if "dims" in data and int(data["dims"]) != chart.dim:
            raise ContractError("chart 'dims' disagrees with the number of resolutions")
        return chart


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    chart: TorusChart
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.chart.shape:
            if v.size != self.chart.size:
                raise ContractError(f"field has {v.size} values, chart expects {self.chart.size}")
            v = v.reshape(self.chart.shape)
        if not np.all(np.isfinite(v)):
            raise ContractError("scalar field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, chart: TorusChart) -> "ScalarField":
        return cls(chart, np.zeros(chart.shape))

    @classmethod
    def constant(cls, chart: TorusChart, c: float) -> "ScalarField":
        return cls(chart, np.full(chart.shape, float(c)))

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.chart != self.chart:
                raise ContractError("fields live on different charts")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.chart, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.chart, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.chart, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.chart, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.chart, -self.values)

    def sup(self) -> float:
        return float(self.values.max())

    def inf(self) -> float:
        return float(self.values.min())

    def oscillation(self) -> float:
        return self.sup() - self.inf()

    def mean(self) -> float:
        return float(np.sum(self.values) / self.values.size)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class HermitianFormField:
    """Coefficients a_{i jbar} of sqrt(-1) sum a_{i jbar} dz_i ^ dzbar_j at every grid point."""

    chart: TorusChart
    coeffs: np.ndarray

    def __post_init__(self):
        d = self.chart.dim
        a = np.array(self.coeffs, dtype=complex)
        if a.shape != self.chart.shape + (d, d):
            if a.size != self.chart.size * d * d:
                raise ContractError("form coefficients do not match the chart")
            a = a.reshape(self.chart.shape + (d, d))
        if not np.all(np.isfinite(a)):
            raise ContractError("form contains non-finite coefficients")
        skew = np.abs(a - np.conj(np.swapaxes(a, -1, -2))).max(initial=0.0)
        scale = 1.0 + np.abs(a).max(initial=0.0)
        if skew > 1e-10 * scale:
            raise ContractError(f"coefficients are not Hermitian (defect {skew:.3e})")
        object.__setattr__(self, "coeffs", _frozen(hermitize(a)))

    @classmethod
    def zeros(cls, chart: TorusChart) -> "HermitianFormField":
        return cls(chart, np.zeros(chart.shape + (chart.dim, chart.dim), dtype=complex))

    @classmethod
    def identity(cls, chart: TorusChart, scale: float = 1.0) -> "HermitianFormField":
        a = np.zeros(chart.shape + (chart.dim, chart.dim), dtype=complex)
        for i in range(chart.dim):
            a[..., i, i] = scale
        return cls(chart, a)

    @classmethod
    def diagonal(cls, chart: TorusChart, entries: Sequence) -> "HermitianFormField":
        a = np.zeros(chart.shape + (chart.dim, chart.dim), dtype=complex)
        for i, e in enumerate(entries):
            a[..., i, i] = np.broadcast_to(np.asarray(getattr(e, "values", e), dtype=float), chart.shape)
        return cls(chart, a)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def _other(self, other):
        if isinstance(other, HermitianFormField):
            if other.chart != self.chart:
                raise ContractError("forms live on different charts")
            return other.coeffs
        raise TypeError("forms combine only with forms")

    def __add__(self, other):
        return HermitianFormField(self.chart, self.coeffs + self._other(other))

    def __sub__(self, other):
        return HermitianFormField(self.chart, self.coeffs - self._other(other))

    def __neg__(self):
        return HermitianFormField(self.chart, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return HermitianFormField(self.chart, self.coeffs * other.values[..., None, None])
        return HermitianFormField(self.chart, self.coeffs * float(other))

    __rmul__ = __mul__

    def eigenvalues(self) -> np.ndarray:
        return herm_eigs(self.coeffs)

    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues()[..., 0].min())

    def is_positive(self, floor: float = 0.0) -> bool:
        return self.min_eigenvalue() > floor

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.coeffs[..., i, j]

    def sup_norm(self) -> float:
        return float(np.abs(self.coeffs).max())


@dataclass(frozen=True, eq=False)
class VolumeDensity:
    """Density against the flat reference volume; sign is reported through ``positive``."""

    chart: TorusChart
    density: np.ndarray

    def __post_init__(self):
        v = np.array(self.density, dtype=float)
        if v.shape != self.chart.shape:
            if v.size != self.chart.size:
                raise ContractError("density does not match the chart")
            v = v.reshape(self.chart.shape)
        if not np.all(np.isfinite(v)):
            raise ContractError("density contains non-finite values")
        object.__setattr__(self, "density", _frozen(v))

    @property
    def positive(self) -> bool:
        return bool(self.density.min() > 0)

    @property
    def nonnegative(self) -> bool:
        return bool(self.density.min() >= 0)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return VolumeDensity(self.chart, self.density * other.values)
        return VolumeDensity(self.chart, self.density * float(other))

    __rmul__ = __mul__


# ----------------------------------------------------------------------------
# spectral symbols


@dataclass(frozen=True)
class _Symbols:
    dz: tuple  # symbol of d/dz_j, broadcastable
    dzb: tuple  # symbol of d/dzbar_j
    diag: tuple  # real symbol of d^2/dz_j dzbar_j (Nyquist kept)


@functools.lru_cache(maxsize=64)
def _symbols(chart: TorusChart) -> _Symbols:
    ndim = 2 * chart.dim
    dz, dzb, diag = [], [], []
    for j, (n, tau) in enumerate(zip(chart.resolutions, chart.moduli)):
        k = np.fft.fftfreq(n, 1.0 / n)
        nyq = np.abs(k) == n // 2
        shape_x = [1] * ndim
        shape_x[2 * j] = n
        shape_y = [1] * ndim
        shape_y[2 * j + 1] = n
        kx = k.reshape(shape_x)
        ky = k.reshape(shape_y)
        sx = np.where(nyq, 0.0, 2j * np.pi * k).reshape(shape_x)
        sy = np.where(nyq, 0.0, 2j * np.pi * k).reshape(shape_y)
        b = tau.imag
        dz.append((sy - np.conj(tau) * sx) / (2j * b))
        dzb.append((sy - tau * sx) / (-2j * b))
        xx = -((2 * np.pi * kx) ** 2)
        yy = -((2 * np.pi * ky) ** 2)
        xy = (sx * sy).real
        diag.append((abs(tau) ** 2 * xx - 2 * tau.real * xy + yy) / (4 * b * b))
    return _Symbols(tuple(dz), tuple(dzb), tuple(diag))


def _check_resolution(chart: TorusChart) -> None:
    if min(chart.resolutions) < 4:
        raise ContractError("spectral differentiation needs at least 4 points per axis")


def ddbar_array(chart: TorusChart, u: np.ndarray) -> np.ndarray:
    """Coefficients u_{i jbar} as a (..., d, d) complex array, exactly Hermitian."""
    sym = _symbols(chart)
    d = chart.dim
    uh = np.fft.fftn(u)
    out = np.empty(chart.shape + (d, d), dtype=complex)
    for i in range(d):
        out[..., i, i] = np.fft.ifftn(uh * sym.diag[i]).real
        for j in range(i + 1, d):
            v = np.fft.ifftn(uh * (sym.dz[i] * sym.dzb[j]))
            out[..., i, j] = v
            out[..., j, i] = np.conj(v)
    return out


def dz_array(chart: TorusChart, u: np.ndarray) -> np.ndarray:
    """Holomorphic gradient (du/dz_1, ..., du/dz_d) as a (..., d) complex array."""
    sym = _symbols(chart)
    uh = np.fft.fftn(u)
    return np.stack([np.fft.ifftn(uh * s) for s in sym.dz], axis=-1)


def trace_ddbar_array(chart: TorusChart, a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """tr(a . ddbar u) for a Hermitian coefficient array a (constant or per point)."""
    return herm_trace_product(np.broadcast_to(a, chart.shape + a.shape[-2:]), ddbar_array(chart, u))


def _constant_symbol(chart: TorusChart, a: np.ndarray) -> np.ndarray:
    """Fourier symbol of u -> tr(a . ddbar u) for a constant Hermitian matrix a."""
    sym = _symbols(chart)
    d = chart.dim
    s = np.zeros(chart.shape)
    for i in range(d):
        s = s + a[i, i].real * sym.diag[i]
        for j in range(i + 1, d):
            s = s + 2.0 * (a[j, i] * sym.dz[i] * sym.dzb[j]).real
    return s


def ddbar(phi: ScalarField) -> HermitianFormField:
    """sqrt(-1) d dbar phi by spectral differentiation."""
    _check_resolution(phi.chart)
    return HermitianFormField(phi.chart, ddbar_array(phi.chart, phi.values))


def dz(phi: ScalarField) -> np.ndarray:
    _check_resolution(phi.chart)
    return dz_array(phi.chart, phi.values)


def integrate(v) -> float:
    """Periodic trapezoidal quadrature of a density (or raw scalar field) over the chart."""
    arr = v.density if isinstance(v, VolumeDensity) else v.values
    if not np.all(np.isfinite(arr)):
        raise ContractError("cannot integrate non-finite values")
    return float(np.sum(arr, dtype=float) * v.chart.cell_volume)


def integrate_array(chart: TorusChart, arr: np.ndarray) -> float:
    return float(np.sum(arr, dtype=float) * chart.cell_volume)


# ----------------------------------------------------------------------------
# linear elliptic kernel


@dataclass
class EllipticSolution:
    u: np.ndarray
    constant: float
    residual: float
    iterations: int


def solve_elliptic(chart: TorusChart, metric: np.ndarray, shift, rhs: np.ndarray, *,
                   tol: float = 1e-12, maxiter: int = 60, restart: int = 60,
                   mean: float = 0.0) -> EllipticSolution:
    """Solve tr_g(ddbar u) - shift * u = rhs - c.

    ``metric`` holds the positive coefficients g (..., d, d).  When ``shift`` is
    identically zero the problem is singular: the constant c is solved for and
    the mean of u is pinned to ``mean``; otherwise c = 0.  Internally the
    equation is multiplied by det g, giving the divergence-like operator
    tr(adj g . ddbar u) - shift det g u, and solved by GMRES preconditioned with
    the exact spectral inverse of its grid-averaged coefficients.
    """
    _check_resolution(chart)
    g = np.broadcast_to(metric, chart.shape + (chart.dim, chart.dim))
    adj = herm_adj(g)
    w = herm_det(g)
    shift_arr = np.broadcast_to(np.asarray(shift, dtype=float), chart.shape)
    singular = not np.any(shift_arr)
    b = w * rhs
    sw = shift_arr * w

    adj_bar = adj.reshape(-1, chart.dim, chart.dim).mean(axis=0)
    symbol = _constant_symbol(chart, adj_bar)
    sw_bar = float(sw.mean())
    w_bar = float(w.mean())
    n = chart.size

    if singular:
        denom = symbol.copy()
        denom.flat[0] = 1.0

        def precond(vec):
            r = vec[:n].reshape(chart.shape)
            s = vec[n]
            c = r.mean() / w_bar
            uh = np.fft.fftn(r - w_bar * c) / denom
            uh.flat[0] = s / w_bar * n
            return np.concatenate([np.fft.ifftn(uh).real.ravel(), [c]])

        def apply(vec):
            u = vec[:n].reshape(chart.shape)
            c = vec[n]
            top = trace_ddbar_array(chart, adj, u) + w * c
            return np.concatenate([top.ravel(), [u.mean() * w_bar]])

        rhs_vec = np.concatenate([b.ravel(), [mean * w_bar]])
        size = n + 1
    else:
        denom = symbol - sw_bar

        def precond(vec):
            return np.fft.ifftn(np.fft.fftn(vec.reshape(chart.shape)) / denom).real.ravel()

        def apply(vec):
            u = vec.reshape(chart.shape)
            return (trace_ddbar_array(chart, adj, u) - sw * u).ravel()

        rhs_vec = b.ravel()
        size = n

    bnorm = float(np.linalg.norm(rhs_vec))
    if bnorm == 0.0:
        return EllipticSolution(np.zeros(chart.shape), 0.0, 0.0, 0)

    op = LinearOperator((size, size), matvec=apply, dtype=float)
    prec = LinearOperator((size, size), matvec=precond, dtype=float)

    x = precond(rhs_vec)
    res = rhs_vec - apply(x)
    rel = float(np.linalg.norm(res)) / bnorm
    iterations = 0
    for _ in range(4):
        if rel <= tol:
            break
        counter = [0]

        def cb(_arg):
            counter[0] += 1

        dx, _info = gmres(op, res, rtol=min(0.5, tol / rel), atol=0.0, restart=restart,
                          maxiter=maxiter, M=prec, callback=cb, callback_type="pr_norm")
        iterations += counter[0]
        x = x + dx
        res = rhs_vec - apply(x)
        new_rel = float(np.linalg.norm(res)) / bnorm
        stalled = new_rel > 0.5 * rel
        rel = new_rel
        if stalled and rel > tol:
            break
    if rel > 10 * tol:
        raise NonConvergenceError(
            f"elliptic solve stalled at relative residual {rel:.3e} (tolerance {tol:.1e})",
            report={"residual": rel, "iterations": iterations},
        )
    if singular:
        return EllipticSolution(x[:n].reshape(chart.shape), float(x[n]), rel, iterations)
    return EllipticSolution(x.reshape(chart.shape), 0.0, rel, iterations)


def poisson_solve(rho: ScalarField, omega_ref: HermitianFormField, tol: float = 1e-12) -> ScalarField:
    """Mean-zero phi with tr_{omega_ref}(ddbar phi) = rho - c.

    The constant c is the compatibility constant, which in the continuum is the
    mean of rho against omega_ref^d.
    """
    if omega_ref.chart != rho.chart:
        raise ContractError("source and reference form live on different charts")
    if not omega_ref.is_positive():
        raise PositivityError("reference form is not positive definite")
    sol = solve_elliptic(rho.chart, omega_ref.coeffs, 0.0, rho.values, tol=tol)
    return ScalarField(rho.chart, sol.u)


# ----------------------------------------------------------------------------
# test-field construction


def trig_field(chart: TorusChart, modes: Iterable[dict]) -> np.ndarray:
    """Sum of amp * cos(2 pi k . x + phase) over mode dicts {k, amp, phase?}.

    ``k`` has one integer per real axis (x_1, y_1, x_2, y_2, ...).
    """
    coords = chart.coordinates()
    out = np.zeros(chart.shape)
    for m in modes:
        k = list(m["k"])
        if len(k) != len(coords):
            raise ContractError(f"mode wavevector {k} needs {len(coords)} entries")
        arg = sum(2 * np.pi * kk * c for kk, c in zip(k, coords) if kk)
        out = out + float(m.get("amp", 1.0)) * np.cos(arg + float(m.get("phase", 0.0)))
    return out


def band_limited(chart: TorusChart, rng: np.random.Generator, kmax: int = 2,
                 amplitude: float = 1.0) -> np.ndarray:
    """Random real trigonometric polynomial with |k| <= kmax per axis and sup-norm ``amplitude``."""
    spec = np.zeros(chart.shape, dtype=complex)
    idx = tuple(np.r_[0:kmax + 1, n - kmax:n] for n in chart.shape)
    block = rng.standard_normal(tuple(len(i) for i in idx)) + 1j * rng.standard_normal(tuple(len(i) for i in idx))
    spec[np.ix_(*idx)] = block
    spec.flat[0] = 0.0
    u = np.fft.ifftn(spec).real
    return u * (amplitude / np.abs(u).max())


# ----------------------------------------------------------------------------
# serialization


def field_to_dict(field) -> dict:
    if isinstance(field, ScalarField):
        values = field.values.ravel()
        kind = "scalar"
    elif isinstance(field, VolumeDensity):
        values = field.density.ravel()
        kind = "density"
    elif isinstance(field, HermitianFormField):
        values = field.coeffs.view(float).ravel()
        kind = "form"
    else:
        raise TypeError(f"cannot serialize {type(field).__name__}")
    return {"kind": kind, "chart": field.chart.to_dict(), "values": [float(x) for x in values]}


def field_from_dict(data: dict):
    chart = TorusChart.from_dict(data["chart"])
    values = np.asarray(data["values"], dtype=float)
    kind = data.get("kind", "scalar")
    if kind == "scalar":
        return ScalarField(chart, values)
    if kind == "density":
        return VolumeDensity(chart, values)
    if kind == "form":
        d = chart.dim
        return HermitianFormField(chart, values.view(complex).reshape(chart.shape + (d, d)))
    raise ContractError(f"unknown field kind {kind!r}")
