"""Concrete functions: a singular radial profile and removability of zero sets.

Radial profiles are v(r) = int_r^1 k(s) ds with one of two integrands

    grouped:   k(s) = (p(s) s^{n-1})^{-1/(p(s)-1)}
    verbatim:  k(s) = p(s) s^{n-1} * s^{-1/(p(s)-1)}

For constant p the grouped integrand gives the classical fundamental solution
shape; the residual check tells which integrand actually solves the radial
equation on an annulus.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

from .assembly import ElementData, nodal_residual
from .exponent import Domain, ExponentField, make_exponent
from .mesh import Mesh, make_mesh, radial_mesh
from .operators import flux
from .spaces import GridFunction

VARIANTS = ("verbatim", "grouped")


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not converge; ``partial`` holds what was computed."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class RadialProfile:
    p_of_r: Callable[[float], float]
    variant: str = "grouped"
    n: int = 2
    tol: float = 1e-12

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n < 1:
            raise ValueError("dimension must be positive")

    @classmethod
    def constant(cls, p: float, variant: str = "grouped", n: int = 2, tol: float = 1e-12) -> "RadialProfile":
        return cls(lambda r: p + 0.0 * r, variant, n, tol)

    @classmethod
    def affine(cls, p0: float, slope: float, variant: str = "grouped", n: int = 2, tol: float = 1e-12):
        return cls(lambda r: p0 + slope * r, variant, n, tol)

    def integrand(self, s):
        """k(s) = -v'(s)."""
        p = self.p_of_r(s)
        if self.variant == "grouped":
            return (p * s ** (self.n - 1)) ** (-1.0 / (p - 1.0))
        return p * s ** (self.n - 1) * s ** (-1.0 / (p - 1.0))

    def exponent(self, a: float, b: float) -> ExponentField:
        """The profile's exponent as a 1D field of r on [a, b]."""
        pr = self.p_of_r
        eps = 1e-7 * (b - a)

        def dp(r):
            return (pr(r + eps) - pr(r - eps)) / (2 * eps)

        return make_exponent(
            "radial",
            Domain.box([(a, b)]),
            g=lambda r: np.asarray(pr(np.asarray(r)), dtype=float),
            dg=dp,
        )


def _quad(fn, lo, hi, tol):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err, info = integrate.quad(fn, lo, hi, epsabs=0.0, epsrel=tol, limit=200, full_output=1)[:3]
    except (OverflowError, ZeroDivisionError):
        return float("nan"), False
    ok = np.isfinite(val) and err <= max(1e3 * tol * abs(val), 1e-14)
    return float(val), bool(ok)


def radial_example(profile: RadialProfile, sample_radii: Sequence[float]) -> list[tuple[float, float]]:
    """(r, v(r)) for each sample radius in (0, 1]."""
    radii = [float(r) for r in sample_radii]
    if any(not 0.0 < r <= 1.0 for r in radii):
        raise ValueError("sample radii must lie in (0, 1]")
    # integrate between consecutive radii from 1 downwards and accumulate
    order = sorted(set(radii), reverse=True)
    values = {}
    acc, prev = 0.0, 1.0
    for r in order:
        if r < prev:
            piece, ok = _quad(profile.integrand, r, prev, profile.tol)
            if not ok:
                partial = [(s, values[s]) for s in radii if s in values]
                raise QuadratureError(f"quadrature did not converge on ({r}, {prev})", partial)
            acc += piece
            prev = r
        values[r] = acc
    return [(r, values[r]) for r in radii]


def radial_closed_form(p: float, n: int, r):
    """Grouped-variant profile for constant p (p != n), in closed form."""
    r = np.asarray(r, dtype=float)
    k = (p - n) / (p - 1.0)
    return p ** (-1.0 / (p - 1.0)) * (1.0 - r**k) / k


def grad_modular_cum(profile: RadialProfile, a: float, rho: float = 1.0) -> float:
    """int over the annulus a < |x| < rho of |Dv|^{p(|x|)}."""
    if not 0.0 < a < rho:
        raise ValueError("need 0 < a < rho")
    area = sphere_area(profile.n)

    def dens(s):
        return profile.integrand(s) ** profile.p_of_r(s) * s ** (profile.n - 1)

    # split at decades so the quadrature resolves the blow-up near a
    cuts = [a]
    while cuts[-1] * 10.0 < rho:
        cuts.append(cuts[-1] * 10.0)
    cuts.append(rho)
    total = 0.0
    for lo, hi in zip(cuts, cuts[1:]):
        val, ok = _quad(dens, lo, hi, profile.tol)
        if not ok:
            raise QuadratureError(f"quadrature did not converge on ({lo}, {hi})", total)
        total += val
    return area * total


@dataclass(frozen=True)
class ResidualResult:
    residual: float
    h: float


def radial_residual_check(profile: RadialProfile, a: float, b: float, n_elements: int = 64) -> ResidualResult:
    """Max pointwise defect of the interpolated profile in the radial weak form.

    On a 1D mesh of (a, b) with weight r^{n-1}, the weak residual at each
    interior node is divided by its weighted lumped mass, which turns it into a
    pointwise approximation of the radial operator applied to v.
    """
    if not 0.0 < a < b <= 1.0:
        raise ValueError(f"need 0 < a < b <= 1, got ({a}, {b})")
    mesh = radial_mesh(a, b, n_elements)
    r = mesh.nodes[:, 0]
    vals = np.array([v for _, v in radial_example(profile, r)])
    n = profile.n
    pf = profile.exponent(a, b)
    ed = ElementData.build(mesh, pf, weight=lambda x: x[:, 0] ** (n - 1))
    res = nodal_residual(mesh, vals, ed, reg_floor=0.0)
    mass = np.bincount(mesh.elements.ravel(), weights=np.repeat(ed.weight / 2.0, 2), minlength=mesh.n_nodes)
    free = mesh.free_nodes
    return ResidualResult(float(np.max(np.abs(res[free] / mass[free]))), mesh.h)


def observed_order(results: Sequence[ResidualResult]) -> float:
    """Least-squares slope of log residual against log h."""
    h = np.array([x.h for x in results])
    res = np.array([x.residual for x in results])
    return float(np.polyfit(np.log(h), np.log(res), 1)[0])


# -- Rado removability ----------------------------------------------------------------


@dataclass
class RadoReport:
    case: str
    tol: float
    away_residual: float  # max over hat functions away from {u = 0}
    full_residual: float  # max over every free hat function
    worst_node: Optional[int]
    worst_point: Optional[list]
    straddling: list = field(default_factory=list)

    @property
    def premise_holds(self) -> bool:
        return self.away_residual <= self.tol

    @property
    def passed(self) -> bool:
        return self.premise_holds and self.full_residual <= 10.0 * self.tol

    def as_dict(self) -> dict:
        return {
            "case": self.case,
            "tol": self.tol,
            "away_residual": self.away_residual,
            "full_residual": self.full_residual,
            "worst_node": self.worst_node,
            "worst_point": self.worst_point,
            "straddling_nodes": [int(i) for i in self.straddling],
            "premise_holds": self.premise_holds,
            "passed": self.passed,
        }


def straddling_nodes(u: GridFunction) -> np.ndarray:
    """Nodes with u = 0 or whose star contains a strict sign change of u."""
    mesh = u.mesh
    v = u.values
    out = []
    for i, star in enumerate(mesh.node_elements):
        vals = v[np.unique(mesh.elements[star])]
        if v[i] == 0.0 or (vals.min() < 0.0 < vals.max()):
            out.append(i)
    return np.array(out, dtype=int)


def weak_residual(u: GridFunction, p: ExponentField, gradient: Optional[Callable] = None) -> np.ndarray:
    """Nodal weak residual of -div(|Du|^{p-2} Du) = 0 (raw, not normalized).

    With ``gradient`` the exact gradient at element barycenters is used in
    place of the P1 gradient.
    """
    mesh = u.mesh
    if gradient is None:
        ed = ElementData.build(mesh, p)
        return nodal_residual(mesh, u.values, ed, reg_floor=0.0)
    bc = mesh.barycenters
    grads = np.asarray(gradient(bc), dtype=float).reshape(mesh.n_elements, mesh.dimension)
    fl = np.array([flux(x, g, p) for x, g in zip(bc, grads)]) * mesh.element_measures[:, None]
    local = np.einsum("ed,ekd->ek", fl, mesh.basis_grads)
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def rado_experiment(
    u: GridFunction,
    p: ExponentField,
    tol: float = 1e-10,
    gradient: Optional[Callable] = None,
    case: str = "custom",
) -> RadoReport:
    """Is a solution off the zero set of u also a weak solution across it?"""
    mesh = u.mesh
    res = np.abs(weak_residual(u, p, gradient))
    free = mesh.free_nodes
    strad = np.intersect1d(straddling_nodes(u), free)
    away = np.setdiff1d(free, strad)
    away_res = float(res[away].max()) if len(away) else 0.0
    full_res = float(res[free].max()) if len(free) else 0.0
    worst = None
    if len(strad):
        worst = int(strad[np.argmax(res[strad])])
    return RadoReport(
        case,
        float(tol),
        away_res,
        full_res,
        worst,
        None if worst is None else mesh.nodes[worst].tolist(),
        strad.tolist(),
    )


RADO_CASES = ("linear1d", "linear2d", "abs")


def rado_case(case: str, p: Optional[ExponentField] = None, resolution: int = 33):
    """Mesh, grid function, exact gradient and exponent for a named case.

    linear1d: u = x on [-1, 1];  linear2d: u = x_1 on [-1, 1]^2;
    abs: u = |x| on [-1, 1]. The default exponent is affine with a nonzero slope.
    """
    if case not in RADO_CASES:
        raise ValueError(f"unknown Rado case {case!r}; expected one of {RADO_CASES}")
    dim = 2 if case == "linear2d" else 1
    mesh: Mesh = make_mesh(dim, [(-1.0, 1.0)] * dim, resolution)
    if p is None:
        p = make_exponent("affine", [(-1.0, 1.0)] * dim, p0=2.0, slope=0.4)
    if case == "abs":
        u = GridFunction.interpolate(mesh, lambda x: np.abs(x[:, 0]))

        def grad(x):
            return np.sign(x[:, :1])

    else:
        u = GridFunction.interpolate(mesh, lambda x: x[:, 0])

        def grad(x):
            g = np.zeros_like(x)
            g[:, 0] = 1.0
            return g

    return mesh, u, grad, p
