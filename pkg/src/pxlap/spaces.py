"""Modular, Luxemburg norm and related diagnostics for P1 grid functions.

All integrals use the one-point barycenter rule per element: the exponent is
sampled at element barycenters, the function at the barycenter value of its
linear interpolant and the gradient is the constant elementwise gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exponent import ExponentField
from .mesh import Mesh

HOLDER_CONSTANT = 2.0


@dataclass(eq=False)
class GridFunction:
    """Nodal values of a continuous piecewise linear function on ``mesh``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.values) != self.mesh.n_nodes:
            raise ValueError(f"expected {self.mesh.n_nodes} nodal values, got {len(self.values)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")

    @classmethod
    def interpolate(cls, mesh: Mesh, fn) -> "GridFunction":
        return cls(mesh, mesh.interpolate(fn))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.mesh, values)

    def __add__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return self.with_values(self.values + other)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return self.with_values(self.values - other)

    def __mul__(self, t):
        return self.with_values(self.values * t)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def barycenter_values(self) -> np.ndarray:
        return self.values[self.mesh.elements].mean(axis=1)

    def gradients(self) -> np.ndarray:
        return self.mesh.gradients(self.values)

    def gradient_norms(self) -> np.ndarray:
        return np.linalg.norm(self.gradients(), axis=1)


# -- quadrature-level kernels -------------------------------------------------


def _modular_q(vals: np.ndarray, weights: np.ndarray, pvals: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return float(np.sum(weights * np.abs(vals) ** pvals))


def _luxemburg_q(vals: np.ndarray, weights: np.ndarray, pvals: np.ndarray, rtol: float = 1e-15) -> float:
    """Bisection for the lambda with modular(vals / lambda) = 1."""
    vals = np.abs(vals)
    top = float(vals.max()) if len(vals) else 0.0
    if top == 0.0:
        return 0.0
    lo = 1e-12
    hi = top * float(weights.sum()) + 1.0
    for _ in range(200):
        m = _modular_q(vals / hi, weights, pvals)
        if not np.isfinite(m):
            raise FloatingPointError("modular is not finite at the upper bracket")
        if m <= 1.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise FloatingPointError("failed to bracket the Luxemburg norm")
    while _modular_q(vals / lo, weights, pvals) < 1.0:
        hi, lo = lo, lo / 2.0
        if lo < 1e-300:
            raise FloatingPointError("failed to bracket the Luxemburg norm from below")
    # modular(vals / lam) is strictly decreasing in lam
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _modular_q(vals / mid, weights, pvals) > 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _quadrature(u: GridFunction, p: ExponentField, of_gradient: bool):
    mesh = u.mesh
    vals = u.gradient_norms() if of_gradient else u.barycenter_values()
    return vals, mesh.element_measures, p(mesh.barycenters)


# -- public operations ---------------------------------------------------------


def modular(u: GridFunction, p: ExponentField, of_gradient: bool = False) -> float:
    """Sum over elements of |e| * |v|^p(b_e), v = u or |Du| at the barycenter b_e."""
    return _modular_q(*_quadrature(u, p, of_gradient))


def luxemburg_norm(u: GridFunction, p: ExponentField, of_gradient: bool = False) -> float:
    """inf{lam > 0 : modular(u / lam) <= 1}, found by bracketing and bisection."""
    return _luxemburg_q(*_quadrature(u, p, of_gradient))


def modular_sandwich(norm: float, p: ExponentField) -> tuple[float, float]:
    """Lower and upper bounds on the modular implied by the norm."""
    a, b = norm ** p.p_plus, norm ** p.p_minus
    return min(a, b), max(a, b)


@dataclass(frozen=True)
class HolderCheck:
    lhs: float
    rhs: float
    ratio: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300


def holder_pairing_check(f: GridFunction, g: GridFunction, p: ExponentField) -> HolderCheck:
    """Compare int f g with 2 ||f||_p ||g||_p' (conjugate exponent taken pointwise)."""
    if f.mesh is not g.mesh:
        raise ValueError("f and g must live on the same mesh")
    mesh = f.mesh
    w = mesh.element_measures
    pv = p(mesh.barycenters)
    fv, gv = f.barycenter_values(), g.barycenter_values()
    lhs = float(np.sum(w * fv * gv))
    rhs = HOLDER_CONSTANT * _luxemburg_q(fv, w, pv) * _luxemburg_q(gv, w, pv / (pv - 1.0))
    ratio = lhs / rhs if rhs > 0 else 0.0
    check = HolderCheck(lhs, rhs, ratio)
    if not check.holds:
        raise AssertionError(f"Hoelder inequality violated: {lhs} > {rhs}")
    return check


def poincare_ratio(u: GridFunction, p: ExponentField, atol: float = 1e-12) -> float:
    """||u||_p / (diam * ||Du||_p) for u vanishing on the boundary."""
    if np.any(np.abs(u.values[u.mesh.boundary_nodes]) > atol):
        raise ValueError("poincare_ratio needs zero boundary values")
    grad_norm = luxemburg_norm(u, p, of_gradient=True)
    if grad_norm == 0.0:
        raise ValueError("poincare_ratio is undefined for u == 0")
    return luxemburg_norm(u, p) / (u.mesh.diameter * grad_norm)


def liminf_layers(u: GridFunction, radius_steps: int) -> list[np.ndarray]:
    """Neighbourhood minima over 0, 1, ..., radius_steps graph layers.

    Entry k is the nodewise minimum of u over all nodes within k edges; the
    list is nonincreasing in k and entry 0 is u itself.
    """
    if radius_steps < 1:
        raise ValueError("radius_steps must be >= 1")
    adj = u.mesh.adjacency
    indptr, indices = adj.indptr, adj.indices
    layers = [u.values.copy()]
    cur = u.values.copy()
    for _ in range(radius_steps):
        nxt = cur.copy()
        # min over each node's 1-ring, applied to the previous layer
        nbr_min = np.minimum.reduceat(cur[indices], indptr[:-1]) if len(indices) else cur
        has = np.diff(indptr) > 0
        nxt[has] = np.minimum(cur[has], nbr_min[has])
        layers.append(nxt)
        cur = nxt
    return layers


def ess_liminf_regularize(u: GridFunction, radius_steps: int) -> GridFunction:
    """Discrete lower regularization: min of u over ``radius_steps`` graph layers.

    Graph layers stand in for shrinking balls; the full shrinking sequence is
    available from :func:`liminf_layers`.
    """
    return u.with_values(liminf_layers(u, radius_steps)[-1])


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    """P1 Laplace stiffness matrix on all nodes."""
    g = mesh.basis_grads
    local = np.einsum("e,ekd,eld->ekl", mesh.element_measures, g, g)
    k = mesh.dimension + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()
