"""Touching tests, limsup scans and doubling-of-variables experiments on grids.

Continuous maxima and jets are replaced by maxima over mesh nodes; test
functions are smooth closed forms whose exact jets are evaluated at the
touching node.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .exponent import ExponentField
from .operators import Branch, Jet2, normalized_pxlap, pxlap_expanded
from .spaces import GridFunction

TOUCH_ATOL = 1e-10
STRICT_GAP = 1e-12
VIOLATION_TOL = 1e-6
MAX_PAIRS = 10**7
CURVATURES = (-10.0, -1.0, -0.1, 0.0, 0.1, 1.0, 10.0)


# -- test functions ---------------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A C^2 test function with exact gradient and Hessian.

    quadratic:         c + b.(x-x0) + (x-x0)^T M (x-x0) / 2
    doubling_penalty:  c - (j/q) |x-y|^q
    custom_radial:     c + g(|x-x0|), needs g, dg, d2g with dg(0) = 0
    """

    __test__ = False  # not a pytest class

    kind: str
    center: np.ndarray
    const: float = 0.0
    b: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    j: float = 1.0
    q: float = 4.0
    g: Optional[Callable] = None
    dg: Optional[Callable] = None
    d2g: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("quadratic", "doubling_penalty", "custom_radial"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        n = len(self.center)
        if self.kind == "quadratic":
            b = np.zeros(n) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
            M = np.zeros((n, n)) if self.M is None else np.atleast_2d(np.asarray(self.M, dtype=float))
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise ValueError("quadratic test function needs a symmetric matrix")
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "M", M)
        elif self.kind == "doubling_penalty":
            if self.q <= 2:
                raise ValueError("doubling penalty needs q > 2")
        elif None in (self.g, self.dg, self.d2g):
            raise ValueError("custom_radial needs g, dg and d2g")

    @classmethod
    def quadratic(cls, center, b, M, const=0.0):
        return cls("quadratic", center, const, b=b, M=M)

    @classmethod
    def penalty(cls, anchor, j, q, const=0.0):
        return cls("doubling_penalty", anchor, const, j=float(j), q=float(q))

    @property
    def dim(self) -> int:
        return len(self.center)

    def shifted(self, delta: float) -> "TestFunction":
        return replace(self, const=self.const + float(delta))

    def __call__(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        z = pts - self.center
        if self.kind == "quadratic":
            val = self.const + z @ self.b + 0.5 * np.einsum("mi,ij,mj->m", z, self.M, z)
        elif self.kind == "doubling_penalty":
            val = self.const - (self.j / self.q) * np.linalg.norm(z, axis=1) ** self.q
        else:
            val = self.const + np.asarray(self.g(np.linalg.norm(z, axis=1)), dtype=float)
        return val

    def grad(self, x) -> np.ndarray:
        z = np.asarray(x, dtype=float).reshape(self.dim) - self.center
        r = float(np.linalg.norm(z))
        if self.kind == "quadratic":
            return self.b + self.M @ z
        if self.kind == "doubling_penalty":
            return -self.j * r ** (self.q - 2.0) * z
        return float(self.dg(r)) / r * z if r > 0 else np.zeros(self.dim)

    def hess(self, x) -> np.ndarray:
        z = np.asarray(x, dtype=float).reshape(self.dim) - self.center
        r = float(np.linalg.norm(z))
        eye = np.eye(self.dim)
        if self.kind == "quadratic":
            return self.M.copy()
        if self.kind == "doubling_penalty":
            if r == 0.0:
                return np.zeros((self.dim, self.dim))  # continuous limit for q > 2
            return -self.j * (r ** (self.q - 2.0) * eye + (self.q - 2.0) * r ** (self.q - 4.0) * np.outer(z, z))
        if r == 0.0:
            return float(self.d2g(0.0)) * eye
        e = z / r
        ee = np.outer(e, e)
        return float(self.d2g(r)) * ee + float(self.dg(r)) / r * (eye - ee)

    def jet(self, x) -> Jet2:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        return Jet2(x, float(self(x)[0]), self.grad(x), self.hess(x))


# -- touching --------------------------------------------------------------------


@dataclass(frozen=True)
class Touching:
    status: str  # "touching", "ambiguous" or "none"
    node: Optional[int] = None
    gap: float = np.nan  # min of u - phi (from below) or phi - u (from above)


def _signed_gap(u: GridFunction, phi: TestFunction, from_below: bool) -> np.ndarray:
    d = u.values - phi(u.mesh.nodes)
    return d if from_below else -d


def lift_to_touch(u: GridFunction, phi: TestFunction, from_below: bool = True) -> TestFunction:
    """Shift phi vertically so that it touches u (from below or above) on the nodes."""
    gap = _signed_gap(u, phi, from_below)
    return phi.shifted(gap.min() if from_below else -gap.min())


def find_touching(u: GridFunction, phi: TestFunction, from_below: bool = True) -> Touching:
    """Node x0 where phi touches u: equality there, strict inequality elsewhere."""
    gap = _signed_gap(u, phi, from_below)
    k = int(np.argmin(gap))
    m = float(gap[k])
    if abs(m) > TOUCH_ATOL:
        return Touching("none", None, m)
    if np.count_nonzero(gap < m + STRICT_GAP) > 1:
        return Touching("ambiguous", None, m)
    return Touching("touching", k, m)


# -- viscosity tests ---------------------------------------------------------------


@dataclass
class TouchRecord:
    phi_id: int
    status: str  # evaluated, zero_gradient, ambiguous, no_touching, boundary
    x0: Optional[np.ndarray] = None
    grad_norm: float = np.nan
    op_value: float = np.nan  # -Delta_p(x) phi(x0)
    required: float = 0.0
    violated: bool = False


@dataclass
class ViscosityReport:
    side: str
    rhs: float
    records: list = field(default_factory=list)

    @property
    def violations(self) -> list:
        return [r for r in self.records if r.violated]

    @property
    def evaluated(self) -> int:
        return sum(r.status == "evaluated" for r in self.records)

    @property
    def vacuous(self) -> bool:
        return self.evaluated == 0

    @property
    def passed(self) -> bool:
        return not self.violations


def viscosity_test(
    u: GridFunction,
    p: ExponentField,
    rhs: float,
    family: Sequence[TestFunction],
    side: str = "super",
    lift: bool = True,
    tol: float = VIOLATION_TOL,
) -> ViscosityReport:
    """Touching test of -Delta_p(x) u >= rhs (side="super") or <= rhs ("sub").

    Each member is lifted to touch u (from below for "super"), then the
    operator is evaluated at the touching node. Members touching at a boundary
    node, with ties, or with a vanishing gradient are recorded but never count
    as violations.
    """
    if not family:
        raise ValueError("test family is empty")
    if side not in ("super", "sub"):
        raise ValueError("side must be 'super' or 'sub'")
    from_below = side == "super"
    report = ViscosityReport(side, float(rhs))
    for i, phi in enumerate(family):
        if lift:
            phi = lift_to_touch(u, phi, from_below)
        t = find_touching(u, phi, from_below)
        rec = TouchRecord(i, "no_touching" if t.status == "none" else t.status, required=float(rhs))
        if t.status == "touching":
            x0 = u.mesh.nodes[t.node]
            rec.x0 = x0
            if u.mesh.is_boundary[t.node]:
                rec.status = "boundary"
            else:
                jet = phi.jet(x0)
                rec.grad_norm = float(np.linalg.norm(jet.xi))
                if rec.grad_norm == 0.0 or not p.is_regular(x0):
                    rec.status = "zero_gradient"
                else:
                    rec.status = "evaluated"
                    rec.op_value = -pxlap_expanded(jet, p)
                    if from_below:
                        rec.violated = rec.op_value < rhs - tol
                    else:
                        rec.violated = rec.op_value > rhs + tol
        report.records.append(rec)
    return report


def viscosity_supersolution_test(u, p, rhs, family, lift=True) -> ViscosityReport:
    return viscosity_test(u, p, rhs, family, side="super", lift=lift)


def sphere_directions(dim: int, count: int = 16) -> np.ndarray:
    """Unit vectors covering the sphere (both directions in 1D)."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    k = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * k / count)
    th = np.pi * (1 + 5**0.5) * k
    return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])


def nodal_gradient(u: GridFunction, node: int) -> np.ndarray:
    """Mean of the element gradients over the star of a node."""
    star = u.mesh.node_elements[node]
    return u.gradients()[star].mean(axis=0)


def quadratic_family(
    u: GridFunction,
    size: int,
    rng: np.random.Generator,
    slope_jitter: float = 0.05,
) -> list[TestFunction]:
    """Quadratic test functions adapted to u.

    Centers are random interior nodes; the linear part is u's nodal gradient
    plus ``slope_jitter`` times a direction from a 16-point sphere covering;
    the Hessian is kappa I (kappa from CURVATURES) plus a random rank-one term
    rho w w^T with rho in {-1, 0, 1}.
    """
    mesh = u.mesh
    interior = mesh.free_nodes
    dirs = sphere_directions(mesh.dimension)
    out = []
    for k in range(size):
        c = int(rng.choice(interior))
        x0 = mesh.nodes[c]
        b = nodal_gradient(u, c) + slope_jitter * dirs[k % len(dirs)]
        kappa = CURVATURES[rng.integers(len(CURVATURES))]
        rho = float(rng.choice([-1.0, 0.0, 1.0]))
        w = dirs[rng.integers(len(dirs))]
        M = kappa * np.eye(mesh.dimension) + rho * np.outer(w, w)
        out.append(TestFunction.quadratic(x0, b, M, const=float(u.values[c])))
    return out


# -- limsup scan near a touching point -----------------------------------------------


@dataclass
class LimsupScan:
    value: float  # sup over the smallest punctured neighbourhood
    sups: list  # (radius, sup) for each radius, largest first
    passed: bool  # value >= eps - 1e-6


def _ring(x0: np.ndarray, r: float, count: int = 32) -> np.ndarray:
    return x0 + r * sphere_directions(len(x0), count)


def limsup_operator_scan(
    v: GridFunction,
    phi: TestFunction,
    eps: float,
    radii: Sequence[float],
    p: ExponentField,
    x0=None,
) -> LimsupScan:
    """Surrogate of limsup_{x -> x0, x != x0} -Delta_p(x) phi(x).

    For each radius r the operator is sampled at mesh nodes with 0 < |x-x0| <= r
    and at 32 ring points (two in 1D) at every radius <= r; the sups are
    nested, and the one for the smallest radius is returned.
    """
    radii = sorted((float(r) for r in radii), reverse=True)
    if not radii or radii[-1] <= 0:
        raise ValueError("radii must be positive")
    if x0 is None:
        t = find_touching(v, phi, from_below=True)
        if t.status != "touching":
            raise ValueError(f"phi does not touch v from below ({t.status})")
        x0 = v.mesh.nodes[t.node]
    x0 = np.asarray(x0, dtype=float).reshape(v.mesh.dimension)

    nodes = v.mesh.nodes
    dist = np.linalg.norm(nodes - x0, axis=1)
    samples = [nodes[(dist > 0) & (dist <= radii[0])]]
    samples += [_ring(x0, r) for r in radii]
    pts = np.concatenate(samples)
    pts = pts[p.domain.contains(pts)]
    rad = np.linalg.norm(pts - x0, axis=1)
    vals = np.full(len(pts), -np.inf)
    for i, x in enumerate(pts):
        jet = phi.jet(x)
        if np.linalg.norm(jet.xi) > 0 and p.is_regular(x):
            vals[i] = -pxlap_expanded(jet, p)
    if not np.any(np.isfinite(vals)):
        raise ValueError("phi has a vanishing gradient at every sample point")
    sups = []
    for r in radii:
        sel = (rad <= r * (1 + 1e-12)) & np.isfinite(vals)
        sups.append((r, float(vals[sel].max()) if np.any(sel) else -np.inf))
    value = sups[-1][1]
    return LimsupScan(value, sups, bool(value >= eps - 1e-6))


def penalty_operator_closed_form(y, anchor, j: float, q: float, p: ExponentField) -> float:
    """-Delta_p(x) of phi(y) = -(j/q)|anchor - y|^q, written out in closed form.

    With z = anchor - y and s = |z|:
    j^{p-1} s^{q(p-1)-p} [ n+q-2+(p-2)(q-1) - log(j s^{q-1}) z.Dp(y) ].
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(anchor, dtype=float) - y
    s = float(np.linalg.norm(z))
    n = len(z)
    py = p(y)
    expo = q * (py - 1.0) - py
    bracket = n + q - 2.0 + (py - 2.0) * (q - 1.0) - np.log(j * s ** (q - 1.0)) * float(z @ p.grad(y))
    return float(j ** (py - 1.0) * s**expo * bracket)


# -- doubling of variables ------------------------------------------------------------


def admissible_q_min(p: ExponentField) -> float:
    pm = p.p_minus
    return max(2.0, pm / (pm - 1.0))


def default_q(p: ExponentField) -> float:
    return admissible_q_min(p) + 0.5


def default_delta(p: ExponentField) -> float:
    return min(0.1, 0.5 / (p.p_plus - 1.0))


@dataclass
class DoublingRecord:
    j: float
    x_node: int
    y_node: int
    x: np.ndarray
    y: np.ndarray
    gap: float
    wmax: float
    eta: np.ndarray
    decay: float
    op_at_x: float
    op_at_y: float
    branch_x: str
    branch_y: str
    interior: bool  # x_j is an interior node
    interior_max: float  # max of w_j over interior pairs
    crossing: bool  # interior_max > boundary max of u - v + 1e-8

    @property
    def eta_norm(self) -> float:
        return float(np.linalg.norm(self.eta))


@dataclass
class DoublingTrace:
    q: float
    delta: float
    boundary_max: float
    records: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def no_interior_crossing(self) -> bool:
        """Certificate at the largest j."""
        return not self.records[-1].crossing

    @property
    def eta_nonvanishing(self) -> bool:
        """x_j != y_j whenever x_j is interior."""
        return all(r.gap > 0 for r in self.records if r.interior)

    def decay_top_decade_nonincreasing(self, rtol: float = 1e-12) -> bool:
        js = self.column("j")
        dec = self.column("decay")
        top = dec[js >= js.max() / 10.0]
        return bool(np.all(np.diff(top) <= rtol * np.maximum(top[:-1], 1e-300)))

    @property
    def decay_ratio(self) -> float:
        dec = self.column("decay")
        return float(dec[-1] / dec[0]) if dec[0] > 0 else (0.0 if dec[-1] == 0 else np.inf)


def _pair_setup(u: GridFunction, v: GridFunction):
    if u.mesh is not v.mesh:
        raise ValueError("u and v must live on the same mesh")
    n = u.mesh.n_nodes
    if n * n > MAX_PAIRS:
        raise ValueError(f"{n}^2 node pairs exceed the limit of {MAX_PAIRS}")
    nodes = u.mesh.nodes
    dist = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=2)
    base = u.values[:, None] - v.values[None, :]
    return nodes, dist, base


def penalty_hessian_x(z: np.ndarray, j: float, q: float) -> np.ndarray:
    """D_xx of (j/q)|x-y|^q at z = x - y (equal to D_yy)."""
    s = float(np.linalg.norm(z))
    n = len(z)
    if s == 0.0:
        return np.zeros((n, n)) if q > 2 else j * np.eye(n)
    return j * (s ** (q - 2.0) * np.eye(n) + (q - 2.0) * s ** (q - 4.0) * np.outer(z, z))


def penalty_gradient_x(z: np.ndarray, j: float, q: float) -> np.ndarray:
    """D_x of (j/q)|x-y|^q at z = x - y."""
    return j * float(np.linalg.norm(z)) ** (q - 2.0) * z


def _run_doubling(u, v, p, q, delta, j_list, evaluate) -> DoublingTrace:
    nodes, dist, base = _pair_setup(u, v)
    dq = dist**q
    bmask = u.mesh.is_boundary
    boundary_max = float((u.values - v.values)[bmask].max())
    inner = ~bmask
    trace = DoublingTrace(float(q), float(delta), boundary_max)
    for j in sorted(float(j) for j in j_list):
        W = base - (j / q) * dq
        k = int(np.argmax(W))
        xi, yi = divmod(k, W.shape[1])
        z = nodes[xi] - nodes[yi]
        gap = float(np.linalg.norm(z))
        eta = penalty_gradient_x(z, j, q)
        interior_max = float(W[np.ix_(inner, inner)].max()) if inner.any() else -np.inf
        opx, bx, opy, by = evaluate(nodes[xi], nodes[yi], z, eta, j)
        trace.records.append(
            DoublingRecord(
                j=j,
                x_node=xi,
                y_node=yi,
                x=nodes[xi].copy(),
                y=nodes[yi].copy(),
                gap=gap,
                wmax=float(W[xi, yi]),
                eta=eta,
                decay=j * gap ** (q - 1.0 + delta),
                op_at_x=opx,
                op_at_y=opy,
                branch_x=bx,
                branch_y=by,
                interior=bool(inner[xi]),
                interior_max=interior_max,
                crossing=interior_max > boundary_max + 1e-8,
            )
        )
    return trace


def doubling_experiment(
    u: GridFunction,
    v: GridFunction,
    p: ExponentField,
    q: Optional[float] = None,
    j_list: Sequence[float] = tuple(10.0**k for k in range(7)),
    delta: Optional[float] = None,
) -> DoublingTrace:
    """Maximize u(x) - v(y) - (j/q)|x-y|^q over node pairs for each j.

    Operator values are -Delta_p(x) of the penalty test functions: at x_j the
    jet (eta_j, D_xx Psi) of Psi(., y_j), at y_j the jet (eta_j, -D_yy Psi)
    of -Psi(x_j, .). Both are NaN when x_j = y_j.
    """
    qmin = admissible_q_min(p)
    q = default_q(p) if q is None else float(q)
    if q <= qmin:
        raise ValueError(f"q must exceed max(2, p-/(p- - 1)) = {qmin:.6g}; got {q}")
    delta = default_delta(p) if delta is None else float(delta)
    if delta <= 0 or 1.0 - delta * (p.p_plus - 1.0) <= 0:
        raise ValueError("delta must be positive with 1 - delta (p+ - 1) > 0")

    def evaluate(x, y, z, eta, j):
        if not np.any(eta):
            return np.nan, Branch.SINGULAR.value, np.nan, Branch.SINGULAR.value
        H = penalty_hessian_x(z, j, q)
        opx = -pxlap_expanded(Jet2(x, 0.0, eta, H), p) if p.is_regular(x) else np.nan
        opy = -pxlap_expanded(Jet2(y, 0.0, eta, -H), p) if p.is_regular(y) else np.nan
        return opx, Branch.REGULAR.value, opy, Branch.REGULAR.value

    return _run_doubling(u, v, p, q, delta, j_list, evaluate)


def normalized_doubling_experiment(
    u: GridFunction,
    v: GridFunction,
    p: ExponentField,
    j_list: Sequence[float] = tuple(10.0**k for k in range(7)),
    delta: Optional[float] = None,
) -> DoublingTrace:
    """Quartic-penalty doubling with the normalized operator.

    Values are -Delta^N of the penalty test functions with the subsolution
    envelope at x_j and the supersolution envelope at y_j.
    """
    q = 4.0
    delta = default_delta(p) if delta is None else float(delta)

    def evaluate(x, y, z, eta, j):
        H = penalty_hessian_x(z, j, q)
        ox = normalized_pxlap(Jet2(x, 0.0, eta, H), p, side="sub")
        oy = normalized_pxlap(Jet2(y, 0.0, eta, -H), p, side="super")
        return -ox.value, ox.branch.value, -oy.value, oy.branch.value

    return _run_doubling(u, v, p, q, delta, j_list, evaluate)


# -- comparison --------------------------------------------------------------------


@dataclass
class OrderingReport:
    state: str  # "ordered", "violated" or "boundary_not_ordered"
    boundary_gap: float
    worst_interior: float
    worst_node: Optional[int]

    @property
    def ordered(self) -> bool:
        return self.state == "ordered"


def boundary_ordering_check(u: GridFunction, v: GridFunction) -> OrderingReport:
    """Boundary ordering u <= v must propagate to every node (within 1e-8)."""
    if u.mesh is not v.mesh:
        raise ValueError("u and v must live on the same mesh")
    mesh = u.mesh
    d = u.values - v.values
    bgap = float(d[mesh.boundary_nodes].max())
    free = mesh.free_nodes
    if len(free):
        k = int(free[np.argmax(d[free])])
        worst = float(d[k])
    else:
        k, worst = None, -np.inf
    if bgap > 1e-10:
        state = "boundary_not_ordered"
    elif worst <= 1e-8:
        state = "ordered"
    else:
        state = "violated"
    return OrderingReport(state, bgap, worst, k)


# interface names
lemma_xx_scan = limsup_operator_scan
comparison_theorem_check = boundary_ordering_check
