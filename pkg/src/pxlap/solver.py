"""Damped Newton minimization of the discrete p(x)-Dirichlet energy.

Solves -div(|Du|^{p(x)-2} Du) = c with Dirichlet data, for constant c.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import DEFAULT_REG_FLOOR, ElementData, assemble, element_energy, nodal_residual
from .exponent import ExponentField
from .mesh import Mesh
from .spaces import GridFunction, luxemburg_norm, modular, stiffness_matrix

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
ROUNDOFF_DECREASE = 1e-11


class ConvergenceError(RuntimeError):
    """Newton failed; carries the last iterate and the report."""

    def __init__(self, message, u: GridFunction, report: "SolveReport"):
        super().__init__(message)
        self.u = u
        self.report = report


@dataclass
class DirichletProblem:
    """-Delta_p(x) u = rhs_c in the mesh interior, u = boundary_data on the boundary.

    ``boundary_data`` is aligned with ``mesh.boundary_nodes``.
    """

    mesh: Mesh
    p: ExponentField
    rhs_c: float
    boundary_data: np.ndarray

    def __post_init__(self):
        self.boundary_data = np.asarray(self.boundary_data, dtype=float).reshape(-1)
        if len(self.boundary_data) != len(self.mesh.boundary_nodes):
            raise ValueError("boundary_data must have one value per boundary node")
        if not np.all(np.isfinite(self.boundary_data)):
            raise ValueError("boundary_data must be finite")
        self.rhs_c = float(self.rhs_c)

    @classmethod
    def from_function(cls, mesh: Mesh, p: ExponentField, rhs_c: float, g) -> "DirichletProblem":
        return cls(mesh, p, rhs_c, mesh.interpolate(g)[mesh.boundary_nodes])

    def with_rhs(self, rhs_c: float) -> "DirichletProblem":
        return DirichletProblem(self.mesh, self.p, rhs_c, self.boundary_data.copy())


@dataclass
class SolveReport:
    iterations: int = 0
    final_residual_norm: float = np.inf
    final_energy: float = np.nan
    step_history: list = field(default_factory=list)  # (damping, residual max-norm)
    energy_history: list = field(default_factory=list)
    converged: bool = False
    gradient_steps: int = 0
    local_min_certified: Optional[bool] = None
    tolerance: float = 0.0

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_residual_norm": self.final_residual_norm,
            "final_energy": self.final_energy,
            "step_history": [list(s) for s in self.step_history],
            "converged": self.converged,
            "gradient_steps": self.gradient_steps,
            "local_min_certified": self.local_min_certified,
            "tolerance": self.tolerance,
        }


def default_tolerance(mesh: Mesh) -> float:
    return 1e-10 if mesh.dimension == 1 else 1e-8


def harmonic_extension(problem: DirichletProblem) -> np.ndarray:
    """Nodal solution of the linear (p = 2) problem with the same data and load."""
    mesh = problem.mesh
    K = stiffness_matrix(mesh)
    free, bnd = mesh.free_nodes, mesh.boundary_nodes
    u = np.zeros(mesh.n_nodes)
    u[bnd] = problem.boundary_data
    if len(free):
        rhs = problem.rhs_c * mesh.lumped_mass[free] - K[free][:, bnd] @ problem.boundary_data
        u[free] = spla.spsolve(K[free][:, free].tocsc(), rhs)
    return u


def _newton_direction(H, r):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            d = spla.spsolve(H.tocsc(), -r)
    except (RuntimeError, spla.MatrixRankWarning):  # singular factorization
        return None
    if not np.all(np.isfinite(d)) or float(r @ d) >= 0.0:
        return None
    return d


def certify_local_min(
    problem: DirichletProblem,
    u: np.ndarray,
    probes: int = 20,
    size: float = 1e-4,
    slack: float = 1e-9,
    seed: int = 0,
) -> bool:
    """energy(u + dv) >= energy(u) - slack for random free-node dv, ||dv|| = size."""
    mesh = problem.mesh
    ed = ElementData.build(mesh, problem.p)
    e0 = element_energy(mesh, u, ed, problem.rhs_c)
    rng = np.random.default_rng(seed)
    free = mesh.free_nodes
    if len(free) == 0:
        return True
    for _ in range(probes):
        dv = rng.standard_normal(len(free))
        dv *= size / np.linalg.norm(dv)
        trial = u.copy()
        trial[free] += dv
        if element_energy(mesh, trial, ed, problem.rhs_c) < e0 - slack:
            return False
    return True


def solve(
    problem: DirichletProblem,
    tol: Optional[float] = None,
    max_iter: int = 200,
    initial: Optional[np.ndarray] = None,
    reg_floor: float = DEFAULT_REG_FLOOR,
    certify: bool = True,
) -> tuple[GridFunction, SolveReport]:
    """Minimize the energy by Newton with Armijo backtracking.

    Returns the solution and its report; raises :class:`ConvergenceError`
    if the residual max-norm does not reach ``tol`` within ``max_iter``.
    """
    mesh = problem.mesh
    tol = default_tolerance(mesh) if tol is None else float(tol)
    if tol <= 0:
        raise ValueError("tol must be positive")
    ed = ElementData.build(mesh, problem.p)
    free = mesh.free_nodes
    u = harmonic_extension(problem) if initial is None else np.asarray(initial, dtype=float).copy()
    u[mesh.boundary_nodes] = problem.boundary_data

    report = SolveReport(tolerance=tol)

    def energy(v):
        return element_energy(mesh, v, ed, problem.rhs_c)

    E = energy(u)
    report.energy_history.append(E)
    for it in range(max_iter + 1):
        sysm = assemble(GridFunction(mesh, u), problem.p, problem.rhs_c, reg_floor, element_data=ed)
        r = sysm.residual
        rnorm = float(np.abs(r).max()) if len(r) else 0.0
        report.iterations = it
        report.final_residual_norm = rnorm
        if rnorm <= tol:
            report.converged = True
            break
        if it == max_iter:
            break
        d_newton = _newton_direction(sysm.hessian, r)
        alpha, E_new, u_new = None, E, None

        def full_newton_step():
            # accept the full step if it shrinks the residual and keeps the energy
            u_try = u.copy()
            u_try[free] += d_newton
            r_try = nodal_residual(mesh, u_try, ed, problem.rhs_c, reg_floor)[free]
            E_try = energy(u_try)
            if np.abs(r_try).max() < 0.5 * rnorm and E_try <= E + 1e-13 * max(1.0, abs(E)):
                return 1.0, E_try, u_try
            return None, E, None

        if d_newton is not None:
            # a predicted decrease below round-off makes Armijo accept noise
            if -float(r @ d_newton) <= ROUNDOFF_DECREASE * max(1.0, abs(E)):
                alpha, E_new, u_new = full_newton_step()
            if u_new is None:
                alpha, E_new, u_new = _line_search(energy, u, free, d_newton, r, E)
        if u_new is None and d_newton is not None:
            alpha, E_new, u_new = full_newton_step()
        if u_new is None:
            report.gradient_steps += 1
            alpha, E_new, u_new = _line_search(energy, u, free, -r, r, E)
        if u_new is None:
            log.debug("line search failed at iteration %d", it)
            break
        u, E = u_new, E_new
        report.step_history.append((alpha, rnorm))
        report.energy_history.append(E)

    report.final_energy = E
    solution = GridFunction(mesh, u)
    if not report.converged:
        raise ConvergenceError(
            f"Newton did not converge: residual {report.final_residual_norm:.3e} > tol {tol:.1e} "
            f"after {report.iterations} iterations",
            solution,
            report,
        )
    if certify:
        report.local_min_certified = certify_local_min(problem, u)
    return solution, report


def _line_search(energy, u, free, d, r, E):
    slope = float(r @ d)
    alpha = 1.0
    for _ in range(MAX_HALVINGS):
        trial = u.copy()
        trial[free] += alpha * d
        try:
            Et = energy(trial)
        except ArithmeticError:
            Et = np.inf
        if Et <= E + ARMIJO_C * alpha * slope:
            return alpha, Et, trial
        alpha *= 0.5
    return alpha, E, None


# -- epsilon family ----------------------------------------------------------------


def epsilon_family(
    problem: DirichletProblem,
    eps_list: Sequence[float],
    tol: Optional[float] = None,
    max_iter: int = 200,
) -> list[tuple[float, GridFunction]]:
    """Solutions of -Delta_p(x) u = eps with the data of ``problem``, one per eps."""
    eps = [float(e) for e in eps_list]
    if any(e < 0 for e in eps):
        raise ValueError("eps values must be nonnegative")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    out = []
    prev = None
    for e in eps:
        u, _ = solve(problem.with_rhs(e), tol=tol, max_iter=max_iter, initial=prev)
        out.append((e, u))
        prev = u.values
    return out


@dataclass
class EpsSweepRow:
    eps: float
    sup_diff: float
    grad_modular_diff: float
    grad_norm_diff: float


def eps_sweep(problem: DirichletProblem, eps_list: Sequence[float], tol: Optional[float] = None):
    """Distances between the eps-solutions and the eps = 0 solution."""
    base, _ = solve(problem.with_rhs(0.0), tol=tol)
    family = epsilon_family(problem, eps_list, tol=tol)
    rows = []
    for e, ue in family:
        diff = base - ue
        rows.append(
            EpsSweepRow(
                e,
                float(np.abs(diff.values).max()),
                modular(diff, problem.p, of_gradient=True),
                luxemburg_norm(diff, problem.p, of_gradient=True),
            )
        )
    return base, family, rows


def rate_fit(rows: Sequence[EpsSweepRow]) -> float:
    """Log-log slope of modular(D(u - u_eps)) / (1 + ||D(u - u_eps)||) against eps."""
    e = np.array([r.eps for r in rows])
    y = np.array([r.grad_modular_diff / (1.0 + r.grad_norm_diff) for r in rows])
    keep = (e > 0) & (y > 0)
    slope, _ = np.polyfit(np.log(e[keep]), np.log(y[keep]), 1)
    return float(slope)


# -- weak comparison ----------------------------------------------------------------


@dataclass
class ComparisonReport:
    state: str  # "ordered", "violated" or "premise_not_satisfied"
    premise_gap: float  # max over free nodes of R(u)_i - R(v)_i (<= 0 when the premise holds)
    boundary_gap: float  # max over boundary nodes of u - v
    max_violation: float  # max over nodes of u - v

    @property
    def ordered(self) -> bool:
        return self.state == "ordered"


def check_weak_comparison(
    u: GridFunction,
    v: GridFunction,
    p: ExponentField,
    premise_tol: float = 1e-9,
    order_tol: float = 1e-8,
) -> ComparisonReport:
    """Check the weak comparison principle for a pair of grid functions.

    Premise: u <= v on the boundary and int flux(Du).Dphi <= int flux(Dv).Dphi
    for every hat function phi of a free node. If it holds, u <= v + order_tol
    is asserted nodewise.
    """
    if u.mesh is not v.mesh:
        raise ValueError("u and v must live on the same mesh")
    mesh = u.mesh
    ed = ElementData.build(mesh, p)
    free, bnd = mesh.free_nodes, mesh.boundary_nodes
    ru = nodal_residual(mesh, u.values, ed)[free]
    rv = nodal_residual(mesh, v.values, ed)[free]
    premise_gap = float((ru - rv).max()) if len(free) else 0.0
    boundary_gap = float((u.values[bnd] - v.values[bnd]).max())
    worst = float((u.values - v.values).max())
    if premise_gap > premise_tol or boundary_gap > premise_tol:
        state = "premise_not_satisfied"
    elif worst <= order_tol:
        state = "ordered"
    else:
        state = "violated"
    return ComparisonReport(state, premise_gap, boundary_gap, worst)
