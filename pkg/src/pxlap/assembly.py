"""Assembly of the discrete p(x)-Dirichlet energy, its gradient and Hessian.

The discrete energy of a P1 function u is

    E(u) = sum_e |e| w_e |Du_e|^{p_e} / p_e  -  c * int u

with p_e = p(barycenter) and an optional weight w_e (used for radial
problems, where it carries r^{n-1}). Its gradient with respect to the nodal
values is the weak residual tested against hat functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exponent import ExponentField
from .mesh import Mesh

DEFAULT_REG_FLOOR = 1e-12


class AssemblyOverflow(ArithmeticError):
    """|Du|^p left the floating point range."""


@dataclass
class AssembledSystem:
    energy: float
    residual: np.ndarray  # over free nodes
    hessian: sp.csr_matrix  # free x free
    free: np.ndarray
    full_residual: np.ndarray  # every node, boundary rows included


@dataclass(frozen=True)
class ElementData:
    """Per-element quantities that do not depend on u."""

    p: np.ndarray
    weight: np.ndarray  # |e| times the optional density

    @classmethod
    def build(cls, mesh: Mesh, p: ExponentField, weight: Optional[Callable] = None) -> "ElementData":
        bc = mesh.barycenters
        pv = p(bc)
        if np.any(pv <= 1.0):
            raise ValueError("exponent must exceed 1 at every quadrature point")
        w = mesh.element_measures.copy()
        if weight is not None:
            w = w * np.asarray(weight(bc), dtype=float).reshape(-1)
        return cls(pv, w)


def _coefficients(grad_norm: np.ndarray, pv: np.ndarray, reg_floor: float) -> np.ndarray:
    """a_e with flux = a_e Du_e; the floor only enters where p < 2."""
    m = np.where(pv < 2.0, np.maximum(grad_norm, reg_floor), grad_norm)
    with np.errstate(divide="ignore", over="ignore"):
        a = m ** (pv - 2.0)
    # 0^0 = 1 handles p = 2; p > 2 gives 0; p < 2 with m = 0 only when reg_floor = 0
    return a


def element_energy(mesh: Mesh, values: np.ndarray, ed: ElementData, rhs_c: float = 0.0) -> float:
    grads = mesh.gradients(values)
    with np.errstate(over="ignore"):
        gn = np.linalg.norm(grads, axis=1)
        dens = gn**ed.p / ed.p
    if not np.all(np.isfinite(dens)):
        raise AssemblyOverflow("|Du|^p overflowed in the energy")
    load = 0.0
    if rhs_c != 0.0:
        load = rhs_c * float(np.sum(ed.weight * values[mesh.elements].mean(axis=1)))
    return float(np.sum(ed.weight * dens)) - load


def nodal_residual(
    mesh: Mesh,
    values: np.ndarray,
    ed: ElementData,
    rhs_c: float = 0.0,
    reg_floor: float = DEFAULT_REG_FLOOR,
) -> np.ndarray:
    """sum_e |e| w_e a_e Du_e . Dphi_i - c int phi_i for every node i."""
    grads = mesh.gradients(values)
    gn = np.linalg.norm(grads, axis=1)
    a = _coefficients(gn, ed.p, reg_floor)
    fl = (ed.weight * a)[:, None] * grads
    if not np.all(np.isfinite(fl)):
        raise AssemblyOverflow("flux overflowed")
    local = np.einsum("ed,ekd->ek", fl, mesh.basis_grads)
    if rhs_c != 0.0:
        local = local - rhs_c * (ed.weight / (mesh.dimension + 1))[:, None]
    # bincount accumulates in element order, so results are deterministic
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def _hessian(mesh: Mesh, values: np.ndarray, ed: ElementData, reg_floor: float) -> sp.csr_matrix:
    grads = mesh.gradients(values)
    gn = np.linalg.norm(grads, axis=1)
    pv = ed.p
    a = _coefficients(gn, pv, reg_floor)
    d = mesh.dimension
    # D(flux) = a (I + (p-2) e e^T) where the unregularized branch is active
    active = (pv >= 2.0) | (gn >= reg_floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(gn[:, None] > 0, grads / np.where(gn > 0, gn, 1.0)[:, None], 0.0)
    coef = np.where(active, pv - 2.0, 0.0)
    Amat = a[:, None, None] * (np.eye(d)[None] + coef[:, None, None] * np.einsum("ei,ej->eij", e, e))
    local = np.einsum("e,eki,eij,elj->ekl", ed.weight, mesh.basis_grads, Amat, mesh.basis_grads)
    k = d + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsr()


def assemble(
    u,
    p: ExponentField,
    rhs_c: float = 0.0,
    reg_floor: float = DEFAULT_REG_FLOOR,
    weight: Optional[Callable] = None,
    element_data: Optional[ElementData] = None,
) -> AssembledSystem:
    """Energy, free-node residual and free-node Hessian at the grid function u."""
    if reg_floor < 0:
        raise ValueError("reg_floor must be nonnegative")
    mesh = u.mesh
    ed = element_data or ElementData.build(mesh, p, weight)
    values = u.values
    energy = element_energy(mesh, values, ed, rhs_c)
    full = nodal_residual(mesh, values, ed, rhs_c, reg_floor)
    free = mesh.free_nodes
    H = _hessian(mesh, values, ed, reg_floor)[free][:, free].tocsr()
    return AssembledSystem(energy, full[free], H, free, full)
