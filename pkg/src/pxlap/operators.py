"""Pointwise evaluation of the p(x)-Laplacian and its relatives on 2-jets.

Sign conventions: every function returns the operator itself (e.g.
``div(|Dphi|^{p-2} Dphi)``), not its negative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exponent import ExponentField

# below this gradient length log|xi| is treated as singular
TINY_GRADIENT = 1e-300


class Branch(str, enum.Enum):
    REGULAR = "regular"
    ENVELOPE_LAMBDA_MIN = "envelope_lambda_min"
    ENVELOPE_LAMBDA_MAX = "envelope_lambda_max"
    SINGULAR = "singular"


@dataclass(frozen=True)
class Jet2:
    """Point, value, gradient and symmetric Hessian of a C^2 function."""

    x: np.ndarray
    value: float
    xi: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = len(x)
        if xi.shape != (n,) or X.shape != (n, n):
            raise ValueError(f"inconsistent jet shapes: x {x.shape}, xi {xi.shape}, X {X.shape}")
        if np.max(np.abs(X - X.T)) > 1e-12:
            raise ValueError("jet Hessian is not symmetric")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class OperatorValue:
    value: float
    branch: Branch


def _nonzero(xi: np.ndarray, what: str) -> float:
    r = float(np.linalg.norm(xi))
    if r == 0.0:
        raise ValueError(f"{what} is undefined for a vanishing gradient")
    return r


def flux(x, xi, p: ExponentField) -> np.ndarray:
    """|xi|^{p(x)-2} xi, extended by 0 at xi = 0."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = float(np.linalg.norm(xi))
    if r == 0.0:
        return np.zeros_like(xi)
    return r ** (p(x) - 2.0) * xi


def infinity_lap(jet: Jet2) -> float:
    """Normalized infinity-Laplacian X xi . xi / |xi|^2."""
    r = _nonzero(jet.xi, "the infinity-Laplacian")
    e = jet.xi / r
    return float(e @ jet.X @ e)


def pxlap_expanded(jet: Jet2, p: ExponentField) -> float:
    """|xi|^{p-2} (tr X + Dp . xi log|xi| + (p-2) Delta_inf), for xi != 0."""
    r = _nonzero(jet.xi, "the p(x)-Laplacian")
    p.require_regular(jet.x)
    px = p(jet.x)
    dp = p.grad(jet.x)
    return r ** (px - 2.0) * (np.trace(jet.X) + float(dp @ jet.xi) * np.log(r) + (px - 2.0) * infinity_lap(jet))


def pxlap_value(jet: Jet2, p: ExponentField) -> OperatorValue:
    """Divergence-form operator with its branch tag.

    Gradients shorter than ``TINY_GRADIENT`` are reported as singular when
    p(x) < 2; for p(x) >= 2 they are rejected like an exactly vanishing one.
    """
    r = float(np.linalg.norm(jet.xi))
    if r < TINY_GRADIENT:
        if p(jet.x) < 2.0:
            return OperatorValue(float("nan"), Branch.SINGULAR)
        raise ValueError("the p(x)-Laplacian is not evaluated at a vanishing gradient")
    return OperatorValue(pxlap_expanded(jet, p), Branch.REGULAR)


def matrix_A(x, xi, p: ExponentField) -> np.ndarray:
    """|xi|^{p-2} (I + (p-2) e e^T) with e = xi/|xi|."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = _nonzero(xi, "A(x, xi)")
    px = p(x)
    e = xi / r
    return r ** (px - 2.0) * (np.eye(len(xi)) + (px - 2.0) * np.outer(e, e))


def scalar_B(x, xi, p: ExponentField) -> float:
    """|xi|^{p-2} log|xi| xi . Dp."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = _nonzero(xi, "B(x, xi)")
    p.require_regular(x)
    return float(r ** (p(x) - 2.0) * np.log(r) * (xi @ p.grad(x)))


def jet_form_F(jet: Jet2, p: ExponentField) -> float:
    """trace(A X) + B; the same number as :func:`pxlap_expanded`."""
    return float(np.trace(matrix_A(jet.x, jet.xi, p) @ jet.X) + scalar_B(jet.x, jet.xi, p))


def sym_sqrt(S: np.ndarray) -> np.ndarray:
    """Square root of a symmetric positive semidefinite matrix via eigh."""
    w, V = np.linalg.eigh(S)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ValueError("matrix is not positive semidefinite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sqrt_A_lambda_min(x, xi, p: ExponentField) -> float:
    """Closed-form smallest eigenvalue of A(x, xi)^{1/2}.

    In dimension n >= 2 this is min{1, sqrt(p-1)} |xi|^{(p-2)/2}. For n = 1,
    A is the scalar (p-1)|xi|^{p-2} and the min{1, .} factor is only a lower
    bound, so the exact value sqrt(p-1)|xi|^{(p-2)/2} is returned.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    r = _nonzero(xi, "A(x, xi)")
    px = p(x)
    factor = np.sqrt(px - 1.0) if len(xi) == 1 else min(1.0, np.sqrt(px - 1.0))
    return float(factor * r ** ((px - 2.0) / 2.0))


def sqrt_A_lambda_min_numeric(x, xi, p: ExponentField) -> float:
    """Smallest eigenvalue of the eigh-computed square root of A."""
    return float(np.linalg.eigvalsh(sym_sqrt(matrix_A(x, xi, p))).min())


def normalized_pxlap(jet: Jet2, p: ExponentField, side: str = "sub") -> OperatorValue:
    """Normalized operator tr X + (p-2) Delta_inf with its envelope at xi = 0.

    At a vanishing gradient the Hessian term is replaced by an eigenvalue:
    ``side="sub"`` (the subsolution test) uses lambda_min when p < 2 and
    lambda_max when p >= 2; ``side="super"`` swaps the two.
    """
    if side not in ("sub", "super"):
        raise ValueError("side must be 'sub' or 'super'")
    px = p(jet.x)
    tr = float(np.trace(jet.X))
    if np.linalg.norm(jet.xi) > 0.0:
        return OperatorValue(tr + (px - 2.0) * infinity_lap(jet), Branch.REGULAR)
    eig = np.linalg.eigvalsh(jet.X)
    use_min = (px < 2.0) == (side == "sub")
    if use_min:
        return OperatorValue(tr + (px - 2.0) * float(eig[0]), Branch.ENVELOPE_LAMBDA_MIN)
    return OperatorValue(tr + (px - 2.0) * float(eig[-1]), Branch.ENVELOPE_LAMBDA_MAX)


@dataclass(frozen=True)
class MonoGap:
    lhs: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.lhs >= self.bound * (1 - 1e-12) - 1e-300 and self.bound >= 0.0


def mono_gap(x, xi, eta, p: ExponentField) -> MonoGap:
    """Monotonicity gap of the flux against its lower bound.

    lhs = (flux(xi) - flux(eta)) . (xi - eta); the bound is
    2^{2-p} |xi-eta|^p for p >= 2 and (p-1)|xi-eta|^2 / (|xi|+|eta|)^{2-p}
    for 1 < p < 2 (taken as 0 when xi = eta = 0).
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    px = p(x)
    d = xi - eta
    lhs = float((flux(x, xi, p) - flux(x, eta, p)) @ d)
    dn = float(np.linalg.norm(d))
    if px >= 2.0:
        bound = 2.0 ** (2.0 - px) * dn**px
    else:
        s = float(np.linalg.norm(xi) + np.linalg.norm(eta))
        bound = 0.0 if s == 0.0 else (px - 1.0) * dn**2 / s ** (2.0 - px)
    return MonoGap(lhs, bound)
