"""Variable exponent fields p(x) with gradients and global bounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

KINDS = ("constant", "affine", "radial", "tabulated")

# samples per axis for the bound lattice; radial fields use a finer r-lattice
LATTICE_PER_AXIS = 257
RADIAL_LATTICE = 4097


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box, or a ball of given radius centred at the origin."""

    lower: np.ndarray
    upper: np.ndarray
    radius: Optional[float] = None

    @classmethod
    def box(cls, extent) -> "Domain":
        ext = np.atleast_2d(np.asarray(extent, dtype=float))
        if ext.shape[1] != 2:
            raise ValueError("extent must be a sequence of (lo, hi) pairs")
        if np.any(ext[:, 1] <= ext[:, 0]):
            raise ValueError(f"degenerate extent {ext.tolist()}")
        return cls(ext[:, 0].copy(), ext[:, 1].copy())

    @classmethod
    def ball(cls, radius: float = 1.0, dim: int = 2) -> "Domain":
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        return cls(-radius * np.ones(dim), radius * np.ones(dim), float(radius))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, pts: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        inside = np.all((pts >= self.lower - slack) & (pts <= self.upper + slack), axis=1)
        if self.radius is not None:
            inside &= np.linalg.norm(pts, axis=1) <= self.radius + slack
        return inside

    def uniform(self, rng: np.random.Generator, m: int) -> np.ndarray:
        """m uniformly distributed points (rejection sampling for balls)."""
        out = []
        count = 0
        while count < m:
            pts = rng.uniform(self.lower, self.upper, size=(2 * m, self.dim))
            pts = pts[self.contains(pts, slack=0.0)]
            out.append(pts)
            count += len(pts)
        return np.concatenate(out)[:m]

    def lattice_chunks(self, per_axis: int = LATTICE_PER_AXIS):
        """Yield the sampling lattice (endpoints included) slice by slice."""
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        if self.dim == 1:
            chunks = [axes[0][:, None]]
        else:
            rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, self.dim - 1)
            chunks = (np.column_stack([np.full(len(rest), a), rest]) for a in axes[0])
        for pts in chunks:
            if self.radius is not None:
                pts = pts[self.contains(pts, slack=0.0)]
            yield pts
        if self.radius is not None:
            yield self.radius * _sphere_points(self.dim, 4096)


def _sphere_points(dim: int, m: int) -> np.ndarray:
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        t = np.linspace(0.0, 2 * np.pi, m, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    # Fibonacci sphere
    k = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * k / m)
    theta = np.pi * (1 + 5**0.5) * k
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return (points of shape (m, dim), whether the input was a single point)."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and x.ndim <= 1 and x.size != 1:
        # a flat array of 1D coordinates
        return x.reshape(-1, 1), False
    single = x.ndim <= 1
    pts = x.reshape(1, dim) if single else x.reshape(-1, dim)
    return pts, single


@dataclass(frozen=True)
class ExponentField:
    """A C^1 exponent p(x) > 1 with gradient and bounds p_minus <= p <= p_plus.

    Evaluate with ``p(x)`` and ``p.grad(x)``; ``x`` is a single point of shape
    ``(dim,)`` or a stack of points ``(m, dim)``.
    """

    kind: str
    dim: int
    domain: Domain
    p_minus: float
    p_plus: float
    _eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    _grad: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    # the origin, for radial fields whose profile has g'(0) != 0
    singular_point: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, x):
        pts, single = _as_points(x, self.dim)
        val = self._eval(pts)
        return float(val[0]) if single else val

    def grad(self, x):
        pts, single = _as_points(x, self.dim)
        g = self._grad(pts)
        return g[0] if single else g

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def is_regular(self, x) -> bool:
        if self.singular_point is None:
            return True
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.singular_point)) > 1e-14

    def require_regular(self, x) -> None:
        if not self.is_regular(x):
            raise ValueError(
                f"exponent field is not C^1 at {np.asarray(x).tolist()} "
                "(radial profile with nonzero slope at r=0)"
            )

    def conjugate_values(self, x) -> np.ndarray:
        """Pointwise conjugate exponent p/(p-1)."""
        pv = self(x)
        return pv / (pv - 1.0)


def _lattice_bounds(fn, domain: Domain) -> tuple[float, float]:
    lo, hi = np.inf, -np.inf
    for pts in domain.lattice_chunks():
        if len(pts) == 0:
            continue
        v = fn(pts)
        lo = min(lo, float(v.min()))
        hi = max(hi, float(v.max()))
    return lo, hi


def _read_table(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                continue  # header
    if not rows:
        raise ValueError(f"no numeric rows in exponent table {path}")
    return np.asarray(rows)


def make_exponent(
    kind: str,
    domain=None,
    *,
    p0: float = 2.0,
    slope: float = 0.0,
    direction: Optional[Sequence[float]] = None,
    g: Optional[Callable] = None,
    dg: Optional[Callable] = None,
    table=None,
    table_path=None,
    check_points=None,
) -> ExponentField:
    """Build an exponent field and certify its bounds on ``domain``.

    constant:   p = p0
    affine:     p(x) = p0 + slope * direction . x
    radial:     p(x) = g(|x|), default g(r) = p0 + slope * r
    tabulated:  cubic spline through nodal values, rows ``x,p`` (1D) or
                ``x,y,p`` on a tensor grid (2D)

    ``domain`` is a :class:`Domain` or a box extent like ``[(0, 1), (0, 1)]``;
    radial fields default to the unit disk. ``check_points`` (e.g. quadrature
    points) are evaluated as well and widen the bounds if needed.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown exponent kind {kind!r}; expected one of {KINDS}")
    if domain is None:
        domain = Domain.ball(1.0, 2) if kind == "radial" else Domain.box([(0.0, 1.0)])
    elif not isinstance(domain, Domain):
        domain = Domain.box(domain)
    dim = domain.dim
    singular = None
    params: dict = {"kind": kind}

    if kind == "constant":
        c = float(p0)
        params["p0"] = c

        def ev(pts):
            return np.full(len(pts), c)

        def gr(pts):
            return np.zeros((len(pts), dim))

    elif kind == "affine":
        d = np.zeros(dim) if direction is None else np.asarray(direction, dtype=float).reshape(dim)
        if direction is None:
            d[0] = 1.0
        a = float(slope) * d
        base = float(p0)
        params.update(p0=base, slope=float(slope), direction=d.tolist())

        def ev(pts):
            return base + pts @ a

        def gr(pts):
            return np.broadcast_to(a, (len(pts), dim)).copy()

    elif kind == "radial":
        if g is None:
            base, s = float(p0), float(slope)
            g = lambda r: base + s * r  # noqa: E731
            dg = lambda r: s + 0.0 * r  # noqa: E731
            params.update(p0=base, slope=s)
        elif dg is None:
            raise ValueError("radial exponent with custom g needs its derivative dg")
        if abs(float(dg(0.0))) > 0.0:
            singular = np.zeros(dim)

        def ev(pts):
            return np.asarray(g(np.linalg.norm(pts, axis=1)), dtype=float)

        def gr(pts):
            r = np.linalg.norm(pts, axis=1)
            safe = np.where(r > 0, r, 1.0)
            out = (np.asarray(dg(r), dtype=float) / safe)[:, None] * pts
            out[r == 0] = 0.0
            return out

    else:  # tabulated
        if table is None:
            if table_path is None:
                raise ValueError("tabulated exponent needs table or table_path")
            table = _read_table(table_path)
            params["table_path"] = str(table_path)
        table = np.asarray(table, dtype=float)
        if dim == 1:
            order = np.argsort(table[:, 0])
            spline = CubicSpline(table[order, 0], table[order, 1])
            dspline = spline.derivative()

            def ev(pts):
                return spline(pts[:, 0])

            def gr(pts):
                return dspline(pts[:, 0])[:, None]

        elif dim == 2:
            xs = np.unique(table[:, 0])
            ys = np.unique(table[:, 1])
            if len(xs) * len(ys) != len(table):
                raise ValueError("2D exponent table must cover a full tensor grid")
            grid = np.full((len(xs), len(ys)), np.nan)
            grid[np.searchsorted(xs, table[:, 0]), np.searchsorted(ys, table[:, 1])] = table[:, 2]
            spl = RectBivariateSpline(xs, ys, grid, kx=3, ky=3)

            def ev(pts):
                return spl.ev(pts[:, 0], pts[:, 1])

            def gr(pts):
                return np.column_stack([spl.ev(pts[:, 0], pts[:, 1], dx=1), spl.ev(pts[:, 0], pts[:, 1], dy=1)])

        else:
            raise ValueError("tabulated exponents are supported in 1D and 2D only")

    if kind == "constant":
        p_lo = p_hi = c
    elif kind == "affine":
        # linear, so extremes sit at box corners or on the sphere along a
        if domain.radius is not None:
            spread = float(np.linalg.norm(a)) * domain.radius
            p_lo, p_hi = base - spread, base + spread
        else:
            lo_corner = np.where(a >= 0, domain.lower, domain.upper)
            hi_corner = np.where(a >= 0, domain.upper, domain.lower)
            p_lo, p_hi = base + float(lo_corner @ a), base + float(hi_corner @ a)
    elif kind == "radial":
        rmax =domain.radius if domain.radius is not None else float(np.linalg.norm(np.maximum(abs(domain.lower), abs(domain.upper))))
        rs = np.linspace(0.0, rmax, RADIAL_LATTICE)
        vals = np.asarray(g(rs), dtype=float)
        p_lo, p_hi = float(vals.min()), float(vals.max())
    elif kind == "tabulated" and dim == 1:
        lo, hi = domain.lower[0], domain.upper[0]
        crit = [r for r in dspline.roots(extrapolate=False) if lo <= r <= hi]
        cand = np.concatenate([[lo, hi], crit, np.linspace(lo, hi, 16 * LATTICE_PER_AXIS)])
        vals = spline(cand)
        p_lo, p_hi = float(vals.min()), float(vals.max())
    else:
        p_lo, p_hi = _lattice_bounds(ev, domain)

    if check_points is not None:
        pts, _ = _as_points(check_points, dim)
        v = ev(pts)
        if not np.all(np.isfinite(v)):
            raise ValueError("exponent is not finite at a check point")
        p_lo, p_hi = min(p_lo, float(v.min())), max(p_hi, float(v.max()))

    if not np.isfinite(p_lo) or not np.isfinite(p_hi):
        raise ValueError("exponent bounds are not finite")
    if p_lo <= 1.0:
        raise ValueError(f"exponent must exceed 1 everywhere; sampled minimum is {p_lo}")
    return ExponentField(kind, dim, domain, p_lo, p_hi, ev, gr, singular, params)


def constant(p0: float, dim: int = 1) -> ExponentField:
    """Shorthand for a constant exponent on the unit box of the given dimension."""
    return make_exponent("constant", Domain.box([(0.0, 1.0)] * dim), p0=p0)


def exponent_from_config(section: dict, domain: Domain, base_dir: Optional[Path] = None) -> ExponentField:
    """Build a field from an ``[exponent]`` config section."""
    kind = section.get("kind", "constant")
    table_path = section.get("table_path")
    if table_path is not None and base_dir is not None and not Path(table_path).is_absolute():
        table_path = Path(base_dir) / table_path
    return make_exponent(
        kind,
        domain,
        p0=float(section.get("p0", 2.0)),
        slope=float(section.get("slope", 0.0)),
        direction=section.get("direction"),
        table_path=table_path,
    )
