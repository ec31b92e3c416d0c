"""Simplicial meshes of intervals and rectangles with P1 element data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(eq=False)
class Mesh:
    """Conforming simplicial mesh.

    ``basis_grads[e, k]`` is the (constant) gradient of the hat function of the
    k-th vertex of element ``e``.
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    element_measures: np.ndarray = field(init=False)
    basis_grads: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(len(self.nodes), self.dimension)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.boundary_nodes = np.unique(np.asarray(self.boundary_nodes, dtype=np.int64))
        if self.elements.shape[1] != self.dimension + 1:
            raise ValueError("elements must have dimension+1 vertices")
        if self.elements.min() < 0 or self.elements.max() >= len(self.nodes):
            raise ValueError("element node index out of range")
        # Jacobians of the affine maps from the reference simplex
        verts = self.nodes[self.elements]  # (E, d+1, d)
        jac = (verts[:, 1:, :] - verts[:, :1, :]).transpose(0, 2, 1)  # (E, d, d)
        det = np.linalg.det(jac)
        if np.any(det <= 0):
            bad = int(np.argmin(det))
            raise ValueError(f"element {bad} has nonpositive orientation/measure")
        fact = 1.0 if self.dimension == 1 else 0.5 if self.dimension == 2 else 1.0 / 6.0
        self.element_measures = fact * det
        # gradients of barycentric coordinates: rows of inv(jac) for vertices 1..d
        inv = np.linalg.inv(jac)  # (E, d, d), row k-1 is grad lambda_k
        grads = np.empty((len(self.elements), self.dimension + 1, self.dimension))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        self.basis_grads = grads

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @property
    def volume(self) -> float:
        return float(self.element_measures.sum())

    @cached_property
    def diameter(self) -> float:
        lo, hi = self.nodes.min(axis=0), self.nodes.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    @cached_property
    def h(self) -> float:
        """Largest element edge length."""
        verts = self.nodes[self.elements]
        d = self.dimension + 1
        longest = 0.0
        for a in range(d):
            for b in range(a + 1, d):
                longest = max(longest, float(np.linalg.norm(verts[:, a] - verts[:, b], axis=1).max()))
        return longest

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Integral of each hat function."""
        share = np.repeat(self.element_measures / (self.dimension + 1), self.dimension + 1)
        return np.bincount(self.elements.ravel(), weights=share, minlength=self.n_nodes)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Node-to-node adjacency of the mesh graph (without self loops)."""
        k = self.dimension + 1
        rows = np.repeat(self.elements, k, axis=1).ravel()
        cols = np.tile(self.elements, (1, k)).ravel()
        keep = rows != cols
        a = sp.coo_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(self.n_nodes,) * 2)
        a = a.tocsr()
        a.data[:] = 1.0
        return a

    @cached_property
    def node_elements(self) -> list[np.ndarray]:
        """For each node, the indices of the elements containing it (its star)."""
        flat = self.elements.ravel()
        owner = np.repeat(np.arange(self.n_elements), self.dimension + 1)
        order = np.argsort(flat, kind="stable")
        splits = np.cumsum(np.bincount(flat, minlength=self.n_nodes))[:-1]
        return np.split(owner[order], splits)

    def interpolate(self, fn) -> np.ndarray:
        """Nodal values of ``fn`` (called with the (N, d) node array)."""
        return np.asarray(fn(self.nodes), dtype=float).reshape(self.n_nodes)

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """Elementwise gradients of the P1 interpolant, shape (E, d)."""
        values = np.asarray(values, dtype=float)
        return np.einsum("ek,ekd->ed", values[self.elements], self.basis_grads)

    def write_csv(self, node_path, element_path) -> None:
        with open(node_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "x"] + (["y"] if self.dimension == 2 else []))
            for i, xy in enumerate(self.nodes):
                w.writerow([i] + [repr(float(c)) for c in xy])
        with open(element_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element_id"] + [f"n{k}" for k in range(self.dimension + 1)])
            for e, nodes in enumerate(self.elements):
                w.writerow([e] + [int(n) for n in nodes])


def make_mesh(dimension: int, extent, resolution) -> Mesh:
    """Uniform mesh of an interval or rectangle.

    ``resolution`` is the number of nodes per axis (an int, or a pair in 2D).
    In 2D every grid cell is cut into two right triangles along the diagonal
    from its lower-left to its upper-right corner.
    """
    ext = np.atleast_2d(np.asarray(extent, dtype=float))
    if ext.shape != (dimension, 2):
        raise ValueError(f"extent must hold {dimension} (lo, hi) pairs")
    if np.any(ext[:, 1] - ext[:, 0] <= 0):
        raise ValueError(f"degenerate extent {ext.tolist()}")
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dimension,))
    if np.any(res < 2):
        raise ValueError("resolution must be at least 2 nodes per axis")

    if dimension == 1:
        n = int(res[0])
        nodes = np.linspace(ext[0, 0], ext[0, 1], n)[:, None]
        elements = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        return Mesh(1, nodes, elements, [0, n - 1])

    if dimension == 2:
        nx, ny = int(res[0]), int(res[1])
        xs = np.linspace(ext[0, 0], ext[0, 1], nx)
        ys = np.linspace(ext[1, 0], ext[1, 1], ny)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        idx = np.arange(nx * ny).reshape(nx, ny)
        a = idx[:-1, :-1].ravel()
        b = idx[1:, :-1].ravel()
        c = idx[1:, 1:].ravel()
        d = idx[:-1, 1:].ravel()
        # counter-clockwise triangles (a, b, c) and (a, c, d), interleaved per cell
        elements = np.stack([np.column_stack([a, b, c]), np.column_stack([a, c, d])], axis=1).reshape(-1, 3)
        bmask = np.zeros((nx, ny), dtype=bool)
        bmask[0, :] = bmask[-1, :] = bmask[:, 0] = bmask[:, -1] = True
        return Mesh(2, nodes, elements, idx[bmask])

    raise ValueError("only 1D and 2D meshes are supported")


def radial_mesh(a: float, b: float, n_elements: int) -> Mesh:
    """Uniform 1D mesh of the radial interval (a, b)."""
    if not 0 <= a < b:
        raise ValueError(f"need 0 <= a < b, got ({a}, {b})")
    return make_mesh(1, [(a, b)], n_elements + 1)


def element_gradient(u, element: int) -> np.ndarray:
    """Constant gradient of the P1 interpolant of ``u`` on one element."""
    mesh = u.mesh
    e = int(element)
    return u.values[mesh.elements[e]] @ mesh.basis_grads[e]
