"""Rectangular geometry for Omega and the subdomain D, plus the discrete calculus
(gradients, one-sided normal derivatives, quadrature) every other module uses.

Nodes are numbered ``i * ny + j`` where ``i`` indexes x and ``j`` indexes y, so a
nodal vector reshapes to an ``(nx, ny)`` array with ``u.reshape(grid.shape)``.
Cells are numbered the same way over the ``(nx - 1, ny - 1)`` lower-left corners.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (DomainError, DRectOffGrid, DRectTouchesBoundary,
                     NotBoundaryNode, StencilOutOfDomain)

SNAP_TOL = 1e-9


class RegionLabel(IntEnum):
    OUTER_BULK = 0       # Omega minus closure(D), away from dOmega
    INNER = 1            # open D
    INTERFACE = 2        # dD
    OUTER_BOUNDARY = 3   # dOmega


@dataclass(frozen=True)
class DomainSpec:
    """Omega = [ax, bx] x [ay, by]; D likewise (or None for no subdomain)."""

    omega_rect: tuple[float, float, float, float]
    d_rect: tuple[float, float, float, float] | None
    resolution: tuple[int, int]

    def __post_init__(self):
        ax, bx, ay, by = self.omega_rect
        if not (bx > ax and by > ay):
            raise DomainError(f"degenerate omega_rect {self.omega_rect}")
        nx, ny = self.resolution
        if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
            raise DomainError(f"resolution must be integers >= 2, got {self.resolution}")
        if self.d_rect is not None:
            cx0, cx1, cy0, cy1 = self.d_rect
            if not (cx1 > cx0 and cy1 > cy0):
                raise DomainError(f"degenerate d_rect {self.d_rect}")

    def refined(self, factor: int = 2) -> "DomainSpec":
        nx, ny = self.resolution
        return DomainSpec(self.omega_rect, self.d_rect,
                          ((nx - 1) * factor + 1, (ny - 1) * factor + 1))


@dataclass(frozen=True)
class NormalSet:
    node: int
    normals: tuple[tuple[float, float], ...]


@dataclass(frozen=True, eq=False)
class Grid:
    spec: DomainSpec
    x: np.ndarray
    y: np.ndarray
    h: tuple[float, float]
    nodes: np.ndarray            # (n, 2) coordinates
    labels: np.ndarray           # (n,) RegionLabel values
    cells: np.ndarray            # (ncells, 4) node ids: ll, lr, ul, ur
    cell_weight: float
    cell_in_d: np.ndarray        # (ncells,) cell lies inside closure(D)
    bnd_nodes: np.ndarray        # (m,) one entry per (dOmega node, incident edge)
    bnd_normals: np.ndarray      # (m, 2)
    bnd_weights: np.ndarray      # (m,) trapezoidal weights
    d_index: tuple[int, int, int, int] | None = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.x), len(self.y))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def area(self) -> float:
        return self.cell_weight * self.n_cells

    @property
    def d_area(self) -> float:
        return self.cell_weight * int(self.cell_in_d.sum())

    @property
    def perimeter(self) -> float:
        return float(self.bnd_weights.sum())

    @property
    def hmax(self) -> float:
        return max(self.h)

    def node_id(self, i: int, j: int) -> int:
        return i * len(self.y) + j

    def node_ij(self, node: int) -> tuple[int, int]:
        return divmod(int(node), len(self.y))

    def as_2d(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).reshape(self.shape)

    def field(self, fn) -> np.ndarray:
        """Evaluate ``fn(x, y)`` at every node."""
        return np.asarray(fn(self.nodes[:, 0], self.nodes[:, 1]), dtype=float) \
            * np.ones(self.n_nodes)

    @cached_property
    def node_mass(self) -> np.ndarray:
        """Nodal weights of the cell-center rule (equal to the trapezoidal rule)."""
        m = np.zeros(self.n_nodes)
        for c in range(4):
            m += np.bincount(self.cells[:, c], minlength=self.n_nodes)
        return m * (self.cell_weight / 4.0)

    @cached_property
    def boundary_node_weights(self) -> np.ndarray:
        return np.bincount(self.bnd_nodes, weights=self.bnd_weights,
                           minlength=self.n_nodes)

    def integrate(self, u: np.ndarray) -> float:
        return float(self.node_mass @ u)

    def mean(self, u: np.ndarray) -> float:
        return self.integrate(u) / self.area

    def mask(self, *labels: RegionLabel) -> np.ndarray:
        return np.isin(self.labels, [int(lab) for lab in labels])

    @cached_property
    def corner_operators(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Sparse maps from nodal values to the four corner gradients of every cell.

        Row block ``c`` (of 4) holds the one-sided gradient at corner ``c`` of each
        cell, in the order ll, lr, ul, ur.
        """
        hx, hy = self.h
        ll, lr, ul, ur = self.cells.T
        nc, n = self.n_cells, self.n_nodes
        rows = np.arange(nc)

        def diff(a, b, step):
            return sp.csr_matrix(
                (np.concatenate([np.full(nc, 1.0 / step), np.full(nc, -1.0 / step)]),
                 (np.concatenate([rows, rows]), np.concatenate([a, b]))),
                shape=(nc, n))

        dx_bottom, dx_top = diff(lr, ll, hx), diff(ur, ul, hx)
        dy_left, dy_right = diff(ul, ll, hy), diff(ur, lr, hy)
        bx = sp.vstack([dx_bottom, dx_bottom, dx_top, dx_top]).tocsr()
        by = sp.vstack([dy_left, dy_right, dy_left, dy_right]).tocsr()
        return bx, by


def _snap(value: float, origin: float, step: float) -> int:
    t = (value - origin) / step
    k = int(round(t))
    if abs(t - k) > SNAP_TOL * max(1.0, abs(t)):
        raise DRectOffGrid(f"D corner coordinate {value} is not a grid node "
                           f"(offset {t:.6g} cells)")
    return k


def _spacing(spec: DomainSpec) -> tuple[float, float]:
    ax, bx, ay, by = spec.omega_rect
    nx, ny = spec.resolution
    return (bx - ax) / (nx - 1), (by - ay) / (ny - 1)


def _d_index(spec: DomainSpec) -> tuple[int, int, int, int] | None:
    if spec.d_rect is None:
        return None
    ax, _, ay, _ = spec.omega_rect
    nx, ny = spec.resolution
    cx0, cx1, cy0, cy1 = spec.d_rect
    hx, hy = _spacing(spec)
    # touching is checked on raw coordinates first so it wins over off-grid
    bx, by = spec.omega_rect[1], spec.omega_rect[3]
    if cx0 < ax + hx * (1 - SNAP_TOL) or cx1 > bx - hx * (1 - SNAP_TOL) \
            or cy0 < ay + hy * (1 - SNAP_TOL) or cy1 > by - hy * (1 - SNAP_TOL):
        raise DRectTouchesBoundary(
            f"d_rect {spec.d_rect} must lie inside omega_rect {spec.omega_rect} "
            f"with at least one grid cell of clearance")
    idx = (_snap(cx0, ax, hx), _snap(cx1, ax, hx), _snap(cy0, ay, hy), _snap(cy1, ay, hy))
    i0, i1, j0, j1 = idx
    if i0 < 1 or j0 < 1 or i1 > nx - 2 or j1 > ny - 2:
        raise DRectTouchesBoundary(f"d_rect {spec.d_rect} touches the boundary of Omega")
    return idx


def classify_nodes(grid: Grid | None, spec: DomainSpec | None = None) -> np.ndarray:
    """Label every node OUTER_BULK, INNER, INTERFACE or OUTER_BOUNDARY."""
    spec = spec or grid.spec
    nx, ny = spec.resolution
    idx = _d_index(spec)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    labels = np.full((nx, ny), RegionLabel.OUTER_BULK, dtype=np.int8)
    if idx is not None:
        i0, i1, j0, j1 = idx
        in_closure = (i >= i0) & (i <= i1) & (j >= j0) & (j <= j1)
        strict = (i > i0) & (i < i1) & (j > j0) & (j < j1)
        labels[in_closure] = RegionLabel.INTERFACE
        labels[strict] = RegionLabel.INNER
    on_edge = (i == 0) | (i == nx - 1) | (j == 0) | (j == ny - 1)
    labels[on_edge] = RegionLabel.OUTER_BOUNDARY
    return labels.ravel()


def build_grid(spec: DomainSpec) -> Grid:
    ax, bx, ay, by = spec.omega_rect
    nx, ny = spec.resolution
    x = np.linspace(ax, bx, nx)
    y = np.linspace(ay, by, ny)
    hx, hy = _spacing(spec)
    d_index = _d_index(spec)

    X, Y = np.meshgrid(x, y, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    labels = classify_nodes(None, spec)

    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ci, cj = ci.ravel(), cj.ravel()
    ll = ci * ny + cj
    cells = np.column_stack([ll, ll + ny, ll + 1, ll + ny + 1])
    if d_index is None:
        cell_in_d = np.zeros(len(cells), dtype=bool)
    else:
        i0, i1, j0, j1 = d_index
        cell_in_d = (ci >= i0) & (ci < i1) & (cj >= j0) & (cj < j1)

    # dOmega entries, counterclockwise: bottom, right, top, left
    b_nodes, b_normals, b_weights = [], [], []

    def edge(ids, normal, step):
        w = np.full(len(ids), step)
        w[0] = w[-1] = step / 2.0
        b_nodes.append(ids)
        b_normals.append(np.tile(normal, (len(ids), 1)))
        b_weights.append(w)

    ii, jj = np.arange(nx), np.arange(ny)
    edge(ii * ny, (0.0, -1.0), hx)
    edge((nx - 1) * ny + jj, (1.0, 0.0), hy)
    edge(ii * ny + (ny - 1), (0.0, 1.0), hx)
    edge(jj, (-1.0, 0.0), hy)

    grid = Grid(spec=spec, x=x, y=y, h=(hx, hy), nodes=nodes, labels=labels,
                cells=cells, cell_weight=hx * hy, cell_in_d=cell_in_d,
                bnd_nodes=np.concatenate(b_nodes),
                bnd_normals=np.concatenate(b_normals).astype(float),
                bnd_weights=np.concatenate(b_weights), d_index=d_index)
    for arr in (grid.x, grid.y, grid.nodes, grid.labels, grid.cells, grid.cell_in_d,
                grid.bnd_nodes, grid.bnd_normals, grid.bnd_weights):
        arr.setflags(write=False)
    return grid


def normal_set(grid: Grid, node: int) -> NormalSet:
    """Outward unit normals at a boundary node: from Omega on dOmega, from D on dD."""
    label = grid.labels[node]
    i, j = grid.node_ij(node)
    nx, ny = grid.shape
    if label == RegionLabel.OUTER_BOUNDARY:
        lo_hi = (0, nx - 1, 0, ny - 1)
    elif label == RegionLabel.INTERFACE:
        lo_hi = grid.d_index
    else:
        raise NotBoundaryNode(f"node {node} at {tuple(grid.nodes[node])} is "
                              f"{RegionLabel(label).name}")
    i0, i1, j0, j1 = lo_hi
    normals = []
    if i == i0:
        normals.append((-1.0, 0.0))
    if i == i1:
        normals.append((1.0, 0.0))
    if j == j0:
        normals.append((0.0, -1.0))
    if j == j1:
        normals.append((0.0, 1.0))
    return NormalSet(int(node), tuple(normals))


def cell_gradients(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Gradient of the bilinear interpolant at every cell center, shape (ncells, 2)."""
    U = grid.as_2d(u)
    hx, hy = grid.h
    gx = (U[1:, :-1] - U[:-1, :-1] + U[1:, 1:] - U[:-1, 1:]) / (2 * hx)
    gy = (U[:-1, 1:] - U[:-1, :-1] + U[1:, 1:] - U[1:, :-1]) / (2 * hy)
    return np.column_stack([gx.ravel(), gy.ravel()])


def cell_gradient(grid: Grid, u: np.ndarray, cell: int) -> np.ndarray:
    ll, lr, ul, ur = (u[n] for n in grid.cells[cell])
    hx, hy = grid.h
    return np.array([(lr - ll + ur - ul) / (2 * hx), (ul - ll + ur - lr) / (2 * hy)])


def corner_gradients(grid: Grid, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """x and y components of the one-sided gradients at all 4*ncells cell corners."""
    bx, by = grid.corner_operators
    return bx @ u, by @ u


def _inward_box(grid: Grid, node: int):
    label = grid.labels[node]
    if label == RegionLabel.OUTER_BOUNDARY:
        nx, ny = grid.shape
        return (0, nx - 1, 0, ny - 1)
    if label == RegionLabel.INTERFACE:
        return grid.d_index
    raise NotBoundaryNode(f"node {node} is {RegionLabel(label).name}")


def _one_sided(U, i, j, axis, sign, h, box, allow_first_order):
    """Partial derivative along ``axis`` from nodes stepping away from the ``sign`` side.

    Returns (value, order); the stencil never leaves ``box``.
    """
    di, dj = (-sign, 0) if axis == 0 else (0, -sign)
    i0, i1, j0, j1 = box

    def inside(a, b):
        return i0 <= a <= i1 and j0 <= b <= j1

    if inside(i + 2 * di, j + 2 * dj):
        u0, u1, u2 = U[i, j], U[i + di, j + dj], U[i + 2 * di, j + 2 * dj]
        return sign * (3 * u0 - 4 * u1 + u2) / (2 * h), 2
    if not allow_first_order or not inside(i + di, j + dj):
        raise StencilOutOfDomain(f"no inward 3-node stencil at ({i}, {j})")
    return sign * (U[i, j] - U[i + di, j + dj]) / h, 1


def _axis_sign(nu) -> tuple[int, int]:
    nu = np.asarray(nu, dtype=float)
    axis = int(np.argmax(np.abs(nu)))
    if abs(abs(nu[axis]) - 1.0) > 1e-12 or abs(nu[1 - axis]) > 1e-12:
        raise DomainError(f"normal {tuple(nu)} is not axis aligned")
    return axis, int(np.sign(nu[axis]))


def normal_derivative(grid: Grid, u: np.ndarray, node: int, nu,
                      allow_first_order: bool = False) -> float:
    """Outward derivative du/dnu at a dOmega or dD node from a 3-node inward stencil.

    For dD nodes the stencil steps into D. With ``allow_first_order`` a two-node
    difference is used when the 3-node stencil does not fit; otherwise that case
    raises StencilOutOfDomain.
    """
    nset = normal_set(grid, node)
    if not any(np.allclose(nu, n) for n in nset.normals):
        raise DomainError(f"{tuple(nu)} is not in N(x) = {nset.normals} at node {node}")
    value, _ = normal_derivative_with_order(grid, u, node, nu, allow_first_order)
    return value


def normal_derivative_with_order(grid, u, node, nu, allow_first_order=True):
    axis, sign = _axis_sign(nu)
    i, j = grid.node_ij(node)
    value, order = _one_sided(grid.as_2d(u), i, j, axis, sign, grid.h[axis],
                              _inward_box(grid, node), allow_first_order)
    return sign * value, order


def boundary_gradient(grid: Grid, u: np.ndarray, node: int) -> tuple[np.ndarray, int]:
    """Full gradient at a boundary node, evaluated from the owning region's side.

    Axes carrying a normal use the one-sided stencil; the tangential axis of a face
    node uses a central difference along the face. Returns (gradient, min order).
    """
    nset = normal_set(grid, node)
    U = grid.as_2d(u)
    i, j = grid.node_ij(node)
    box = _inward_box(grid, node)
    grad = np.zeros(2)
    order = 2
    covered = set()
    for nu in nset.normals:
        axis, sign = _axis_sign(nu)
        grad[axis], o = _one_sided(U, i, j, axis, sign, grid.h[axis], box, True)
        order = min(order, o)
        covered.add(axis)
    for axis in {0, 1} - covered:
        if axis == 0:
            grad[0] = (U[i + 1, j] - U[i - 1, j]) / (2 * grid.h[0])
        else:
            grad[1] = (U[i, j + 1] - U[i, j - 1]) / (2 * grid.h[1])
    return grad, order
