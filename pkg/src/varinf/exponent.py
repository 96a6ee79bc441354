"""Variable exponent p(x) (infinite on D) and its truncations p_k = min(p, k)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .domain import Grid, RegionLabel
from .errors import KTooSmall, ParseError, PMinusTooSmall, PNotFinite, ShapeMismatch

SPATIAL_DIM = 2


@dataclass(frozen=True)
class ConstP:
    value: float

    def __call__(self, x, y):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def gradient(self, x, y):
        return np.zeros((len(x), 2))


@dataclass(frozen=True)
class AffineP:
    """p = a + b*x + c*y."""

    a: float
    b: float
    c: float

    def __call__(self, x, y):
        return self.a + self.b * np.asarray(x, float) + self.c * np.asarray(y, float)

    def gradient(self, x, y):
        return np.tile([self.b, self.c], (len(x), 1)).astype(float)


@dataclass(frozen=True)
class TableP:
    path: str


def parse_p_spec(text: str):
    """Parse ``const <v>``, ``affine <a> <b> <c>`` or ``table <path>``."""
    parts = text.split()
    if not parts:
        raise ParseError("empty exponent spec")
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "const" and len(args) == 1:
            return ConstP(float(args[0]))
        if kind == "affine" and len(args) == 3:
            return AffineP(*map(float, args))
    except ValueError as exc:
        raise ParseError(f"bad number in exponent spec {text!r}: {exc}") from None
    if kind == "table" and len(args) == 1:
        return TableP(args[0])
    raise ParseError(f"unrecognised exponent spec {text!r}; expected "
                     f"'const v', 'affine a b c' or 'table path'")


def read_node_table(path, grid: Grid, column: str) -> np.ndarray:
    """Read a node-ordered CSV with header ``x,y,<column>``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != grid.n_nodes:
        raise ShapeMismatch(f"{path}: {len(rows)} rows for a grid of {grid.n_nodes} nodes")
    if not rows or column not in rows[0]:
        raise ParseError(f"{path}: missing column {column!r}", line=1, column=1)
    xy = np.array([[float(r["x"]), float(r["y"])] for r in rows])
    if not np.allclose(xy, grid.nodes, atol=1e-9 * max(1.0, np.abs(grid.nodes).max())):
        raise ShapeMismatch(f"{path}: node coordinates do not match the grid")
    return np.array([float(r[column]) for r in rows])


@dataclass(frozen=True, eq=False)
class ExponentField:
    grid: Grid
    values: np.ndarray      # per node; +inf on INNER nodes
    grad: np.ndarray        # (n, 2) nodal gradient of the finite branch (nan if unknown)
    p_minus: float
    p_plus: float
    source: object = None

    @property
    def finite_mask(self) -> np.ndarray:
        return self.grid.labels != RegionLabel.INNER

    @cached_property
    def cell_values(self) -> np.ndarray:
        """Exponent at cell centers: mean of the four corner values, +inf in D."""
        vals = np.where(self.grid.cell_in_d, np.inf, 0.0)
        outer = ~self.grid.cell_in_d
        vals[outer] = self.values[self.grid.cells[outer]].mean(axis=1)
        return vals


@dataclass(frozen=True, eq=False)
class TruncatedExponent:
    k: float
    values: np.ndarray      # per node p_k
    cell_values: np.ndarray  # per cell p_k at the quadrature point
    base: ExponentField

    @property
    def grid(self) -> Grid:
        return self.base.grid


def validate(p_spec, grid: Grid, lower_bound: float = SPATIAL_DIM,
             base_dir: str | Path | None = None) -> ExponentField:
    """Evaluate ``p_spec`` on the finite-exponent nodes and check p_- > lower_bound.

    ``p_spec`` may be a spec string, a ConstP/AffineP/TableP, a number, a callable
    ``p(x, y)`` or a per-node array. ``lower_bound`` defaults to the dimension
    N = 2; oracle tests for the linear case lower it to admit p = 2.
    """
    if isinstance(p_spec, str):
        p_spec = parse_p_spec(p_spec)
    if isinstance(p_spec, (int, float)):
        p_spec = ConstP(float(p_spec))

    x, y = grid.nodes[:, 0], grid.nodes[:, 1]
    grad = None
    if isinstance(p_spec, TableP):
        path = Path(p_spec.path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        vals = read_node_table(path, grid, "p")
    elif isinstance(p_spec, np.ndarray):
        if p_spec.shape != (grid.n_nodes,):
            raise ShapeMismatch(f"exponent table has shape {p_spec.shape}, "
                                f"expected ({grid.n_nodes},)")
        vals = p_spec.astype(float)
    elif callable(p_spec):
        vals = np.asarray(p_spec(x, y), dtype=float) * np.ones(grid.n_nodes)
        if hasattr(p_spec, "gradient"):
            grad = p_spec.gradient(x, y)
    else:
        raise TypeError(f"cannot interpret exponent spec {p_spec!r}")

    finite = grid.labels != RegionLabel.INNER
    vals = vals.copy()
    if not np.all(np.isfinite(vals[finite])):
        bad = np.flatnonzero(finite & ~np.isfinite(vals))[0]
        raise PNotFinite(f"p is not finite at node {bad} {tuple(grid.nodes[bad])} "
                         f"outside D")
    vals[~finite] = np.inf
    p_minus = float(vals[finite].min())
    p_plus = float(vals[finite].max())
    if p_minus <= lower_bound:
        raise PMinusTooSmall(f"p_- = {p_minus:g} must exceed N = {lower_bound:g}")
    if grad is None:
        grad = _central_gradient(grid, vals)
    return ExponentField(grid, vals, grad, p_minus, p_plus, source=p_spec)


def _central_gradient(grid: Grid, vals: np.ndarray) -> np.ndarray:
    P = np.where(np.isfinite(vals), vals, np.nan).reshape(grid.shape)
    gx, gy = np.gradient(P, grid.x, grid.y, edge_order=2)
    return np.column_stack([gx.ravel(), gy.ravel()])


def truncate(p: ExponentField, k: float) -> TruncatedExponent:
    """p_k = min(p, k); requires k > p_+ so p_k is k exactly on D."""
    k = float(k)
    if not k > p.p_plus:
        raise KTooSmall(f"truncation level k = {k:g} must exceed p_+ = {p.p_plus:g}")
    return TruncatedExponent(k, np.minimum(p.values, k), np.minimum(p.cell_values, k), p)


def conjugate(p_value):
    """Hölder conjugate q = p / (p - 1)."""
    p_value = np.asarray(p_value, dtype=float)
    if np.any(p_value <= 1):
        raise ValueError("conjugate exponent needs p > 1")
    q = p_value / (p_value - 1.0)
    return float(q) if q.ndim == 0 else q
