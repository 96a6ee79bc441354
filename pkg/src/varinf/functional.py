"""Variable-exponent modular and Luxemburg norm, the discrete energies I_k and
I_inf, their derivatives, and the Neumann data g on dOmega.

Quadrature conventions
----------------------
* Volume terms: every cell contributes its four corner one-sided gradients, each
  with weight ``cell_weight / 4``, paired with the exponent at the cell center.
* Boundary terms: ``g`` is stored per dOmega *entry* (one per node and incident
  edge, so rectangle corners carry two values) with trapezoidal weights.
  ``Grid.bnd_nodes`` maps entries to nodes.

All sums go through ``math.fsum`` so results do not depend on summation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .domain import Grid, corner_gradients
from .errors import BracketFailure, ModularOverflow, ParseError
from .exponent import ExponentField, TruncatedExponent, read_node_table

LOG_CAP = 700.0


def _fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel())


def power(t, p, check=True):
    """|t|**p via exp(p*log|t|) with 0**p = 0 for p > 0 and 0**0 = 1."""
    t, p = np.broadcast_arrays(np.abs(np.asarray(t, dtype=float)), np.asarray(p, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = p * np.log(t)
    arg = np.where(t == 0, np.where(p == 0, 0.0, -np.inf), arg)
    if check and np.any(arg > LOG_CAP):
        idx = int(np.argmax(arg))
        raise ModularOverflow(f"|t|^p overflows: t = {t.flat[idx]:.6g}, "
                              f"p = {p.flat[idx]:.6g}", point=idx)
    return np.exp(arg)


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    boundary: float
    total: float


# -- modular and norm -------------------------------------------------------

def modular(f, exps, weights) -> float:
    """Quadrature value of the integral of |f|^p(x)."""
    return _fsum(np.asarray(weights) * power(f, exps))


def luxemburg_norm(f, exps, weights) -> float:
    """inf{lam > 0 : modular(f / lam) <= 1}, found by root bracketing in log(lam)."""
    f = np.abs(np.asarray(f, dtype=float))
    if not np.any(f > 0):
        return 0.0

    def excess(log_lam):
        try:
            return modular(f / math.exp(log_lam), exps, weights) - 1.0
        except ModularOverflow:
            return math.inf

    lo = hi = math.log(f.max())
    for _ in range(200):
        if excess(hi) <= 0:
            break
        hi += math.log(2.0)
    else:
        raise BracketFailure("no upper bracket for the Luxemburg norm")
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo -= math.log(2.0)
    else:
        raise BracketFailure("no lower bracket for the Luxemburg norm")
    if excess(hi) == 0:
        return math.exp(hi)
    return math.exp(brentq(excess, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=500))


# -- boundary data ----------------------------------------------------------

def parse_g_spec(text: str):
    """``const v``, ``affine a b c`` (a + b x + c y), ``flux ax ay`` or ``table path``.

    ``flux ax ay`` is the exact Neumann datum of the affine field ax*x + ay*y,
    namely |a|^(p-2) a.nu, evaluated separately for each edge at corners.
    """
    parts = text.split()
    if not parts:
        raise ParseError("empty g spec")
    kind, args = parts[0].lower(), parts[1:]
    arity = {"const": 1, "affine": 3, "flux": 2, "table": 1}
    if kind not in arity or len(args) != arity[kind]:
        raise ParseError(f"unrecognised g spec {text!r}; expected 'const v', "
                         f"'affine a b c', 'flux ax ay' or 'table path'")
    if kind == "table":
        return ("table", args[0])
    try:
        return (kind, tuple(float(a) for a in args))
    except ValueError as exc:
        raise ParseError(f"bad number in g spec {text!r}: {exc}") from None


def boundary_trace(grid: Grid, g_spec, p: ExponentField | None = None,
                   base_dir=None) -> np.ndarray:
    """Values of g for every dOmega entry of ``grid``."""
    if isinstance(g_spec, str):
        g_spec = parse_g_spec(g_spec)
    nodes = grid.bnd_nodes
    x, y = grid.nodes[nodes, 0], grid.nodes[nodes, 1]
    if isinstance(g_spec, np.ndarray):
        if g_spec.shape == (len(nodes),):
            return g_spec.astype(float)
        if g_spec.shape == (grid.n_nodes,):
            return g_spec[nodes].astype(float)
        raise ParseError(f"g array of shape {g_spec.shape} fits neither entries nor nodes")
    if callable(g_spec):
        return np.asarray(g_spec(x, y), dtype=float) * np.ones(len(nodes))
    kind, args = g_spec
    if kind == "const":
        return np.full(len(nodes), args[0])
    if kind == "affine":
        a, b, c = args
        return a + b * x + c * y
    if kind == "flux":
        if p is None:
            raise ValueError("'flux' g needs the exponent field")
        avec = np.array(args)
        pe = p.values[nodes]
        return power(np.linalg.norm(avec), pe - 2) * (grid.bnd_normals @ avec)
    if kind == "table":
        path = Path(args)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return read_node_table(path, grid, "g")[nodes]
    raise ParseError(f"unknown g spec kind {kind!r}")


def compatibility(grid: Grid, g: np.ndarray) -> float:
    """Boundary quadrature of g; zero is necessary for solvability."""
    return _fsum(grid.bnd_weights * g)


def compatibility_ok(grid: Grid, g: np.ndarray, tol: float | None = None) -> bool:
    if tol is None:
        tol = 1e-10 * grid.perimeter
    gmax = float(np.abs(g).max()) if len(g) else 0.0
    return abs(compatibility(grid, g)) <= tol * (1.0 + gmax)


# -- energies ---------------------------------------------------------------

def _corner_data(grid: Grid, u: np.ndarray, cell_exps: np.ndarray):
    gx, gy = corner_gradients(grid, u)
    return gx, gy, np.hypot(gx, gy), np.tile(cell_exps, 4)


def _boundary_term(grid, g, u) -> float:
    return _fsum(grid.bnd_weights * g * u[grid.bnd_nodes])


def energy_Ik(grid: Grid, u: np.ndarray, pk: TruncatedExponent, g: np.ndarray) -> EnergyBreakdown:
    _, _, mag, pe = _corner_data(grid, u, pk.cell_values)
    bulk = _fsum((grid.cell_weight / 4.0) * power(mag, pe) / pe)
    boundary = _boundary_term(grid, g, u)
    return EnergyBreakdown(bulk, boundary, bulk - boundary)


def energy_Iinf(grid: Grid, u: np.ndarray, p: ExponentField, g: np.ndarray) -> EnergyBreakdown:
    """I_inf: the bulk integral skips cells inside closure(D)."""
    _, _, mag, pe = _corner_data(grid, u, p.cell_values)
    outer = np.tile(~grid.cell_in_d, 4)
    bulk = _fsum((grid.cell_weight / 4.0) * power(mag[outer], pe[outer]) / pe[outer])
    boundary = _boundary_term(grid, g, u)
    return EnergyBreakdown(bulk, boundary, bulk - boundary)


def modular_bulk(grid: Grid, u: np.ndarray, pk: TruncatedExponent, cells=None) -> float:
    """Integral of |grad u|^{p_k}, optionally restricted to a boolean cell mask."""
    _, _, mag, pe = _corner_data(grid, u, pk.cell_values)
    w = np.full(mag.shape, grid.cell_weight / 4.0)
    if cells is not None:
        w = w * np.tile(cells, 4)
    return _fsum(w * power(mag, pe))


def _flux_coefficient(mag, pe):
    # |G|^(p-2); zero at G = 0 when p > 2
    return power(mag, pe - 2.0)


def energy_gradient(grid: Grid, u: np.ndarray, pk: TruncatedExponent, g: np.ndarray) -> np.ndarray:
    bx, by = grid.corner_operators
    gx, gy, mag, pe = _corner_data(grid, u, pk.cell_values)
    a = (grid.cell_weight / 4.0) * _flux_coefficient(mag, pe)
    bulk = bx.T @ (a * gx) + by.T @ (a * gy)
    load = np.bincount(grid.bnd_nodes, weights=grid.bnd_weights * g, minlength=grid.n_nodes)
    return bulk - load


def energy_hessian(grid: Grid, u: np.ndarray, pk: TruncatedExponent) -> sp.csr_matrix:
    """Hessian of the bulk part of I_k (the boundary part is linear)."""
    bx, by = grid.corner_operators
    gx, gy, mag, pe = _corner_data(grid, u, pk.cell_values)
    w = grid.cell_weight / 4.0
    a = _flux_coefficient(mag, pe)
    with np.errstate(invalid="ignore", divide="ignore"):
        nx_, ny_ = np.where(mag > 0, gx / mag, 0.0), np.where(mag > 0, gy / mag, 0.0)
    b = (pe - 2.0) * a
    m11 = w * (a + b * nx_ * nx_)
    m22 = w * (a + b * ny_ * ny_)
    m12 = w * (b * nx_ * ny_)
    D = sp.diags
    H = bx.T @ D(m11) @ bx + by.T @ D(m22) @ by + bx.T @ D(m12) @ by + by.T @ D(m12) @ bx
    return H.tocsr()


def stiffness(grid: Grid) -> sp.csr_matrix:
    """Hessian of the p = 2 energy, i.e. the 5-point Laplacian stiffness matrix."""
    bx, by = grid.corner_operators
    w = grid.cell_weight / 4.0
    return (w * (bx.T @ bx + by.T @ by)).tocsr()


def energy_change(grid: Grid, u: np.ndarray, du: np.ndarray, pk: TruncatedExponent,
                  g: np.ndarray) -> float:
    """I_k(u + du) - I_k(u) computed without cancellation.

    Each corner term uses |G'|^p - |G|^p = |G|^p expm1((p/2) log1p(r)) with
    r = (2 G.dG + |dG|^2) / |G|^2, so line searches stay meaningful after the
    energy itself has converged to working precision.
    """
    gx, gy, mag, pe = _corner_data(grid, u, pk.cell_values)
    bx, by = grid.corner_operators
    dx, dy = bx @ du, by @ du
    nmag = np.hypot(gx + dx, gy + dy)
    power(nmag, pe)  # overflow guard on the trial point
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = (2 * (gx * dx + gy * dy) + dx * dx + dy * dy) / (mag * mag)
        diff = power(mag, pe) * np.expm1(0.5 * pe * np.log1p(np.maximum(r, -1.0)))
    # no cancellation to avoid when the corner gradient changes by a large factor
    direct = (mag == 0) | ~(np.abs(r) < 1.0)
    diff[direct] = power(nmag[direct], pe[direct]) - power(mag[direct], pe[direct])
    bulk = _fsum((grid.cell_weight / 4.0) * diff / pe)
    return bulk - _boundary_term(grid, g, du)


def weak_residual(grid: Grid, u: np.ndarray, pk: TruncatedExponent, g: np.ndarray,
                  v: np.ndarray) -> float:
    """LHS - RHS of the weak form tested against v."""
    gx, gy, mag, pe = _corner_data(grid, u, pk.cell_values)
    vx, vy = corner_gradients(grid, v)
    a = _flux_coefficient(mag, pe)
    lhs = _fsum((grid.cell_weight / 4.0) * a * (gx * vx + gy * vy))
    return lhs - _boundary_term(grid, g, v)
