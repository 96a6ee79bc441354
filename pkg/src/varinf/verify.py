"""Certification of a computed field against the limit problem.

Checks membership in S, infinity-harmonicity inside D, the p(x)-Laplace equation
outside D, the flux condition on dOmega, the sign condition on dD, the uniform
estimates along a continuation run, and minimality of I_inf by random audit.
Viscosity-sense conditions are checked through pointwise residuals of
consistent finite-difference operators.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import Grid, RegionLabel, boundary_gradient, cell_gradients, normal_set
from .errors import MinimalityViolated, MTooSmall
from .exponent import ExponentField
from .functional import energy_Iinf, power
from .solver import SolveResult, project_mean_zero


@dataclass
class ResidualReport:
    region: str
    name: str
    max: float
    mean: float
    q95: float
    tolerance: float
    passed: bool
    n_checked: int
    n_skipped: int = 0
    pass_fraction: float = 1.0
    nodes: np.ndarray = field(default=None, repr=False)
    values: np.ndarray = field(default=None, repr=False)
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {k: getattr(self, k) for k in ("region", "name", "max", "mean", "q95",
                                                "tolerance", "passed", "n_checked",
                                                "n_skipped", "pass_fraction")}
        out.update(self.extra)
        return out


def _report(region, name, residuals, tol, nodes=None, values=None, skipped=0, **extra):
    r = np.abs(np.asarray(residuals, dtype=float))
    if len(r) == 0:
        return ResidualReport(region, name, 0.0, 0.0, 0.0, tol, True, 0, skipped, 1.0,
                              nodes, values, extra)
    return ResidualReport(region=region, name=name, max=float(r.max()),
                          mean=float(r.mean()), q95=float(np.quantile(r, 0.95)),
                          tolerance=tol, passed=bool(r.max() <= tol), n_checked=len(r),
                          n_skipped=skipped, pass_fraction=float(np.mean(r <= tol)),
                          nodes=nodes, values=values, extra=extra)


def _scale(u) -> float:
    return max(1.0, float(np.abs(u).max()))


# -- membership in S ----------------------------------------------------------

@dataclass
class SMembership:
    grad_sup_D: float
    mean_u: float
    modular_outer: float
    tol_S: float
    tol_mean: float
    passed: bool


def check_membership_S(grid: Grid, u: np.ndarray, p: ExponentField,
                       tol_S: float | None = None, tol_mean: float | None = None) -> SMembership:
    tol_S = 5 * grid.hmax if tol_S is None else tol_S
    tol_mean = 1e-12 * _scale(u) if tol_mean is None else tol_mean
    mag = np.hypot(*cell_gradients(grid, u).T)
    grad_sup = float(mag[grid.cell_in_d].max()) if grid.cell_in_d.any() else 0.0
    outer = ~grid.cell_in_d
    mod = float(np.sum(grid.cell_weight * power(mag[outer], p.cell_values[outer])))
    mean = grid.mean(u)
    ok = grad_sup <= 1 + tol_S and abs(mean) <= tol_mean and np.isfinite(mod)
    return SMembership(grad_sup, mean, mod, tol_S, tol_mean, bool(ok))


# -- finite-difference operators ------------------------------------------------

def _central_derivatives(grid: Grid, u: np.ndarray, nodes: np.ndarray):
    """ux, uy, uxx, uyy, uxy by central differences at interior nodes."""
    U = grid.as_2d(u)
    hx, hy = grid.h
    i, j = np.divmod(nodes, grid.shape[1])
    ux = (U[i + 1, j] - U[i - 1, j]) / (2 * hx)
    uy = (U[i, j + 1] - U[i, j - 1]) / (2 * hy)
    uxx = (U[i + 1, j] - 2 * U[i, j] + U[i - 1, j]) / hx ** 2
    uyy = (U[i, j + 1] - 2 * U[i, j] + U[i, j - 1]) / hy ** 2
    uxy = (U[i + 1, j + 1] - U[i + 1, j - 1] - U[i - 1, j + 1] + U[i - 1, j - 1]) / (4 * hx * hy)
    return ux, uy, uxx, uyy, uxy


def infinity_laplacian(grid: Grid, u: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    ux, uy, uxx, uyy, uxy = _central_derivatives(grid, u, nodes)
    return ux * ux * uxx + 2 * ux * uy * uxy + uy * uy * uyy


def midrange_residual(grid: Grid, u: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """u(x) - (max + min) / 2 over the 8-neighbour ring."""
    U = grid.as_2d(u)
    i, j = np.divmod(nodes, grid.shape[1])
    ring = np.stack([U[i + a, j + b] for a in (-1, 0, 1) for b in (-1, 0, 1)
                     if (a, b) != (0, 0)])
    return U[i, j] - 0.5 * (ring.max(axis=0) + ring.min(axis=0))


def infinity_residual(grid: Grid, u: np.ndarray, tol_midrange: float | None = None,
                      tol_direct: float = np.inf):
    """Direct and midrange infinity-Laplace residuals over the INNER nodes.

    Returns ``(direct, midrange)`` reports. Only the midrange residual carries a
    finite default tolerance (10 h); the direct residual is informational.
    """
    tol_midrange = 10 * grid.hmax if tol_midrange is None else tol_midrange
    nodes = np.flatnonzero(grid.labels == RegionLabel.INNER)
    nx, ny = grid.shape
    i, j = np.divmod(nodes, ny)
    full = (i > 0) & (i < nx - 1) & (j > 0) & (j < ny - 1)
    skipped = int((~full).sum())
    nodes = nodes[full]
    direct = infinity_laplacian(grid, u, nodes)
    mid = midrange_residual(grid, u, nodes)
    return (_report("INNER", "infinity_direct", direct, tol_direct, nodes, direct, skipped),
            _report("INNER", "infinity_midrange", mid, tol_midrange, nodes, mid, skipped))


def pxlap_operator(grid: Grid, u: np.ndarray, p_nodes: np.ndarray, grad_p: np.ndarray,
                   nodes: np.ndarray, delta_sing: float):
    """Expanded -div(|grad u|^(p-2) grad u) at ``nodes``; returns (values, kept mask)."""
    ux, uy, uxx, uyy, uxy = _central_derivatives(grid, u, nodes)
    mag = np.hypot(ux, uy)
    keep = mag >= delta_sing
    mag_k = np.where(keep, mag, 1.0)
    pe = p_nodes[nodes]
    lap = uxx + uyy
    inf_lap = ux * ux * uxx + 2 * ux * uy * uxy + uy * uy * uyy
    gp = grad_p[nodes]
    val = -(mag_k ** (pe - 2) * lap
            + (pe - 2) * mag_k ** (pe - 4) * inf_lap
            + mag_k ** (pe - 2) * np.log(mag_k) * (ux * gp[:, 0] + uy * gp[:, 1]))
    return np.where(keep, val, 0.0), keep


def pxlap_residual(grid: Grid, u: np.ndarray, p: ExponentField,
                   tol: float | None = None, delta_sing: float | None = None) -> ResidualReport:
    """-Delta_p(x) u over OUTER_BULK nodes; near-critical points are skipped and counted."""
    tol = 5 * grid.hmax if tol is None else tol
    delta_sing = 1e-8 * _scale(u) if delta_sing is None else delta_sing
    nodes = np.flatnonzero(grid.labels == RegionLabel.OUTER_BULK)
    vals, keep = pxlap_operator(grid, u, p.values, p.grad, nodes, delta_sing)
    rough = bool(np.any(~np.isfinite(p.grad[nodes])))
    return _report("OUTER_BULK", "pxlap", vals[keep], tol, nodes[keep], vals[keep],
                   int((~keep).sum()), grad_p_from_table=not hasattr(p.source, "gradient"),
                   grad_p_incomplete=rough)


def flux_residual(grid: Grid, u: np.ndarray, p: ExponentField, g: np.ndarray,
                  tol: float | None = None) -> ResidualReport:
    """| |grad u|^(p-2) du/dnu - g | for every dOmega entry (corners: one per normal)."""
    tol = 5 * grid.hmax if tol is None else tol
    grads = {}
    res = np.empty(len(grid.bnd_nodes))
    low_order = 0
    for e, (node, nu) in enumerate(zip(grid.bnd_nodes, grid.bnd_normals)):
        if node not in grads:
            grads[node] = boundary_gradient(grid, u, node)
            low_order += grads[node][1] < 2
        gu = grads[node][0]
        flux = power(np.hypot(*gu), p.values[node] - 2) * float(gu @ nu)
        res[e] = abs(flux - g[e])
    corner = np.array([len(normal_set(grid, n).normals) == 2 for n in grid.bnd_nodes])
    corner_max = float(res[corner].max()) if corner.any() else 0.0
    edge_max = float(res[~corner].max()) if (~corner).any() else 0.0
    return _report("OUTER_BOUNDARY", "flux", res, tol, grid.bnd_nodes, res,
                   corner_max=corner_max, edge_max=edge_max, low_order_nodes=int(low_order))


def interface_sign_condition(grid: Grid, u: np.ndarray, tol: float | None = None) -> ResidualReport:
    """min(| |grad u| - 1 |, min over nu of |du/dnu|) on dD, gradient taken from inside D."""
    tol = 5 * grid.hmax if tol is None else tol
    nodes = np.flatnonzero(grid.labels == RegionLabel.INTERFACE)
    res = np.empty(len(nodes))
    for idx, node in enumerate(nodes):
        gu, _ = boundary_gradient(grid, u, node)
        normals = normal_set(grid, node).normals
        flux = min(abs(float(gu @ np.asarray(nu))) for nu in normals)
        res[idx] = min(abs(np.hypot(*gu) - 1.0), flux)
    return _report("INTERFACE", "interface_sign", res, tol, nodes, res)


# -- uniform estimates along a run ---------------------------------------------

@dataclass
class BoundsReport:
    k_values: list
    modular_bulk: list
    modular_variation: float
    modular_ok: bool
    lm_norms: list
    lm_bound: float
    m: float
    first_violating_k: float | None
    lm_ok: bool
    holder: list
    holder_exponent: float
    holder_variation: float
    holder_ok: bool
    passed: bool


def _upper_half_variation(values) -> float:
    v = np.asarray(values[len(values) // 2:], dtype=float)
    top = np.abs(v).max()
    return 0.0 if top == 0 else float((v.max() - v.min()) / top)


def gradient_lm_norm(grid: Grid, u: np.ndarray, m: float, cells: np.ndarray) -> float:
    """(integral over the masked cells of |grad u|^m)^(1/m), corner quadrature."""
    from .domain import corner_gradients
    gx, gy = corner_gradients(grid, u)
    w = np.tile(cells, 4) * (grid.cell_weight / 4.0)
    return float(np.sum(w * power(np.hypot(gx, gy), m))) ** (1.0 / m)


def holder_pairs(grid: Grid, max_pairs: int = 100_000, seed: int = 0):
    n = grid.n_nodes
    total = n * (n - 1) // 2
    if total <= max_pairs:
        a, b = np.triu_indices(n, 1)
    else:
        rng = np.random.default_rng(seed)
        a = rng.integers(0, n, max_pairs)
        b = rng.integers(0, n, max_pairs)
        keep = a != b
        a, b = a[keep], b[keep]
    return a, b


def holder_seminorm(grid: Grid, u: np.ndarray, alpha: float, pairs) -> float:
    a, b = pairs
    dist = np.linalg.norm(grid.nodes[a] - grid.nodes[b], axis=1)
    return float(np.max(np.abs(u[a] - u[b]) / dist ** alpha))


def uniform_bounds_monitor(grid: Grid, results: list[SolveResult], p: ExponentField,
                           m: float, tail: int = 3, rel_tol: float = 0.1,
                           max_pairs: int = 100_000) -> BoundsReport:
    """Track the k-uniform estimates along a continuation run.

    (a) the modular of |grad u_k|^{p_k} must plateau (relative spread over the
    upper half of the schedule below ``rel_tol``); (b) the L^m(D) norm of
    grad u_k must respect 2|D|^(1/m) on the last ``tail`` values of k; (c) the
    Hölder seminorm with exponent 1 - N/p_- must plateau like (a).
    """
    if m <= p.p_minus:
        raise MTooSmall(f"m = {m:g} must exceed p_- = {p.p_minus:g}")
    ks = [r.k for r in results]
    mods = [r.modular_bulk for r in results]
    mod_var = _upper_half_variation(mods)

    bound = 2 * grid.d_area ** (1.0 / m)
    norms = [gradient_lm_norm(grid, r.u, m, grid.cell_in_d) for r in results]
    violating = [k for k, nrm in zip(ks, norms) if nrm > bound]
    lm_ok = all(nrm <= bound for nrm in norms[-tail:])

    alpha = 1.0 - 2.0 / p.p_minus
    pairs = holder_pairs(grid, max_pairs)
    holder = [holder_seminorm(grid, r.u, alpha, pairs) for r in results]
    hol_var = _upper_half_variation(holder)

    mod_ok, hol_ok = mod_var < rel_tol, hol_var < rel_tol
    return BoundsReport(ks, mods, mod_var, bool(mod_ok), norms, bound, m,
                        violating[0] if violating else None, bool(lm_ok), holder, alpha,
                        hol_var, bool(hol_ok), bool(mod_ok and lm_ok and hol_ok))


# -- minimality audit -------------------------------------------------------------

@dataclass
class MinimalityReport:
    trials: int
    admissible: int
    energy: float
    worst_gap: float        # min over trials of I_inf(v) - I_inf(u)
    tolerance: float
    passed: bool


def _grad_sup_D(grid, u):
    mag = np.hypot(*cell_gradients(grid, u).T)
    return float(mag[grid.cell_in_d].max()) if grid.cell_in_d.any() else 0.0


def _clamp_amplitude(grid, u, bump, iters=60):
    """Largest t in [0, 1] with max_D |grad(u + t bump)| <= 1 (the set is an interval)."""
    if not grid.cell_in_d.any() or _grad_sup_D(grid, u + bump) <= 1.0:
        return 1.0
    if _grad_sup_D(grid, u) > 1.0:
        return None
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _grad_sup_D(grid, u + mid * bump) <= 1.0:
            lo = mid
        else:
            hi = mid
    return lo


def random_bump(grid: Grid, rng: np.random.Generator, amplitude: float) -> np.ndarray:
    ax, bx, ay, by = grid.spec.omega_rect
    diam = np.hypot(bx - ax, by - ay)
    c = np.array([rng.uniform(ax, bx), rng.uniform(ay, by)])
    width = rng.uniform(2 * grid.hmax, 0.25 * diam)
    sign = rng.choice([-1.0, 1.0])
    r2 = np.sum((grid.nodes - c) ** 2, axis=1)
    return project_mean_zero(grid, sign * amplitude * rng.uniform(0.01, 1.0)
                             * np.exp(-r2 / (2 * width ** 2)))


def minimality_spot_check(grid: Grid, u_inf: np.ndarray, p: ExponentField, g: np.ndarray,
                          trials: int = 100, seed: int = 0, tol: float | None = None,
                          raise_on_violation: bool = True) -> MinimalityReport:
    """Randomised audit that no admissible perturbation lowers I_inf.

    Each trial adds a Gaussian bump (random centre, width, sign and size), projects
    to mean zero and shrinks the bump until |grad v| <= 1 on every cell of D.
    """
    rng = np.random.default_rng(seed)
    base = energy_Iinf(grid, u_inf, p, g).total
    tol = 1e-8 * (1 + abs(base)) if tol is None else tol
    amplitude = max(float(u_inf.max() - u_inf.min()), 1.0) * 0.1
    worst, admissible = np.inf, 0
    for _ in range(trials):
        bump = random_bump(grid, rng, amplitude)
        t = _clamp_amplitude(grid, u_inf, bump)
        if t is None:
            continue
        v = project_mean_zero(grid, u_inf + t * bump)
        admissible += 1
        gap = energy_Iinf(grid, v, p, g).total - base
        worst = min(worst, gap)
        if gap < -tol and raise_on_violation:
            raise MinimalityViolated(f"I_inf(v) - I_inf(u) = {gap:.3e} < -{tol:.1e}",
                                     witness=v, gap=gap)
    worst = float(worst) if admissible else 0.0
    return MinimalityReport(trials, admissible, base, worst, tol,
                            bool(admissible == 0 or worst >= -tol))
