"""Minimisation of I_k over mean-zero fields and the k -> infinity continuation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain import Grid
from .errors import LineSearchStall, ModularOverflow, NoConvergence
from .exponent import ExponentField, TruncatedExponent, truncate
from .functional import (energy_change, energy_gradient, energy_hessian, energy_Ik,
                         modular_bulk, stiffness)

log = logging.getLogger(__name__)

# Levenberg shift bounds, relative to the mean Hessian diagonal
MU_FLOOR, MU_CEIL = 1e-12, 1e6


@dataclass(frozen=True)
class SolverConfig:
    """Descent settings.

    ``method`` is ``"newton"`` (projected Newton with a Levenberg shift by the
    p = 2 stiffness) or ``"gradient"`` (projected gradient, Barzilai-Borwein
    initial steps). Both share the Armijo backtracking line search.
    """

    grad_tol: float = 1e-10
    max_iters: int = 500
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    method: str = "newton"
    bb_clamp: tuple[float, float] = (1e-12, 1e3)
    max_backtracks: int = 80

    def __post_init__(self):
        if not 0 < self.ls_shrink < 1:
            raise ValueError("ls_shrink must lie in (0, 1)")
        if not 0 < self.ls_c1 < 0.5:
            raise ValueError("ls_c1 must lie in (0, 1/2)")
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass(frozen=True)
class ContinuationSchedule:
    k_values: tuple[float, ...]
    stop_tol: float | None = None   # None: 1e-5 * oscillation of the first solve
    stop_early: bool = False        # end the sweep once a delta drops below stop_tol

    def __post_init__(self):
        ks = tuple(float(k) for k in self.k_values)
        if len(ks) < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValueError(f"k_values must be strictly increasing, got {ks}")
        object.__setattr__(self, "k_values", ks)

    @classmethod
    def geometric(cls, p_plus: float, j_max: int = 12, stop_tol=None, stop_early=True):
        """k_j = p_plus * 2**j for j = 1..j_max (j_max = 12 reaches 4096 p_plus)."""
        return cls(tuple(p_plus * 2.0 ** j for j in range(1, j_max + 1)),
                   stop_tol=stop_tol, stop_early=stop_early)

    def check(self, p: ExponentField):
        if self.k_values[0] <= p.p_plus:
            raise ValueError(f"first k = {self.k_values[0]:g} must exceed p_+ = {p.p_plus:g}")


@dataclass
class SolveResult:
    u: np.ndarray
    k: float
    iterations: int
    energy_trace: list[float]
    grad_norm_final: float
    modular_bulk: float
    converged: bool = True


@dataclass
class LimitResult:
    u_inf: np.ndarray
    deltas: list[float]
    stop_tol: float
    cauchy_ok: bool
    k_final: float
    results: list[SolveResult] = field(default_factory=list, repr=False)


def project_mean_zero(grid: Grid, u: np.ndarray) -> np.ndarray:
    return u - grid.mean(u)


def _tangent_projector(grid: Grid):
    m = grid.node_mass
    mm = float(m @ m)

    def proj(v):
        return v - m * (float(m @ v) / mm)

    return proj


def _newton_direction(grid, H, K0, mu, rhs):
    """Solve (H + mu K0) d = rhs subject to mass . d = 0 (bordered system)."""
    n = grid.n_nodes
    m = grid.node_mass[:, None]
    A = sp.bmat([[H + mu * K0, sp.csr_matrix(m)], [sp.csr_matrix(m.T), None]], format="csc")
    sol = spla.spsolve(A, np.append(rhs, 0.0))
    return sol[:n]


def minimize_Ik(grid: Grid, pk: TruncatedExponent, g: np.ndarray,
                warm_start: np.ndarray | None = None,
                cfg: SolverConfig = SolverConfig()) -> SolveResult:
    """Minimise I_k over {u : quadrature mean of u = 0}.

    Each iterate is re-projected to mean zero. Stops when the sup norm of the
    projected gradient is at most ``grad_tol * (1 + |I_k|)``.
    """
    proj = _tangent_projector(grid)
    u = project_mean_zero(grid, np.zeros(grid.n_nodes) if warm_start is None
                          else np.asarray(warm_start, dtype=float))
    energy = energy_Ik(grid, u, pk, g).total
    trace = [energy]
    K0 = stiffness(grid) if cfg.method == "newton" else None
    mu = None
    prev_step = prev_grad = None

    def result(it, gnorm, converged):
        return SolveResult(u=u, k=pk.k, iterations=it, energy_trace=trace,
                           grad_norm_final=gnorm, modular_bulk=modular_bulk(grid, u, pk),
                           converged=converged)

    grad = proj(energy_gradient(grid, u, pk, g))
    for it in range(cfg.max_iters + 1):
        gnorm = float(np.abs(grad).max())
        if gnorm <= cfg.grad_tol * (1.0 + abs(energy)):
            return result(it, gnorm, True)
        if it == cfg.max_iters:
            break

        if cfg.method == "newton":
            H = energy_hessian(grid, u, pk)
            scale = H.diagonal().mean() / K0.diagonal().mean()
            if scale <= 0:
                scale = 1.0     # degenerate Hessian (e.g. u = 0 with p > 2)
            mu = 1e-2 * scale if mu is None else min(max(mu, MU_FLOOR * scale), MU_CEIL * scale)
            direction = _newton_direction(grid, H, K0, mu, -grad)
            alpha = 1.0
        else:
            direction = -grad
            if prev_step is None:
                alpha = 1.0 / max(gnorm, 1e-300) * grid.hmax
            else:
                y = grad - prev_grad
                sy = float(prev_step @ y)
                alpha = float(prev_step @ prev_step) / sy if sy > 0 else cfg.bb_clamp[1]
            alpha = min(max(alpha, cfg.bb_clamp[0]), cfg.bb_clamp[1])

        slope = float(grad @ direction)
        if slope >= 0:
            # Newton system lost definiteness; fall back to steepest descent
            direction, slope, alpha = -grad, -float(grad @ grad), grid.hmax / gnorm
        for backtrack in range(cfg.max_backtracks):
            trial = project_mean_zero(grid, u + alpha * direction)
            step = trial - u
            try:
                dE = energy_change(grid, u, step, pk, g)
            except ModularOverflow:
                dE = np.inf
            if dE <= cfg.ls_c1 * alpha * slope and dE < 0:
                break
            alpha *= cfg.ls_shrink
        else:
            raise LineSearchStall(
                f"line search stalled at k = {pk.k:g}, iteration {it}, "
                f"|grad| = {gnorm:.3e}", best=result(it, gnorm, False), k=pk.k)

        if cfg.method == "newton":
            mu = mu / 10.0 if backtrack == 0 else mu * 10.0 ** min(backtrack, 3)
        u = trial
        energy = trace[-1] + dE
        if -dE > 1e-3 * abs(trace[-1]):
            # large drop: re-anchor so rounding from a big starting energy doesn't linger
            energy = min(energy_Ik(grid, u, pk, g).total, trace[-1])
        trace.append(energy)
        new_grad = proj(energy_gradient(grid, u, pk, g))
        prev_step, prev_grad = step, grad
        grad = new_grad

    raise NoConvergence(f"no convergence in {cfg.max_iters} iterations at k = {pk.k:g} "
                        f"(|grad| = {gnorm:.3e})", best=result(cfg.max_iters, gnorm, False),
                        k=pk.k)


def _sup(a):
    return float(np.abs(a).max()) if len(a) else 0.0


def run_continuation(grid: Grid, p: ExponentField, g: np.ndarray,
                     schedule: ContinuationSchedule, cfg: SolverConfig = SolverConfig(),
                     warm_start: np.ndarray | None = None) -> list[SolveResult]:
    """Solve the truncated problems for each k in turn, warm-starting from the last."""
    schedule.check(p)
    results: list[SolveResult] = []
    u = warm_start
    stop_tol = schedule.stop_tol
    for k in schedule.k_values:
        pk = truncate(p, k)
        try:
            res = minimize_Ik(grid, pk, g, u, cfg)
        except (NoConvergence, LineSearchStall) as exc:
            exc.k = k
            raise
        log.info("k = %g: %d iterations, I_k = %.12g, |grad| = %.2e",
                 k, res.iterations, res.energy_trace[-1], res.grad_norm_final)
        results.append(res)
        if stop_tol is None:
            stop_tol = default_stop_tol(res.u)
        if schedule.stop_early and len(results) >= 2 \
                and _sup(results[-1].u - results[-2].u) <= stop_tol:
            break
        u = res.u
    return results


def default_stop_tol(u_first: np.ndarray) -> float:
    return 1e-5 * float(u_first.max() - u_first.min())


def extract_limit(results: list[SolveResult], stop_tol: float | None = None) -> LimitResult:
    if len(results) < 2:
        raise ValueError("extracting a limit needs at least two solves")
    deltas = [_sup(b.u - a.u) for a, b in zip(results, results[1:])]
    if stop_tol is None:
        stop_tol = default_stop_tol(results[0].u)
    return LimitResult(u_inf=results[-1].u.copy(), deltas=deltas, stop_tol=stop_tol,
                       cauchy_ok=deltas[-1] <= stop_tol, k_final=results[-1].k,
                       results=list(results))


def cauchy_ok(deltas, stop_tol) -> bool:
    return bool(deltas) and deltas[-1] <= stop_tol
