import numpy as np
import pytest

from varinf.errors import LineSearchStall, NoConvergence
from varinf.exponent import truncate
from varinf.solver import (ContinuationSchedule, SolveResult, SolverConfig, cauchy_ok,
                           extract_limit, minimize_Ik, project_mean_zero, run_continuation)
from varinf import solver as solver_mod

from conftest import make_problem
from test_functional import loop_stiffness


def trapezoid_load(grid, gfun):
    """Boundary load sum_edges int g phi_i with the trapezoid rule, edge by edge."""
    nx, ny = grid.shape
    hx, hy = grid.h
    b = np.zeros(grid.n_nodes)
    sides = [([(i, 0) for i in range(nx)], (0, -1), hx), ([(nx - 1, j) for j in range(ny)], (1, 0), hy),
             ([(i, ny - 1) for i in range(nx)], (0, 1), hx), ([(0, j) for j in range(ny)], (-1, 0), hy)]
    for ids, nu, step in sides:
        for a, c in zip(ids, ids[1:]):
            for i, j in (a, c):
                x, y = grid.x[i], grid.y[j]
                b[grid.node_id(i, j)] += 0.5 * step * gfun(x, y, nu)
    return b


def linear_oracle(grid, b):
    """Dense KKT solve of K u = b subject to mass . u = 0."""
    K = loop_stiffness(grid)
    m = grid.node_mass
    n = grid.n_nodes
    A = np.zeros((n + 1, n + 1))
    A[:n, :n], A[:n, n], A[n, :n] = K, m, m
    return np.linalg.solve(A, np.append(b, 0.0))[:n]


def el_residual_loop(grid, u, p, b):
    """Discrete Euler-Lagrange residual of I_k with constant p, cell by cell, corner by corner."""
    nx, ny = grid.shape
    hx, hy = grid.h
    w = hx * hy / 4
    U = grid.as_2d(u)
    R = np.zeros((nx, ny))
    for i in range(nx - 1):
        for j in range(ny - 1):
            # (x-difference nodes, y-difference nodes) per corner
            for (xa, xb), (ya, yb) in [(((i, j), (i + 1, j)), ((i, j), (i, j + 1))),
                                       (((i, j), (i + 1, j)), ((i + 1, j), (i + 1, j + 1))),
                                       (((i, j + 1), (i + 1, j + 1)), ((i, j), (i, j + 1))),
                                       (((i, j + 1), (i + 1, j + 1)), ((i + 1, j), (i + 1, j + 1)))]:
                gx = (U[xb] - U[xa]) / hx
                gy = (U[yb] - U[ya]) / hy
                a = w * np.hypot(gx, gy) ** (p - 2)
                R[xb] += a * gx / hx
                R[xa] -= a * gx / hx
                R[yb] += a * gy / hy
                R[ya] -= a * gy / hy
    return R.ravel() - b


def newton_oracle(grid, p, b, u0, tol=1e-13, max_iter=100):
    """Damped Newton with a finite-difference Jacobian on [F(u) + lam m, m.u] = 0."""
    m = grid.node_mass
    n = grid.n_nodes

    def F(z):
        return np.append(el_residual_loop(grid, z[:n], p, b) + z[n] * m, m @ z[:n])

    z = np.append(u0, 0.0)
    for _ in range(max_iter):
        r = F(z)
        if np.abs(r).max() < tol:
            return z[:n]
        J = np.empty((n + 1, n + 1))
        eps = 1e-7
        for c in range(n + 1):
            e = np.zeros(n + 1)
            e[c] = eps
            J[:, c] = (F(z + e) - F(z - e)) / (2 * eps)
        step = np.linalg.solve(J, -r)
        t = 1.0
        while np.linalg.norm(F(z + t * step)) > (1 - 1e-4 * t) * np.linalg.norm(r) and t > 1e-8:
            t *= 0.5
        z = z + t * step
    raise AssertionError("oracle did not converge")


def gx_half(x, y, nu):
    return (x - 0.5)   # g = x - 1/2 on every side


# -- examples -------------------------------------------------------------------------

def test_project_mean_zero_examples(rng):
    grid, _, _ = make_problem(9)
    assert np.allclose(project_mean_zero(grid, np.full(grid.n_nodes, 5.0)), 0, atol=1e-15)
    u = project_mean_zero(grid, grid.field(lambda x, y: x))
    assert np.allclose(u, grid.nodes[:, 0] - 0.5, atol=1e-15)
    v = rng.normal(size=grid.n_nodes)
    once = project_mean_zero(grid, v)
    assert np.allclose(project_mean_zero(grid, once), once, atol=1e-15)


@pytest.mark.parametrize("warm", ["zero", "random"])
def test_zero_data_gives_zero(warm, rng):
    grid, p, g = make_problem(9, g="const 0")
    start = None if warm == "zero" else rng.normal(size=grid.n_nodes)
    # the energy is degenerate at grad u = 0, so |u| only shrinks like grad_tol^(1/(p-1))
    res = minimize_Ik(grid, truncate(p, 8), g, start, SolverConfig(grad_tol=1e-40, max_iters=2000))
    assert np.abs(res.u).max() < 1e-6
    assert 0.0 <= res.energy_trace[-1] < 1e-20
    loose = minimize_Ik(grid, truncate(p, 8), g, start)
    assert 0.0 <= loose.energy_trace[-1] < 1e-8


def test_p2_matches_linear_oracle():
    grid, p, g = make_problem(17, d=None, p="const 2", lower_bound=1)
    res = minimize_Ik(grid, truncate(p, 3), g)
    ref = linear_oracle(grid, trapezoid_load(grid, gx_half))
    assert np.abs(res.u - ref).max() <= 1e-8 * (ref.max() - ref.min())


def test_p2_weak_form_vanishes_on_basis():
    grid, p, g = make_problem(17, d=None, p="const 2", lower_bound=1)
    pk = truncate(p, 3)
    res = minimize_Ik(grid, pk, g)
    from varinf.functional import weak_residual
    scale = np.abs(g).max()
    basis = np.eye(grid.n_nodes)[::7]
    assert max(abs(weak_residual(grid, res.u, pk, g, v)) for v in basis) < 1e-8 * scale


def test_p4_matches_newton_oracle_5x5():
    grid, p, g = make_problem(5, d=None)
    b = trapezoid_load(grid, gx_half)
    u0 = linear_oracle(grid, b)
    ref = newton_oracle(grid, 4.0, b, u0)
    res = minimize_Ik(grid, truncate(p, 8), g)
    assert np.abs(res.u - ref).max() < 1e-6


@pytest.mark.parametrize("method", ["newton", "gradient"])
def test_energy_trace_monotone_and_mean_zero(method):
    grid, p, g = make_problem(9, p="affine 3 1 0.5")
    res = minimize_Ik(grid, truncate(p, 16), g, cfg=SolverConfig(method=method, max_iters=20000))
    assert res.converged
    assert np.all(np.diff(res.energy_trace) <= 0)
    assert abs(grid.mean(res.u)) <= 1e-12 * max(1, np.abs(res.u).max())


def test_gradient_method_agrees_with_newton():
    grid, p, g = make_problem(9)
    pk = truncate(p, 8)
    a = minimize_Ik(grid, pk, g)
    b = minimize_Ik(grid, pk, g, cfg=SolverConfig(method="gradient", max_iters=20000))
    assert np.abs(a.u - b.u).max() < 1e-7


def test_warm_start_consistency():
    grid, p, g = make_problem(17)
    cfg = SolverConfig()
    first = minimize_Ik(grid, truncate(p, 8), g, cfg=cfg)
    warm = minimize_Ik(grid, truncate(p, 16), g, first.u, cfg)
    cold = minimize_Ik(grid, truncate(p, 16), g, None, cfg)
    assert np.abs(warm.u - cold.u).max() <= 10 * cfg.grad_tol


def test_no_convergence_carries_best():
    grid, p, g = make_problem(9)
    with pytest.raises(NoConvergence) as exc:
        minimize_Ik(grid, truncate(p, 8), g, cfg=SolverConfig(max_iters=1))
    best = exc.value.best
    assert isinstance(best, SolveResult) and not best.converged
    assert exc.value.k == 8


def test_line_search_stall(monkeypatch):
    grid, p, g = make_problem(9)
    monkeypatch.setattr(solver_mod, "energy_change", lambda *a: 1.0)
    with pytest.raises(LineSearchStall) as exc:
        minimize_Ik(grid, truncate(p, 8), g, cfg=SolverConfig(max_backtracks=3))
    assert exc.value.best is not None


def test_continuation_attaches_failing_k():
    grid, p, g = make_problem(9)
    with pytest.raises(NoConvergence) as exc:
        run_continuation(grid, p, g, ContinuationSchedule((8, 16)), SolverConfig(max_iters=1))
    assert exc.value.k == 8


def test_config_validation():
    for bad in [dict(ls_shrink=1.0), dict(ls_shrink=0.0), dict(ls_c1=0.5), dict(ls_c1=0.0),
                dict(method="bfgs"), dict(max_iters=0)]:
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    with pytest.raises(ValueError):
        ContinuationSchedule((8, 8, 16))
    grid, p, _ = make_problem(9)
    with pytest.raises(ValueError):
        ContinuationSchedule((4, 8)).check(p)


def test_geometric_schedule():
    s = ContinuationSchedule.geometric(4.0)
    assert s.k_values[0] == 8 and s.k_values[-1] == 4 * 4096 and len(s.k_values) == 12


def test_zero_run_and_limit():
    grid, p, g = make_problem(9, g="const 0")
    results = run_continuation(grid, p, g, ContinuationSchedule((8, 16, 32)))
    assert all(np.all(r.u == 0) for r in results)
    lim = extract_limit(results)
    assert lim.deltas == [0.0, 0.0] and lim.cauchy_ok and np.all(lim.u_inf == 0)


def _fake(deltas):
    us, u = [np.zeros(4)], np.zeros(4)
    for d in deltas:
        u = u.copy()
        u[0] += d
        us.append(u)
    return [SolveResult(u=v, k=8.0 * 2 ** i, iterations=0, energy_trace=[0.0],
                        grad_norm_final=0.0, modular_bulk=0.0) for i, v in enumerate(us)]


def test_extract_limit_threshold_arithmetic():
    lim = extract_limit(_fake([1e-2, 1e-3, 1e-4]), stop_tol=1e-3)
    assert lim.cauchy_ok and lim.deltas == pytest.approx([1e-2, 1e-3, 1e-4])
    assert not extract_limit(_fake([1e-4, 1e-3, 1e-2]), stop_tol=1e-3).cauchy_ok
    assert not cauchy_ok([], 1.0)
    with pytest.raises(ValueError):
        extract_limit(_fake([]))


def test_generic_run_monitors():
    grid, p, g = make_problem(17)
    results = run_continuation(grid, p, g, ContinuationSchedule((8, 16, 32, 64, 128)))
    mods = np.array([r.modular_bulk for r in results])
    assert np.all(mods <= np.maximum.accumulate(mods) * (1 + 1e-6))
    deltas = extract_limit(results).deltas
    assert np.all(np.diff(deltas) < 0)


def test_early_stop():
    grid, p, g = make_problem(9)
    sched = ContinuationSchedule((8, 16, 32, 64, 128, 256), stop_tol=1e-2, stop_early=True)
    results = run_continuation(grid, p, g, sched)
    assert len(results) < 6
    assert np.abs(results[-1].u - results[-2].u).max() <= 1e-2
