import numpy as np
import pytest
import sympy as sy

from varinf.domain import RegionLabel, normal_derivative
from varinf.errors import MinimalityViolated, MTooSmall
from varinf.exponent import validate
from varinf.functional import boundary_trace
from varinf.solver import ContinuationSchedule, SolveResult, run_continuation
from varinf.verify import (check_membership_S, flux_residual, infinity_laplacian,
                           infinity_residual, interface_sign_condition, minimality_spot_check,
                           pxlap_operator, pxlap_residual, uniform_bounds_monitor)

from conftest import make_problem
from test_domain import node_at

X, Y = sy.symbols("x y", positive=True)


def sym_gradient_ops(u):
    ux, uy = sy.diff(u, X), sy.diff(u, Y)
    lap = sy.diff(u, X, 2) + sy.diff(u, Y, 2)
    inf_lap = ux ** 2 * sy.diff(u, X, 2) + 2 * ux * uy * sy.diff(u, X, Y) + uy ** 2 * sy.diff(u, Y, 2)
    return ux, uy, lap, inf_lap


def lambdify(expr):
    f = sy.lambdify((X, Y), expr, "numpy")
    return lambda x, y: np.broadcast_to(f(x, y), np.shape(x)).astype(float)


# -- membership in S -------------------------------------------------------------

def test_membership_examples():
    grid, p, _ = make_problem(17)
    zero = check_membership_S(grid, np.zeros(grid.n_nodes), p)
    assert zero.passed and zero.grad_sup_D == 0 and zero.mean_u == 0
    steep = check_membership_S(grid, grid.field(lambda x, y: 2 * (x - 0.5)), p)
    assert not steep.passed and steep.grad_sup_D == pytest.approx(2.0)
    one = check_membership_S(grid, np.ones(grid.n_nodes), p)
    assert not one.passed and one.mean_u == pytest.approx(1.0)


# -- infinity Laplacian -------------------------------------------------------------

def test_infinity_residuals_vanish_on_affine():
    grid, _, _ = make_problem(17)
    direct, mid = infinity_residual(grid, grid.field(lambda x, y: 0.2 + 0.6 * x - 0.8 * y))
    assert direct.max < 1e-12 and mid.max < 1e-12 and mid.passed
    assert direct.n_checked > 0


def test_infinity_laplacian_of_x_squared():
    grid, _, _ = make_problem(17)
    nodes = np.flatnonzero(grid.labels == RegionLabel.INNER)
    vals = infinity_laplacian(grid, grid.field(lambda x, y: x ** 2), nodes)
    assert np.allclose(vals, 8 * grid.nodes[nodes, 0] ** 2, rtol=1e-12)


def test_aronsson_field_oracle_and_refinement():
    u = X ** sy.Rational(4, 3) - Y ** sy.Rational(4, 3)
    assert sy.simplify(sym_gradient_ops(u)[3]) == 0
    f = lambdify(u)
    errs = []
    for n in (17, 33, 65):
        grid, _, _ = make_problem(n)
        direct, mid = infinity_residual(grid, grid.field(f))
        errs.append(direct.max)
    assert errs[0] > errs[1] > errs[2]


def test_infinity_variants_both_refine_on_cone():
    # distance from a point outside D is infinity harmonic and smooth on D
    f = lambda x, y: np.hypot(x + 0.5, y + 0.5)
    direct, mid = [], []
    for n in (17, 33, 65):
        grid, _, _ = make_problem(n)
        d, m = infinity_residual(grid, grid.field(f))
        direct.append(d.max)
        mid.append(m.max)
        assert m.passed
    assert np.all(np.diff(mid) < 0)
    assert np.all(np.log2(np.array(direct[:-1]) / direct[1:]) >= 0.9)


# -- p(x)-Laplacian ------------------------------------------------------------------

def test_pxlap_affine_constant_p():
    grid, p, _ = make_problem(17)
    rep = pxlap_residual(grid, grid.field(lambda x, y: 0.3 - 2 * x + 0.5 * y), p)
    assert rep.max < 1e-12 and rep.passed and rep.n_skipped == 0


def test_pxlap_p2_gives_minus_laplacian():
    grid, p, _ = make_problem(17, d=None, p="const 2", lower_bound=1)
    nodes = np.flatnonzero(grid.labels == RegionLabel.OUTER_BULK)
    vals, keep = pxlap_operator(grid, grid.field(lambda x, y: x ** 2), p.values, p.grad, nodes, 1e-8)
    assert keep.all() and np.allclose(vals, -2.0, atol=1e-10)


def test_pxlap_variable_exponent_matches_symbolic():
    u = X ** 2 / 2 + X * Y / 3 + Y ** 2
    pe = 3 + X
    ux, uy, lap, inf_lap = sym_gradient_ops(u)
    mag = sy.sqrt(ux ** 2 + uy ** 2)
    expr = -(mag ** (pe - 2) * lap + (pe - 2) * mag ** (pe - 4) * inf_lap
             + mag ** (pe - 2) * sy.log(mag) * (ux * sy.diff(pe, X) + uy * sy.diff(pe, Y)))
    # cross-check the expansion against the divergence form
    div = -(sy.diff(mag ** (pe - 2) * ux, X) + sy.diff(mag ** (pe - 2) * uy, Y))
    assert abs(float((expr - div).subs({X: 0.3, Y: 0.7}))) < 1e-12
    grid, p, _ = make_problem(17, p="affine 3 1 0")
    nodes = np.flatnonzero(grid.labels == RegionLabel.OUTER_BULK)
    vals, keep = pxlap_operator(grid, grid.field(lambdify(u)), p.values, p.grad, nodes, 1e-8)
    ref = lambdify(expr)(grid.nodes[nodes, 0], grid.nodes[nodes, 1])
    assert np.allclose(vals[keep], ref[keep], rtol=1e-10, atol=1e-12)
    assert (~keep).sum() <= 1


# -- flux ------------------------------------------------------------------------------

def test_flux_examples():
    grid, _, _ = make_problem(17, p="const 3")
    p = validate("const 3", grid)
    u = grid.field(lambda x, y: 2 * x)
    assert flux_residual(grid, u, p, boundary_trace(grid, "flux 2 0", p)).max < 1e-12
    zero = np.zeros(grid.n_nodes)
    assert flux_residual(grid, zero, p, np.zeros(len(grid.bnd_nodes))).max == 0
    ones = flux_residual(grid, zero, p, np.ones(len(grid.bnd_nodes)))
    assert np.all(ones.values == 1.0) and not ones.passed


def test_flux_p2_is_plain_neumann_residual(rng):
    grid, p, g = make_problem(17, d=None, p="const 2", lower_bound=1)
    c = rng.normal(size=4)
    u = grid.field(lambda x, y: c[0] * x ** 3 + c[1] * x * y + c[2] * y ** 2 + c[3] * np.sin(y))
    rep = flux_residual(grid, u, p, g)
    expect = [abs(normal_derivative(grid, u, n, nu) - ge)
              for n, nu, ge in zip(grid.bnd_nodes, grid.bnd_normals, g)]
    assert np.allclose(rep.values, expect, rtol=1e-12, atol=1e-13)


# -- interface ---------------------------------------------------------------------------

def test_interface_examples():
    grid, _, _ = make_problem(17)
    unit = interface_sign_condition(grid, grid.field(lambda x, y: 0.6 * x + 0.8 * y))
    assert unit.max < 1e-12
    # left face of D has normal (-1, 0): du/dnu = 0 for u depending on y only
    left = node_at(grid, 0.25, 0.5)
    rep = interface_sign_condition(grid, grid.field(lambda x, y: 0.3 * y))
    assert rep.values[list(rep.nodes).index(left)] < 1e-12
    # right face: |grad u| = 2, du/dnu = 0.5
    b = np.sqrt(4 - 0.25)
    rep = interface_sign_condition(grid, grid.field(lambda x, y: 0.5 * x + b * y))
    right = node_at(grid, 0.75, 0.5)
    assert rep.values[list(rep.nodes).index(right)] == pytest.approx(0.5, abs=1e-12)
    assert not rep.passed


def test_interface_shift_invariant(rng):
    grid, _, _ = make_problem(17)
    u = grid.field(lambda x, y: np.sin(3 * x) * y + x ** 2)
    a = interface_sign_condition(grid, u)
    for c in (-2.0, 7.5):
        assert np.allclose(interface_sign_condition(grid, u + c).values, a.values, atol=1e-12)


# -- affine smoke -------------------------------------------------------------------------

def test_affine_smoke():
    grid, p, _ = make_problem(17, p="affine 3 1 0.5")
    u = grid.field(lambda x, y: 0.1 + 0.6 * x + 0.8 * y)
    g = boundary_trace(grid, "flux 0.6 0.8", p)
    reps = [*infinity_residual(grid, u), pxlap_residual(grid, u, p),
            flux_residual(grid, u, p, g), interface_sign_condition(grid, u)]
    for rep in reps:
        assert rep.max <= 1e-12, rep.name


# -- uniform bounds ------------------------------------------------------------------------

def test_bounds_examples():
    grid, p, g = make_problem(9, g="const 0")
    results = run_continuation(grid, p, g, ContinuationSchedule((8, 16, 32)))
    rep = uniform_bounds_monitor(grid, results, p, m=8)
    assert rep.passed and rep.first_violating_k is None
    assert uniform_bounds_monitor(grid, results, p, m=4.5).lm_bound == pytest.approx(2 * 0.25 ** (1 / 4.5))
    grid17, p17, _ = make_problem(17)
    fake = [SolveResult(np.zeros(grid17.n_nodes), 8.0, 0, [0.0], 0.0, 0.0)] * 2
    assert uniform_bounds_monitor(grid17, fake, validate("const 3", grid17), m=4).lm_bound \
        == pytest.approx(2 * 0.25 ** 0.25, rel=1e-12)
    with pytest.raises(MTooSmall):
        uniform_bounds_monitor(grid, results, p, m=4)


def test_bounds_plateau_on_generic_run():
    grid, p, g = make_problem(17)
    ks = tuple(2.0 ** j for j in range(3, 11))
    results = run_continuation(grid, p, g, ContinuationSchedule(ks))
    rep = uniform_bounds_monitor(grid, results, p, m=8)
    assert rep.modular_ok and rep.holder_ok and rep.lm_ok
    assert max(rep.holder) >= rep.holder[-1] * (1 - 1e-9)


# -- minimality -----------------------------------------------------------------------------

def test_minimality_zero_data():
    grid, p, g = make_problem(17, g="const 0")
    rep = minimality_spot_check(grid, np.zeros(grid.n_nodes), p, g, trials=30)
    assert rep.passed and rep.energy == 0 and rep.worst_gap >= 0 and rep.admissible == 30


def test_minimality_finds_witness_for_non_minimizer():
    grid, p, g = make_problem(17)
    with pytest.raises(MinimalityViolated) as exc:
        minimality_spot_check(grid, np.zeros(grid.n_nodes), p, g, trials=100)
    v = exc.value.witness
    assert exc.value.gap < 0 and check_membership_S(grid, v, p, tol_S=0.0).passed


# -- determinism ----------------------------------------------------------------------------

def test_reports_are_deterministic():
    grid, p, g = make_problem(17)
    u = grid.field(lambda x, y: np.sin(2 * x) * np.cos(y) - 0.3)
    for fn in (lambda: pxlap_residual(grid, u, p), lambda: flux_residual(grid, u, p, g),
               lambda: interface_sign_condition(grid, u), lambda: infinity_residual(grid, u)[1]):
        a, b = fn(), fn()
        assert a.summary() == b.summary() and a.values.tobytes() == b.values.tobytes()
    r1 = minimality_spot_check(grid, u - grid.mean(u), p, g, trials=10, raise_on_violation=False)
    r2 = minimality_spot_check(grid, u - grid.mean(u), p, g, trials=10, raise_on_violation=False)
    assert r1 == r2
