import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from annuity_survival import (GridFunction, ModelParams, apply, assemble, extend_grid,
                              make_empirical, make_exponential, make_gamma, make_grid,
                              reference_apply)
from annuity_survival.operator import GridError, dump_operator_csv
from annuity_survival.validation import EXP, convergence_study, uniform_family

from conftest import closed_form_exp, exp_test_fn


def test_uniform_grid():
    g = make_grid(10, 10, 1)
    np.testing.assert_array_equal(g.nodes, np.arange(11.0))


@pytest.mark.parametrize("stretch,center", [(1, None), (2, 6.7), (4, 6.7), (3, None)])
def test_grid_endpoints_exact(stretch, center):
    g = make_grid(37.5, 50, stretch, center)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 37.5
    assert np.all(np.diff(g.nodes) > 0)


def test_stretched_grid_is_finer_near_zero():
    for center in (None, 6.67):
        g = make_grid(20, 100, 2, center)
        assert g.spacing[0] < g.spacing[-1]


def test_grid_clusters_near_drift_sign_change():
    g = make_grid(40, 200, 4, center=10.0)
    h = np.interp(10.0, g.nodes[:-1], g.spacing)
    assert h < np.interp(5.0, g.nodes[:-1], g.spacing)
    assert h < np.interp(25.0, g.nodes[:-1], g.spacing)


@pytest.mark.parametrize("args", [(10, 7, 1), (0, 10, 1), (-1, 10, 1), (10, 10.5, 1), (10, 10, 0.5)])
def test_grid_rejects_invalid(args):
    with pytest.raises(GridError):
        make_grid(*args)


def test_extend_grid_keeps_nodes_and_relative_spacing():
    g = make_grid(20, 100, 3, 6.0)
    big = extend_grid(g, 40)
    np.testing.assert_array_equal(big.nodes[:g.nodes.size], g.nodes)
    assert big.u_max == 40
    rel = big.spacing[g.n:] / big.nodes[g.n:-1]
    assert rel.max() <= g.spacing[-1] / g.u_max * 1.01


DISTS = [make_exponential(1.0), make_gamma(2.0, 0.5), make_gamma(0.6, 2.0),
         make_empirical([(0.5, 0.3), (2.0, 0.7)])]


@pytest.mark.parametrize("dist", DISTS, ids=repr)
@pytest.mark.parametrize("stretch", [1.0, 4.0])
def test_row_mass_plus_tail_is_lambda(params, dist, stretch):
    op = assemble(params, dist, make_grid(15, 120, stretch, 6.67))
    total = op.weights[1:].sum(axis=1) + op.tail[1:]
    np.testing.assert_allclose(total, params.lam, atol=1e-10, rtol=0)


def test_tail_mass_exponential(params, exp1):
    g = make_grid(10, 10, 1)
    op = assemble(params, exp1, g)
    assert op.tail[5] == pytest.approx(params.lam * math.exp(-5), rel=1e-12)


@pytest.mark.parametrize("dist", DISTS, ids=repr)
def test_constant_has_zero_residual(params, dist):
    g = make_grid(20, 200, 4, 6.67)
    op = assemble(params, dist, g)
    for k in (1.0, -2.5, 7.0):
        res = apply(op, GridFunction(np.full(g.nodes.size, k), far_field=k)).values
        assert np.abs(res).max() <= 1e-10 * max(1, abs(k))


def test_nonlocal_is_exactly_one_sided(params):
    for dist in DISTS:
        op = assemble(params, dist, make_grid(12, 80, 3, 6.67))
        assert not np.any(np.tril(op.weights, -1))


def test_closed_form_exponential_value(params):
    # independent route: integrate the jump term directly against the density
    jump = integrate.quad(lambda y: (math.exp(-(1 + y)) - math.exp(-1)) * math.exp(-y),
                          0, np.inf, epsabs=1e-14)[0]
    assert jump == pytest.approx(-math.exp(-1) / 2, abs=1e-13)
    direct = 0.045 * math.exp(-1) + (0.15 - 1) * -math.exp(-1) + params.lam * jump
    exact = closed_form_exp(params, 1.0)
    assert direct == pytest.approx(exact, abs=1e-13)
    assert exact == pytest.approx(-0.038632, abs=1e-5)


def test_reference_apply_examples(params, exp1):
    f, df, d2f = exp_test_fn()
    assert reference_apply(params, exp1, f, df, d2f, 1.0) == pytest.approx(
        closed_form_exp(params, 1.0), abs=1e-10)
    for u in (0.3, 2.0, 7.5):
        assert reference_apply(params, exp1, lambda x: 1.0, lambda x: 0.0, lambda x: 0.0, u) == 0
        assert reference_apply(params, exp1, f, df, d2f, u) == pytest.approx(
            closed_form_exp(params, u), abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(-3, 3), beta=st.floats(-3, 3), u=st.floats(0.05, 8))
def test_reference_apply_is_linear(params, alpha, beta, u):
    d = make_gamma(2.0, 0.6)
    f = (lambda x: math.exp(-x), lambda x: -math.exp(-x), lambda x: math.exp(-x))
    g = (lambda x: 1 / (1 + x), lambda x: -1 / (1 + x) ** 2, lambda x: 2 / (1 + x) ** 3)
    combo = [lambda x, i=i: alpha * f[i](x) + beta * g[i](x) for i in range(3)]
    lhs = reference_apply(params, d, *combo, u)
    rhs = alpha * reference_apply(params, d, *f, u) + beta * reference_apply(params, d, *g, u)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_discrete_residual_converges_to_closed_form(params, exp1):
    exact = closed_form_exp(params, 1.0)
    errs = []
    for n in (100, 200, 400, 800):
        g = make_grid(10, n, 1)
        res = apply(assemble(params, exp1, g), GridFunction(np.exp(-g.nodes), 0.0)).values
        errs.append(abs(res[np.argmin(np.abs(g.nodes - 1.0))] - exact))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)
    assert errs[-1] < 2e-5


def test_central_regime_order(params, exp1):
    res = convergence_study(params, exp1, EXP, uniform_family(10, (100, 200, 400)), (1.0, 5.0))
    assert res.order >= 1.8


def test_upwind_regime_order(exp1):
    p = ModelParams(0.15, 0.3, 20.0, 2.0)
    grids = uniform_family(10, (100, 200, 400))
    for g in grids:
        op = assemble(p, exp1, g)
        probe = (g.nodes >= 1) & (g.nodes <= 2)
        assert op.upwind[probe].all()
    res = convergence_study(p, exp1, EXP, grids, (1.0, 2.0))
    assert res.order >= 0.9


def test_piecewise_linear_against_reference(params):
    # phi(u) = min(u, U): the stencil and the interpolated quadrature are exact for it
    for dist in (make_exponential(1.0), make_gamma(2.0, 0.5), make_empirical([(0.7, 0.4), (1.9, 0.6)])):
        g = make_grid(10, 60, 2, 6.67)
        U = g.u_max
        op = assemble(params, dist, g)
        res = apply(op, GridFunction(g.nodes.copy(), far_field=U)).values
        for i in range(1, g.n):
            u = g.nodes[i]
            ref = reference_apply(params, dist, lambda x: min(x, U), lambda x: 1.0 if x < U else 0.0,
                                  lambda x: 0.0, u, points=[U - u])
            assert res[i] == pytest.approx(ref, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(gam=st.floats(1.05, 8), sigma=st.floats(0.05, 1.5), c=st.floats(0.01, 20),
       lam=st.floats(0.01, 10), stretch=st.floats(1, 6), n=st.integers(8, 150))
def test_monotone_sign_conditions_randomized(gam, sigma, c, lam, stretch, n):
    p = ModelParams(gam * sigma**2 / 2, sigma, c, lam)
    g = make_grid(30, n, stretch, p.c / p.a)
    op = assemble(p, make_gamma(1.5, 0.8), g, "upwind-auto")
    assert op.sign_conditions_hold().all()
    assert np.all(op.weights >= 0) and np.all(op.tail >= 0)


def test_apply_rejects_grid_mismatch(params, exp1):
    op = assemble(params, exp1, make_grid(10, 20, 1))
    with pytest.raises(GridError):
        apply(op, GridFunction(np.zeros(10)))


def test_residual_vanishes_at_boundary_node(params, exp1):
    g = make_grid(10, 20, 1)
    res = apply(assemble(params, exp1, g), GridFunction(np.exp(-g.nodes), 0.0))
    assert res.values[0] == 0.0


def test_operator_csv_dump(tmp_path, params, exp1):
    g = make_grid(5, 10, 1)
    op = assemble(params, exp1, g)
    path = tmp_path / "op.csv"
    dump_operator_csv(op, path)
    rows = list(csv.DictReader(path.open()))
    assert set(rows[0]) == {"row", "col", "value", "tail"}
    row3 = [r for r in rows if r["row"] == "3"]
    assert float(row3[0]["tail"]) == pytest.approx(op.tail[3])
    total = sum(float(r["value"]) for r in row3) + float(row3[0]["tail"])
    assert total == pytest.approx(0.0, abs=1e-12)  # derivatives of constants vanish
