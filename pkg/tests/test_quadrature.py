import numpy as np
import numpy.testing as npt
import pytest

from basis import make_basis
from quadrature import (build_plan, composite_rule, default_quadrature_sizes, gauss_legendre,
                        inner_rule)


def test_one_point_rule_is_midpoint():
    rule = gauss_legendre(1)
    npt.assert_allclose(rule.nodes, [0.0], atol=1e-15)
    npt.assert_allclose(rule.weights, [2.0], rtol=1e-15)


def test_two_point_rule():
    rule = gauss_legendre(2)
    npt.assert_allclose(rule.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], rtol=1e-14)
    npt.assert_allclose(rule.weights, [1.0, 1.0], rtol=1e-14)


def test_five_point_rule_integrates_ninth_power():
    rule = gauss_legendre(5, (0.0, 20.0))
    exact = 20.0 ** 10 / 10
    assert abs(rule.integrate(rule.nodes ** 9) - exact) / exact < 1e-12


def test_exactness_up_to_twenty_nodes():
    rng = np.random.default_rng(0)
    for n in range(1, 21):
        a = rng.uniform(0.0, 2.0)
        b = a + rng.uniform(0.5, 4.0)
        rule = gauss_legendre(n, (a, b))
        for d in range(2 * n):
            exact = (b ** (d + 1) - a ** (d + 1)) / (d + 1)
            assert abs(rule.integrate(rule.nodes ** d) - exact) / exact < 1e-10, (n, d)


@pytest.mark.parametrize("n", [1, 4, 7, 20])
def test_rule_structure(n):
    rule = gauss_legendre(n, (2.0, 5.0))

    assert rule.weights.sum() == pytest.approx(3.0, abs=1e-12)
    assert np.all(rule.weights > 0)
    assert np.all(np.diff(rule.nodes) > 0)
    assert rule.nodes[0] > 2.0 and rule.nodes[-1] < 5.0
    npt.assert_allclose(rule.nodes + rule.nodes[::-1], 7.0, atol=1e-13)


@pytest.mark.parametrize("n, interval", [(0, (0.0, 1.0)), (3, (1.0, 1.0)), (3, (2.0, 1.0))])
def test_invalid_rules(n, interval):
    with pytest.raises(ValueError):
        gauss_legendre(n, interval)


def test_integrate_along_leading_axis():
    rule = gauss_legendre(3, (0.0, 1.0))
    values = np.column_stack([np.ones(3), rule.nodes, rule.nodes ** 2])
    npt.assert_allclose(rule.integrate(values), [1.0, 0.5, 1 / 3], rtol=1e-14)


def test_default_sizes_fn_and_lv():
    spec = make_basis(4, 83, (0.0, 20.0))
    assert default_quadrature_sizes(spec, 3) == (158, 5)
    assert default_quadrature_sizes(spec, 2)[1] == 4


def test_default_outer_size_never_below_order():
    spec = make_basis(4, 4, (0.0, 1.0))
    assert default_quadrature_sizes(spec, 3)[0] == 4


def test_composite_rule_cuts_at_breakpoints():
    spec = make_basis(4, 7, (0.0, 4.0))
    rule = composite_rule(spec, 0.0, 2.5, 3)

    # breakpoints 0, 1, 2, 3, 4 -> pieces [0,1], [1,2], [2,2.5]
    assert len(rule.nodes) == 9
    assert rule.weights.sum() == pytest.approx(2.5, abs=1e-13)
    assert rule.integrate(rule.nodes ** 5) == pytest.approx(2.5 ** 6 / 6, rel=1e-13)


def test_inner_rules_start_at_domain_left_end():
    spec = make_basis(4, 10, (0.0, 6.0))
    composite = inner_rule(spec, 4.3, 4)
    single = inner_rule(spec, 4.3, 4, 'single')

    assert composite.interval == (0.0, 4.3)
    assert single.interval == (0.0, 4.3)
    assert len(single.nodes) == 4
    with pytest.raises(ValueError):
        inner_rule(spec, 4.3, 4, 'adaptive')


@pytest.mark.parametrize("scheme", ['composite', 'single'])
def test_plan_inner_integrals(scheme):
    spec = make_basis(4, 12, (0.0, 5.0))
    plan = build_plan(spec, 15, 4, scheme)

    assert plan.M == 15
    assert len(plan.inner) == 15
    for m, rule in enumerate(plan.inner):
        assert rule.interval == (0.0, plan.outer.nodes[m])
    # every inner rule integrates t^3 on [0, xi_m] exactly
    npt.assert_allclose(plan.inner_weights @ plan.inner_nodes ** 3, plan.outer.nodes ** 4 / 4, rtol=1e-12)
    assert plan.basis_at_inner.values.shape == (len(plan.inner_nodes), 12)
    assert plan.basis_at_outer.values.shape == (15, 12)
    npt.assert_allclose(plan.basis_at_zero, np.eye(12)[0], atol=1e-15)
    npt.assert_allclose(plan.basis_at_end, np.eye(12)[-1], atol=1e-15)


def test_composite_plan_shares_inner_nodes():
    spec = make_basis(4, 12, (0.0, 5.0))
    composite = build_plan(spec, 40, 4, 'composite')
    single = build_plan(spec, 40, 4, 'single')

    assert len(composite.inner_nodes) < 40 * len(composite.inner[-1].nodes)
    assert len(single.inner_nodes) == 40 * 4


def test_plan_is_deterministic():
    spec = make_basis(4, 20, (0.0, 10.0))
    first = build_plan(spec, 30, 5)
    second = build_plan(spec, 30, 5)

    npt.assert_array_equal(first.outer.nodes, second.outer.nodes)
    npt.assert_array_equal(first.inner_nodes, second.inner_nodes)
    npt.assert_array_equal(first.inner_weights, second.inner_weights)
    npt.assert_array_equal(first.basis_at_inner.values, second.basis_at_inner.values)


def test_invalid_plan_sizes():
    spec = make_basis(4, 8, (0.0, 1.0))
    with pytest.raises(ValueError):
        build_plan(spec, 0, 3)
    with pytest.raises(ValueError):
        build_plan(spec, 5, 3, 'trapezoid')
