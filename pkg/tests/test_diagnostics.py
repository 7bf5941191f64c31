import numpy as np

from diagnostics import (exponential_solver_error, gradient_check_problem, linear_precision,
                         partition_of_unity, quadrature_exactness, run_property_suite)


def test_gradient_problem_layout():
    spec = gradient_check_problem('lv', 'derivative', seed=4)

    assert spec.prior_kind == 'derivative'
    assert spec.basis.num_basis == 12
    assert spec.plan.M == 24
    assert spec.data.values.shape == (21, 2)
    assert spec.dim == 4 + 2 * 12 + 2


def test_gradient_problem_is_seeded():
    first = gradient_check_problem('fn', seed=1)
    second = gradient_check_problem('fn', seed=1)
    other = gradient_check_problem('fn', seed=2)

    np.testing.assert_array_equal(first.data.values, second.data.values)
    assert not np.array_equal(first.data.values, other.data.values)


def test_numerical_building_blocks():
    assert quadrature_exactness() < 1e-10
    assert partition_of_unity() < 1e-12
    assert linear_precision() < 1e-11
    assert exponential_solver_error() < 1e-8


def test_property_suite_passes():
    results = run_property_suite(seed=0)
    names = [r.name for r in results]

    assert 'gradient lv derivative' in names
    assert 'nuts gaussian variance' in names
    assert 'linear precision' in names
    assert len(results) == 12
    assert all(r.passed for r in results), [r for r in results if not r.passed]
