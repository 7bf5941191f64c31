import numpy as np
import numpy.testing as npt
import pytest

from models import (JacobianValidationError, OdeModel, UnknownModelError, available_models,
                    check_jacobians, fn_model, get_model, lv_model, numeric_jacobian_model,
                    register_model, scaled_error)


def test_fn_vector_field_at_true_setting():
    model = fn_model()
    value = model.f(np.array([-1.0, 1.0]), (0.2, 0.2, 3.0), 0.0)
    npt.assert_allclose(value, [1.0, 1 / 3], rtol=1e-14)


def test_fn_jacobian_at_origin():
    model = fn_model()
    jac = model.jac_x(np.zeros(2), (0.2, 0.2, 3.0), 0.0)
    assert jac[0, 0] == pytest.approx(3.0)
    assert jac[0, 1] == pytest.approx(3.0)


def test_fn_metadata():
    model = fn_model()
    assert (model.dim_state, model.dim_params, model.poly_degree) == (2, 3, 3)
    assert model.param_names == ('a', 'b', 'c')
    assert model.state_names == ('V', 'R')
    assert model.positive_mask.all()


def test_lv_symmetric_equilibrium():
    model = lv_model()
    npt.assert_allclose(model.f(np.ones(2), np.ones(4), 0.0), [0.0, 0.0], atol=1e-15)


def test_lv_at_reported_estimates():
    model = lv_model()
    x = np.array([24.27, 12.22])
    theta = (0.720, 0.028, 0.496, 0.013)
    expected = [0.720 * 24.27 - 0.028 * 24.27 * 12.22, -0.496 * 12.22 + 0.013 * 24.27 * 12.22]

    value = model.f(x, theta, 0.0)
    npt.assert_allclose(value, expected, rtol=1e-14)
    assert value[0] == pytest.approx(9.1701, abs=1e-3)
    assert value[1] == pytest.approx(-2.2056, abs=1e-3)


def test_lv_parameter_jacobian_rows():
    model = lv_model()
    x = np.array([2.0, 3.0])
    jac = model.jac_theta(x, np.ones(4), 0.0)
    npt.assert_allclose(jac, [[2.0, -6.0, 0.0, 0.0], [0.0, 0.0, -3.0, 6.0]])


def test_vector_field_broadcasts_over_leading_axes():
    model = fn_model()
    x = np.random.default_rng(0).normal(size=(5, 7, 2))
    theta = (0.2, 0.2, 3.0)

    assert model.f(x, theta).shape == (5, 7, 2)
    assert model.jac_x(x, theta).shape == (5, 7, 2, 2)
    assert model.jac_theta(x, theta).shape == (5, 7, 2, 3)
    npt.assert_allclose(model.f(x, theta)[3, 4], model.f(x[3, 4], theta))


@pytest.mark.parametrize("name", ['fn', 'lv'])
def test_shipped_jacobians_pass(name):
    report = check_jacobians(get_model(name), trials=100, seed=0)
    assert report.max_error < 1e-6
    assert report.trials == 100


def test_scaled_error_is_absolute_below_one_and_relative_above():
    npt.assert_allclose(scaled_error(np.array([1e-3, 100.0]), np.array([2e-3, 101.0])), [1e-3, 1 / 101])
    assert scaled_error(np.zeros(1), np.zeros(1))[0] == 0.0

def test_wrong_jacobian_is_rejected():
    good = fn_model()
    bad = OdeModel(name='broken', dim_state=2, dim_params=3, f=good.f, jac_x=lambda x, theta, t=0.0: 2 * good.jac_x(x, theta, t),
                   jac_theta=good.jac_theta, param_positive=(True, True, True), poly_degree=3)

    with pytest.raises(JacobianValidationError) as excinfo:
        check_jacobians(bad, trials=5)
    assert excinfo.value.max_error > 1e-5


def test_numeric_jacobian_fallback_matches_analytic():
    reference = lv_model()
    model = numeric_jacobian_model('lv_numeric', reference.f, dim_state=2, dim_params=4, poly_degree=2)
    x = np.array([1.5, 0.7])
    theta = np.array([0.9, 0.4, 1.1, 0.3])

    npt.assert_allclose(model.jac_x(x, theta), reference.jac_x(x, theta), atol=1e-8)
    npt.assert_allclose(model.jac_theta(x, theta), reference.jac_theta(x, theta), atol=1e-8)
    assert model.param_names == ('theta1', 'theta2', 'theta3', 'theta4')
    assert model.state_names == ('x1', 'x2')


def test_param_positive_length_is_checked():
    good = fn_model()
    with pytest.raises(ValueError):
        OdeModel(name='bad', dim_state=2, dim_params=3, f=good.f, jac_x=good.jac_x,
                 jac_theta=good.jac_theta, param_positive=(True,), poly_degree=3)


def test_registry_lookup_and_aliases():
    assert {'fn', 'lv'} <= set(available_models())
    assert get_model('FN').name == 'fn'
    assert get_model('lotka-volterra').name == 'lv'
    with pytest.raises(UnknownModelError):
        get_model('sir')


def test_register_user_model():
    def decay():
        return numeric_jacobian_model('decay_test', lambda x, theta, t=0.0: -theta[0] * x,
                                      dim_state=1, dim_params=1, poly_degree=1)

    register_model('Decay_Test', decay)
    assert 'decay_test' in available_models()
    assert get_model('decay_test').dim_state == 1
    with pytest.raises(TypeError):
        register_model('not_callable', 3)
