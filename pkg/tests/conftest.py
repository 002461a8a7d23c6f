import math

import pytest

from annuity_survival import ModelParams, make_exponential


@pytest.fixture(scope="session")
def params():
    return ModelParams(0.15, 0.3, 1.0, 2.0)


@pytest.fixture(scope="session")
def exp1():
    return make_exponential(1.0)


def exp_test_fn():
    return (lambda u: math.exp(-u), lambda u: -math.exp(-u), lambda u: math.exp(-u))


def closed_form_exp(params, u):
    # L e^{-u} with Exp(1) jumps: int (e^{-(u+y)} - e^{-u}) e^{-y} dy = -e^{-u}/2
    return math.exp(-u) * (params.sigma**2 * u**2 / 2 - (params.a * u - params.c)
                           - params.lam / 2)
