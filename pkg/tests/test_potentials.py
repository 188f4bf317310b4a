"""Double-well pieces: h and derivatives, proximal map, Moreau-Yosida envelope."""

import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from quenchlab import kernels
from quenchlab.potentials import (
    ConcavePart,
    DomainError,
    LogQuench,
    ObstaclePenalty,
    h_prime,
    h_second,
    h_value,
    moreau_yosida_prime,
    moreau_yosida_value,
    obstacle_default,
    prox,
)

_r = sp.symbols("r")
_h = (1 + _r) * sp.log(1 + _r) + (1 - _r) * sp.log(1 - _r)
H1 = sp.lambdify(_r, sp.diff(_h, _r))
H2 = sp.lambdify(_r, sp.diff(_h, _r, 2))

interior = st.floats(-0.999999, 0.999999, allow_nan=False)


def test_h_reference_values():
    assert h_value(0.0) == 0.0
    assert h_value(1.0) == pytest.approx(2 * math.log(2))
    assert h_value(-1.0) == pytest.approx(2 * math.log(2))
    assert h_value(0.5) == pytest.approx(1.5 * math.log(1.5) + 0.5 * math.log(0.5))


def test_h_domain_errors():
    with pytest.raises(DomainError):
        h_value(1.0 + 1e-12)
    with pytest.raises(DomainError):
        h_prime(1.0)
    with pytest.raises(DomainError):
        h_second(np.array([0.0, -1.0]))


@settings(max_examples=60, deadline=None)
@given(interior)
def test_derivatives_match_symbolic(r):
    assert h_prime(r) == pytest.approx(H1(r), rel=1e-12, abs=1e-14)
    assert h_second(r) == pytest.approx(H2(r), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(interior)
def test_h_is_even_convex(r):
    assert h_value(r) == pytest.approx(h_value(-r), abs=1e-15)
    assert h_prime(r) == pytest.approx(-h_prime(-r), abs=1e-14)
    assert h_second(r) >= 2.0


def test_concave_part():
    F = ConcavePart(c1=0.3, c2=0.5)
    assert F.value(2.0) == pytest.approx(0.3 - 2.0)
    assert F.prime(2.0) == pytest.approx(-2.0)
    assert F.second() == -1.0
    with pytest.raises(ValueError):
        ConcavePart(c2=0.0)


def test_log_quench_scaling_and_bounds():
    phi = np.linspace(-0.9, 0.9, 7)
    d1, d2 = LogQuench(0.25).derivs(phi)
    np.testing.assert_allclose(d1, 0.25 * h_prime(phi), rtol=1e-13)
    np.testing.assert_allclose(d2, 0.25 * h_second(phi), rtol=1e-13)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            LogQuench(bad)


def test_obstacle_penalty_derivatives():
    phi = np.array([-1.5, -1.0, 0.2, 1.0, 1.25])
    d1, d2 = ObstaclePenalty(eps=0.01).derivs(phi)
    np.testing.assert_allclose(d1, [-50.0, 0.0, 0.0, 0.0, 25.0])
    np.testing.assert_allclose(d2, [100.0, 0.0, 0.0, 0.0, 100.0])


def test_obstacle_continuation_schedule():
    mode = obstacle_default()
    assert mode.continuation == (1e-2, 1e-3, 1e-4)
    assert ObstaclePenalty(eps=1e-2, eps_schedule=(1e-3,)).continuation == (1e-2,)
    with pytest.raises(ValueError):
        ObstaclePenalty(eps=0.0)


# ---- proximal map --------------------------------------------------------------


def brute_prox(r, alpha, eps):
    obj = lambda s: alpha * h_value(s) + (r - s) ** 2 / (2 * eps)  # noqa: E731
    res = minimize_scalar(obj, bounds=(-1.0, 1.0), method="bounded", options={"xatol": 1e-13})
    return res.x


@pytest.mark.parametrize("r", [-3.0, -0.7, 0.0, 0.4, 1.0, 2.5])
@pytest.mark.parametrize("alpha,eps", [(0.1, 0.01), (0.5, 1.0), (1e-3, 1e-4)])
def test_prox_matches_brute_force(r, alpha, eps):
    assert prox(r, alpha, eps) == pytest.approx(brute_prox(r, alpha, eps), abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(
    r=st.floats(-50, 50),
    alpha=st.floats(1e-4, 1.0),
    eps=st.floats(1e-6, 1.0),
)
def test_prox_optimality_condition(r, alpha, eps):
    s = prox(r, alpha, eps)
    assert -1.0 < s < 1.0

    def resid(x):
        return eps * alpha * h_prime(x) + x - r

    # the root must be bracketed within 16 ulps of s, unless it lies
    # closer to ±1 than the last representable double inside the interval
    top = np.nextafter(1.0, 0.0)
    ulp = abs(np.spacing(s))
    lo = max(s - 16 * ulp, -top)
    hi = min(s + 16 * ulp, top)
    tol = 1e-12 * (1 + abs(r))
    assert resid(lo) <= tol or lo == -top
    assert resid(hi) >= -tol or hi == top


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(-10, 10),
    b=st.floats(-10, 10),
    alpha=st.floats(1e-3, 1.0),
    eps=st.floats(1e-4, 1.0),
)
def test_prox_monotone_and_nonexpansive(a, b, alpha, eps):
    sa, sb = prox(a, alpha, eps), prox(b, alpha, eps)
    assert (sa - sb) * (a - b) >= -1e-15
    assert abs(sa - sb) <= abs(a - b) + 1e-12


def test_moreau_yosida_plain_obstacle():
    r = np.array([-2.0, 0.5, 1.5])
    np.testing.assert_allclose(moreau_yosida_prime(r, 0.0, 0.5), [-2.0, 0.0, 1.0])
    np.testing.assert_allclose(moreau_yosida_value(r, 0.0, 0.5), [1.0, 0.0, 0.25])


@pytest.mark.parametrize("r", [-1.7, -0.3, 0.0, 0.8, 1.4])
def test_moreau_yosida_prime_is_derivative_of_value(r):
    alpha, eps, d = 0.2, 0.05, 1e-5
    fd = (moreau_yosida_value(r + d, alpha, eps) - moreau_yosida_value(r - d, alpha, eps)) / (2 * d)
    assert moreau_yosida_prime(r, alpha, eps) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_moreau_yosida_envelope_second_derivative():
    mode = ObstaclePenalty(eps=0.05, alpha=0.2)
    r, d = np.array([0.3, 1.2]), 1e-6
    fd = (mode.derivs(r + d)[0] - mode.derivs(r - d)[0]) / (2 * d)
    np.testing.assert_allclose(mode.derivs(r)[1], fd, rtol=1e-5)


def test_moreau_yosida_argument_checks():
    with pytest.raises(ValueError):
        moreau_yosida_prime(0.0, 0.1, 0.0)
    with pytest.raises(ValueError):
        moreau_yosida_prime(0.0, -0.1, 1.0)


# ---- numba and numpy kernels agree ---------------------------------------------------


def test_kernel_variants_agree():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(9, 7))
    np.testing.assert_allclose(
        kernels.laplacian_numba(v, 0.3, 0.2), kernels.laplacian_numpy(v, 0.3, 0.2), rtol=1e-13
    )
    phi = rng.uniform(-0.99, 0.99, size=(9, 7))
    for a, b in zip(kernels.log_derivs_numba(phi, 0.1), kernels.log_derivs_numpy(phi, 0.1)):
        np.testing.assert_allclose(a, b, rtol=1e-13)
    big = 2 * phi
    for a, b in zip(kernels.penalty_derivs_numba(big, 1e-3), kernels.penalty_derivs_numpy(big, 1e-3)):
        np.testing.assert_allclose(a, b, rtol=1e-13)
    r = rng.uniform(-4, 4, size=50)
    np.testing.assert_allclose(
        kernels.prox_log_numba(r, 0.05, 0.01)[0], kernels.prox_log_numpy(r, 0.05, 0.01)[0], atol=1e-14
    )
