"""Channel-level tests: equivalence constants against independent
quadrature oracles, score identities against finite differences, and
envelope properties of the output kernel."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from gep_lab.kernels import (
    ACTIVATIONS,
    READOUTS,
    InternalConsistencyError,
    OutputKernel,
    compute_epsilon,
    compute_rho,
    conditional_mean_y,
    gauss_equiv_params,
    gauss_hermite_adaptive,
    gauss_hermite_expect,
    get_activation,
    get_readout,
    pout_density,
    pout_ratio,
    ratio_envelope_constant,
    scaled_readout,
    second_moment_bounds,
    u_double_prime,
    u_prime,
    u_value,
)

# Oracle values frozen from scipy.integrate.quad against the standard
# normal density (verified below to 1e-12).
TANH_RHO = 0.6057055096021589
TANH_EPS = 0.027415326035430287


def _gauss_quad(h):
    val, err = quad(lambda z: h(z) * math.exp(-0.5 * z * z)
                    / math.sqrt(2 * math.pi), -12, 12, limit=400)
    assert err < 1e-8
    return val


class TestEquivalenceConstants:
    def test_sine_closed_form(self):
        p = gauss_equiv_params(get_activation("sine"))
        assert abs(p.rho - math.exp(-0.5)) < 1e-10
        assert abs(p.epsilon - ((1 - math.exp(-2)) / 2 - math.exp(-1))) < 1e-10

    def test_identity_exact(self):
        p = gauss_equiv_params(get_activation("identity"))
        assert abs(p.rho - 1.0) < 1e-12
        assert abs(p.epsilon) < 1e-12

    def test_tanh_against_quad_oracle(self):
        phi = get_activation("tanh")
        rho_oracle = _gauss_quad(lambda z: 1 - math.tanh(z) ** 2)
        m2_oracle = _gauss_quad(lambda z: math.tanh(z) ** 2)
        assert abs(rho_oracle - TANH_RHO) < 1e-12
        assert abs(m2_oracle - rho_oracle**2 - TANH_EPS) < 1e-12
        assert abs(compute_rho(phi) - TANH_RHO) < 1e-10
        assert abs(compute_epsilon(phi) - TANH_EPS) < 1e-10

    def test_scaled_erf_against_closed_form(self):
        # E phi' = sqrt(2/pi) E e^{-z^2/2} = sqrt(2/pi)/sqrt(2) = 1/sqrt(pi)
        p = gauss_equiv_params(get_activation("scaled-erf"))
        assert abs(p.rho - 1.0 / math.sqrt(math.pi)) < 1e-10
        # E phi^2 = (2/pi) arcsin(1/2) = 1/3 for erf(z/sqrt(2)) with unit
        # input variance
        assert abs(p.second_moment - 1.0 / 3.0) < 1e-10

    def test_second_moment_consistency(self):
        for kind in ACTIVATIONS:
            p = gauss_equiv_params(get_activation(kind))
            assert p.epsilon >= 0
            assert abs(p.second_moment - (p.rho**2 + p.epsilon)) < 1e-12

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError, match="unknown activation"):
            get_activation("relu")
        with pytest.raises(ValueError, match="unknown readout"):
            get_readout("softmax")


class TestQuadrature:
    def test_polynomial_exact(self):
        # E z^4 = 3 under the standard normal
        assert abs(gauss_hermite_expect(lambda z: z**4, 10) - 3.0) < 1e-12

    def test_adaptive_matches_fixed_order(self):
        h = lambda z: np.tanh(z) ** 2
        assert abs(gauss_hermite_adaptive(h)
                   - gauss_hermite_expect(h, 200)) < 1e-12


def _kernels():
    out = []
    for kind in READOUTS:
        with np.testing.suppress_warnings() as sup:
            sup.filter(RuntimeWarning)
            out.append(OutputKernel(get_readout(kind), 0.5))
    return out


class TestOutputKernel:
    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            OutputKernel(get_readout("deterministic-tanh"), 0.0)

    def test_density_normalizes(self):
        for kernel in _kernels():
            if not math.isfinite(kernel.readout.bound):
                continue
            for x in (-0.8, 0.0, 1.3):
                mass, err = quad(lambda y: pout_density(kernel, y, x),
                                 -30, 30, limit=200)
                assert abs(mass - 1.0) < 1e-8, kernel.readout.kind

    def test_u_value_is_log_density(self):
        kernel = OutputKernel(get_readout("sign-mixture"), 0.7)
        y, x = 0.4, -0.2
        assert abs(u_value(kernel, y, x)
                   - math.log(pout_density(kernel, y, x))) < 1e-12

    def test_u_derivatives_match_finite_differences(self):
        h = 1e-5
        for kernel in _kernels():
            for y, x in [(0.3, 0.5), (-1.1, -0.4), (0.0, 1.2)]:
                fd = (u_value(kernel, y, x + h)
                      - u_value(kernel, y, x - h)) / (2 * h)
                assert abs(u_prime(kernel, y, x) - fd) < 1e-7
                d2 = (u_value(kernel, y, x + h) - 2 * u_value(kernel, y, x)
                      + u_value(kernel, y, x - h)) / h**2
                assert abs(u_double_prime(kernel, y, x) - d2) < 1e-4

    def test_pout_ratios_match_density_derivatives(self):
        kernel = OutputKernel(get_readout("deterministic-tanh"), 0.6)
        y, x, h = 0.25, -0.6, 1e-5
        p0 = pout_density(kernel, y, x)
        dy = (pout_density(kernel, y + h, x)
              - pout_density(kernel, y - h, x)) / (2 * h)
        dx = (pout_density(kernel, y, x + h)
              - pout_density(kernel, y, x - h)) / (2 * h)
        assert abs(pout_ratio(kernel, "y", y, x) - dy / p0) < 1e-6
        assert abs(pout_ratio(kernel, "x", y, x) - dx / p0) < 1e-6
        dxx = (pout_density(kernel, y, x + h) - 2 * p0
               + pout_density(kernel, y, x - h)) / h**2
        assert abs(pout_ratio(kernel, "xx", y, x) - dxx / p0) < 1e-3
        dyx = (pout_density(kernel, y + h, x + h)
               - pout_density(kernel, y + h, x - h)
               - pout_density(kernel, y - h, x + h)
               + pout_density(kernel, y - h, x - h)) / (4 * h * h)
        assert abs(pout_ratio(kernel, "yx", y, x) - dyx / p0) < 1e-3

    def test_conditional_mean_y(self):
        kernel = OutputKernel(get_readout("deterministic-tanh"), 0.5)
        xs = np.array([-1.0, 0.0, 0.7])
        assert np.allclose(conditional_mean_y(kernel, xs), np.tanh(xs),
                           atol=1e-12)
        mix = OutputKernel(get_readout("sign-mixture"), 0.5)
        # symmetric atoms make the conditional mean vanish
        assert np.allclose(conditional_mean_y(mix, xs), 0.0, atol=1e-12)

    def test_envelope_constant_finite_for_bounded(self):
        kernel = OutputKernel(get_readout("deterministic-tanh"), 0.5)
        c = ratio_envelope_constant(kernel)
        assert math.isfinite(c) and c > 0

    def test_second_moment_bounds(self):
        kernel = OutputKernel(get_readout("deterministic-tanh"), 0.5)
        up, u2 = second_moment_bounds(kernel)
        assert math.isfinite(up) and math.isfinite(u2)
        with np.testing.suppress_warnings() as sup:
            sup.filter(RuntimeWarning)
            unbounded = OutputKernel(get_readout("identity-unbounded"), 0.5)
        assert math.isinf(second_moment_bounds(unbounded)[0])


class TestScaledReadout:
    def test_scaling(self):
        base = get_readout("deterministic-tanh")
        s = scaled_readout(base, 2.5)
        x = np.array([0.3, -0.9])
        assert np.allclose(s.f(x, 0.0), 2.5 * np.tanh(x))
        assert np.allclose(s.fprime(x, 0.0),
                           2.5 * (1 - np.tanh(x) ** 2))
        assert s.support == base.support


@settings(max_examples=60, deadline=None)
@given(y=st.floats(-3, 3), x=st.floats(-3, 3),
       delta=st.floats(0.05, 4.0))
def test_score_identity_property(y, x, delta):
    """u'(y, x) equals the channel score of the Gaussian mixture."""
    kernel = OutputKernel(get_readout("sign-mixture"), delta)
    h = 1e-5
    fd = (u_value(kernel, y, x + h) - u_value(kernel, y, x - h)) / (2 * h)
    assert abs(u_prime(kernel, y, x) - fd) < 5e-6


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-4, 4), delta=st.floats(0.1, 2.0))
def test_density_positive_property(x, delta):
    kernel = OutputKernel(get_readout("deterministic-tanh"), delta)
    ys = np.linspace(-5, 5, 21)
    assert np.all(pout_density(kernel, ys, x) > 0)
