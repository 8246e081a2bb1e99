import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from epunmix.kernels import (
    LOGIT_MAX,
    PROB_EPS,
    DegenerateCavityError,
    Gaussian1D,
    SaturatedProbabilityError,
    clamp_logit,
    gaussian_divide,
    gaussian_multiply,
    log_logistic,
    log_std_normal_cdf,
    logistic,
    logit,
    std_normal_cdf,
    trunc_gauss_moments,
)

# (mu, tau) -> (log Z, mean, var) from mpmath quadrature at 40 digits
TRUNC_FROZEN = {
    (0.0, 1.0): (-0.6931471805599453, 0.7978845608028654, 0.3633802276324187),
    (-10.0, 1.0): (-53.23128515051247, 0.09809323396251196, 0.009445377825656262),
    (2.5, 0.3): (-2.5051691161287528e-06, 2.5000065398972944, 0.29998365021399415),
    (-3.0, 2.0): (-4.077639270111498, 0.5088008017795277, 0.21471933876992663),
    (-12.0, 1.0): (-75.4106730015688, 0.08221417525428433, 0.006670726335845864),
    (-8.0, 1.0): (-35.01343715991455, 0.12136811223611269, 0.014324883443340911),
    (-7.99, 1.0): (-34.93227276199891, 0.12151152584879082, 0.014357857554059907),
}


class TestNormalCdf:
    def test_values(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(40.0) == 1.0
        assert std_normal_cdf(-1.0) == pytest.approx(0.15865525393145705, rel=1e-12)

    @pytest.mark.parametrize("t", [-7.5, -3.0, -0.4, 0.0, 1.3, 5.0])
    def test_against_quadrature(self, t):
        assert std_normal_cdf(t) == pytest.approx(oracles.normal_cdf(t), rel=1e-12, abs=1e-300)

    def test_log_domain_tail(self):
        # Phi(-40) ~ 3.66e-350 underflows; its log must not
        assert log_std_normal_cdf(-40.0) == pytest.approx(-804.6084420137538, rel=1e-12)

    def test_monotone(self):
        t = np.linspace(-12, 12, 100_000)
        assert np.all(np.diff(std_normal_cdf(t)) >= 0)


class TestLogistic:
    def test_fixed_points(self):
        assert logistic(0.0) == 0.5
        assert logit(0.5) == 0.0

    def test_deep_negative(self):
        assert logistic(-35.0) == pytest.approx(6.305116760146989e-16, rel=1e-12)
        assert log_logistic(-800.0) == pytest.approx(-800.0)

    @pytest.mark.parametrize("q", [0.0, 1.0])
    def test_saturation(self, q):
        with pytest.raises(SaturatedProbabilityError):
            logit(q)

    def test_clamp_range(self):
        assert clamp_logit(1e6) == LOGIT_MAX
        assert logistic(LOGIT_MAX) == pytest.approx(1 - PROB_EPS, abs=1e-15)

    @given(st.floats(1e-12, 1 - 1e-12))
    def test_roundtrip(self, q):
        assert logistic(logit(q)) == pytest.approx(q, rel=1e-12, abs=1e-13)

    @given(st.floats(-700, 700))
    def test_symmetry(self, p):
        assert logistic(-p) == pytest.approx(1 - logistic(p), abs=1e-15)


class TestGaussian1D:
    def test_multiply_examples(self):
        assert gaussian_multiply(Gaussian1D(0, 2), Gaussian1D(0, 2)) == Gaussian1D(0, 1)
        g = gaussian_multiply(Gaussian1D(1, 1), Gaussian1D(3, 1))
        assert (g.mean, g.var) == (2.0, 0.5)

    def test_multiply_precision_oracle(self):
        import mpmath as mp

        g = gaussian_multiply(Gaussian1D(0.3, 0.7), Gaussian1D(-1.2, 2.5))
        tau = 1 / mp.mpf("0.7") + 1 / mp.mpf("2.5")
        mean = (mp.mpf("0.3") / mp.mpf("0.7") + mp.mpf("-1.2") / mp.mpf("2.5")) / tau
        assert g.var == pytest.approx(float(1 / tau), rel=1e-14)
        assert g.mean == pytest.approx(float(mean), rel=1e-14)

    def test_divide_examples(self):
        g = gaussian_divide(Gaussian1D(2, 0.5), Gaussian1D(3, 1))
        assert (g.mean, g.var) == pytest.approx((1.0, 1.0))
        with pytest.raises(DegenerateCavityError):
            gaussian_divide(Gaussian1D(0, 1), Gaussian1D(0, 1))
        neg = gaussian_divide(Gaussian1D(0, 2), Gaussian1D(0, 1))
        assert neg.var == -2.0 and not neg.valid

    @given(
        st.floats(-50, 50), st.floats(1e-3, 1e3), st.floats(-50, 50), st.floats(1e-3, 1e3)
    )
    def test_roundtrip(self, ma, va, mb, vb):
        a, b = Gaussian1D(ma, va), Gaussian1D(mb, vb)
        back = gaussian_divide(gaussian_multiply(a, b), b)
        assert back.var == pytest.approx(va, rel=1e-10)
        assert back.mean == pytest.approx(ma, rel=1e-10, abs=1e-10 * (abs(ma) + abs(mb) * va / vb + 1))

    def test_roundtrip_bulk(self, rng):
        m = rng.uniform(-5, 5, (2, 10_000))
        v = np.exp(rng.uniform(-3, 3, (2, 10_000)))
        for i in range(0, 10_000, 97):
            a, b = Gaussian1D(m[0, i], v[0, i]), Gaussian1D(m[1, i], v[1, i])
            back = gaussian_divide(gaussian_multiply(a, b), b)
            assert back.var == pytest.approx(a.var, rel=1e-10)


class TestTruncatedMoments:
    @pytest.mark.parametrize("key", sorted(TRUNC_FROZEN))
    def test_frozen_oracle(self, key):
        log_z, mean, var = trunc_gauss_moments(*key)
        ref = TRUNC_FROZEN[key]
        assert log_z == pytest.approx(ref[0], rel=1e-10, abs=1e-12)
        assert mean == pytest.approx(ref[1], abs=1e-10)
        assert var == pytest.approx(ref[2], abs=1e-10)

    def test_closed_form_at_zero(self):
        _, mean, var = trunc_gauss_moments(0.0, 1.0)
        assert mean == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)
        assert var == pytest.approx(1 - 2 / math.pi, abs=1e-12)

    def test_far_above_zero(self):
        log_z, mean, var = trunc_gauss_moments(10.0, 1.0)
        assert abs(mean - 10.0) < 1e-20 + 1e-15 and abs(var - 1.0) < 1e-15

    @pytest.mark.parametrize("alpha", np.linspace(-12, 12, 25))
    def test_quadrature_grid(self, alpha):
        tau = 0.37
        mu = alpha * math.sqrt(tau)
        ref = oracles.trunc_moments(mu, tau)
        got = trunc_gauss_moments(mu, tau)
        np.testing.assert_allclose(got[1:], ref[1:], rtol=0, atol=1e-8)

    def test_no_overflow_deep_tail(self):
        _, mean, var = trunc_gauss_moments(np.array([-1e3, -1e6]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(mean, [1e-3, 1e-6], rtol=1e-5)
        assert np.all(var > 0) and np.all(np.isfinite(var))

    @given(st.floats(-50, 50), st.floats(1e-4, 1e4))
    def test_bounds(self, mu, tau):
        _, mean, var = trunc_gauss_moments(mu, tau)
        assert mean >= 0
        assert 0 < var <= tau * (1 + 1e-12)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_nonpositive_variance(self, tau):
        with pytest.raises(ValueError):
            trunc_gauss_moments(0.0, tau)

    def test_vectorized_matches_scalar(self, rng):
        mu = rng.uniform(-15, 15, 200)
        tau = np.exp(rng.uniform(-2, 2, 200))
        vec = trunc_gauss_moments(mu, tau)
        for i in range(0, 200, 23):
            scal = trunc_gauss_moments(mu[i], tau[i])
            assert scal == pytest.approx(tuple(v[i] for v in vec), rel=1e-15)
