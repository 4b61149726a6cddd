import math

import numpy as np
import pytest
from conftest import REF_WINDOW, central_diff, dblquad_region, prob_region, random_params
from scipy import integrate

from dtgof.errors import NumericalError, ValidationError
from dtgof.geometry import StudyWindow, in_support
from dtgof.model import (
    Copula,
    ModelParams,
    _score_raw,
    alpha,
    alpha_grad,
    density,
    expected_score_derivative,
    fisher_info,
    influence,
    kendall_tau,
    score,
    score_sign,
)
from dtgof.quadrature import support_integral

W2 = StudyWindow(2, 1)


class TestParams:
    @pytest.mark.parametrize("theta", [0.0, -1.0, 1e-7, 2e6])
    def test_theta_bounds(self, theta):
        with pytest.raises(ValidationError):
            ModelParams.product(theta)

    @pytest.mark.parametrize("vt", [1.0, -1.0, 0.9999995, 3.0])
    def test_vartheta_bounds(self, vt):
        with pytest.raises(ValidationError):
            ModelParams.fgm(0.1, vt)

    def test_product_rejects_dependence(self):
        with pytest.raises(ValidationError):
            ModelParams(Copula.PRODUCT, 0.1, 0.2)

    def test_parse_and_vector(self):
        p = ModelParams("FGM", 0.2, 0.3)
        assert p.copula is Copula.FGM and p.dim == 2
        assert np.array_equal(p.with_vector([0.4, -0.1]).vector, [0.4, -0.1])
        with pytest.raises(ValidationError):
            Copula.parse("gumbel")


class TestDensity:
    def test_product_value(self):
        p = ModelParams.product(0.5)
        assert density(p, W2, 1.0, 1.0) == pytest.approx(0.25 * math.exp(-0.5), rel=1e-15)

    @pytest.mark.parametrize("x", [0.0, 0.3, 2.0, 7.5])
    def test_midline_has_no_dependence(self, x):
        a = density(ModelParams.fgm(0.5, 0.3), W2, x, 1.0)
        b = density(ModelParams.product(0.5), W2, x, 1.0)
        assert a == pytest.approx(b, rel=1e-15)

    def test_zero_outside_s(self):
        p = ModelParams.fgm(0.5, 0.3)
        assert density(p, W2, -0.1, 1.0) == 0.0
        assert density(p, W2, 1.0, 2.1) == 0.0

    def test_integrates_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_params(rng, W2)
            upper = 60.0 / p.theta
            val, _ = integrate.dblquad(lambda x, t: density(p, W2, x, t), 0, W2.G, 0, upper,
                                       epsabs=1e-10, epsrel=1e-10)
            assert val == pytest.approx(1.0, abs=1e-6)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        x = rng.exponential(5, 10_000)
        t = rng.uniform(0, W2.G, 10_000)
        for vt in (-0.999, 0.999):
            assert np.all(density(ModelParams.fgm(0.3, vt), W2, x, t) >= 0)


class TestAlpha:
    def test_reference_product(self):
        assert alpha(ModelParams.product(0.08261), REF_WINDOW) == pytest.approx(0.0955, abs=5e-4)

    def test_reference_fgm(self):
        assert alpha(ModelParams.fgm(0.08172, 0.10256), REF_WINDOW) == pytest.approx(0.09753, abs=1e-4)

    def test_small_window_quadrature(self):
        p = ModelParams.fgm(0.5, 0.3)
        assert alpha(p, W2) == pytest.approx(prob_region(p, W2, W2.x_max, W2.G), abs=1e-10)

    def test_random_quadrature(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            p = random_params(rng, REF_WINDOW)
            ref = prob_region(p, REF_WINDOW, REF_WINDOW.x_max, REF_WINDOW.G)
            assert alpha(p, REF_WINDOW) == pytest.approx(ref, abs=1e-8)

    def test_fgm_zero_equals_product_exactly(self):
        for th in (0.01, 0.08261, 0.7, 3.0):
            assert alpha(ModelParams.fgm(th, 0.0), REF_WINDOW) == alpha(ModelParams.product(th), REF_WINDOW)

    def test_out_of_range_raises(self):
        # a vanishing study duration underflows alpha to 0
        with pytest.raises(NumericalError):
            alpha(ModelParams.product(9e5), StudyWindow(1e10, 1e-320))


class TestAlphaGrad:
    def test_product_finite_difference(self):
        p = ModelParams.product(0.1)
        fd = central_diff(lambda q: alpha(q, REF_WINDOW), p)
        assert alpha_grad(p, REF_WINDOW) == pytest.approx(fd, rel=1e-6)

    def test_fgm_finite_difference(self):
        p = ModelParams.fgm(0.08172, 0.10256)
        fd = central_diff(lambda q: alpha(q, REF_WINDOW), p)
        assert alpha_grad(p, REF_WINDOW) == pytest.approx(fd, rel=1e-5)

    def test_affine_in_vartheta(self):
        a1 = alpha(ModelParams.fgm(0.3, -0.4), W2)
        a2 = alpha(ModelParams.fgm(0.3, 0.7), W2)
        slope = alpha_grad(ModelParams.fgm(0.3, 0.1), W2)[1]
        assert a2 - a1 == pytest.approx(1.1 * slope, rel=1e-12)

    def test_random_finite_difference(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            p = random_params(rng, REF_WINDOW)
            fd = central_diff(lambda q: alpha(q, REF_WINDOW), p)
            assert alpha_grad(p, REF_WINDOW) == pytest.approx(fd, rel=1e-5, abs=1e-12)


class TestScore:
    def test_zero_outside_d(self):
        for p in (ModelParams.product(0.3), ModelParams.fgm(0.3, 0.5)):
            assert np.all(score(p, W2, 5.0, 1.0) == 0)
            assert np.all(score(p, W2, 0.5, 1.0) == 0)

    def test_midline_second_coordinate(self):
        p = ModelParams.fgm(0.4, 0.6)
        sc = score(p, W2, 1.3, 1.0)
        assert sc[1] == pytest.approx(-alpha_grad(p, W2)[1] / alpha(p, W2), rel=1e-14)

    @pytest.mark.parametrize("p", [ModelParams.fgm(0.5, 0.3), ModelParams.product(0.5),
                                   ModelParams.fgm(0.08172, 0.10256)])
    def test_zero_mean_over_d(self, p):
        w = W2 if p.theta == 0.5 else REF_WINDOW
        for k in range(p.dim):
            val = dblquad_region(lambda x, t: float(_score_raw(p, w, np.asarray(x), np.asarray(t))[k]
                                                    * density(p, w, x, t)), w, w.x_max, w.G)
            assert abs(val) < 1e-7

    def test_product_is_negative_log_likelihood_gradient(self):
        # score_sign documents the orientation; check it against d/dtheta log(f/alpha)
        for p in (ModelParams.product(0.2), ModelParams.fgm(0.2, -0.3)):
            x, t = 1.4, 0.9
            fd = central_diff(lambda q: math.log(density(q, W2, x, t) / alpha(q, W2)), p)
            assert score_sign(p) * score(p, W2, x, t) == pytest.approx(fd, rel=1e-6)

    def test_denominator_bound(self):
        rng = np.random.default_rng(4)
        t = rng.uniform(0, REF_WINDOW.G, 100_000)
        x = t + rng.uniform(0, REF_WINDOW.s, 100_000)
        for vt in (-0.95, 0.4, 0.999):
            p = ModelParams.fgm(0.1, vt)
            den = 1 + vt * (2 * np.exp(-p.theta * x) - 1) * (1 - 2 * t / REF_WINDOW.G)
            assert np.all(np.abs(den) >= 1 - abs(vt) - 1e-15)


class TestFisher:
    def test_product_closed_form_vs_quadrature(self):
        p = ModelParams.product(0.08261)
        w = REF_WINDOW
        ref = dblquad_region(lambda x, t: float(score(p, w, x, t)[0] ** 2 * density(p, w, x, t)),
                             w, w.x_max, w.G)
        assert fisher_info(p, w)[0, 0] == pytest.approx(ref, rel=1e-6)

    def test_product_small_theta_stable(self):
        # series branch of the closed form
        w = StudyWindow(1e-3, 1e-3)
        p = ModelParams.product(2.0)
        ref = support_integral(lambda x, t: _score_raw(p, w, x, t)[..., 0] ** 2 * density(p, w, x, t), w)
        assert fisher_info(p, w)[0, 0] == pytest.approx(float(ref), rel=1e-6)

    def test_fgm_zero_first_coordinate_is_product(self):
        for th in (0.08261, 0.5):
            i_f = fisher_info(ModelParams.fgm(th, 0.0), REF_WINDOW)[0, 0]
            i_p = fisher_info(ModelParams.product(th), REF_WINDOW)[0, 0]
            assert i_f == pytest.approx(i_p, rel=1e-6, abs=1e-6)

    def test_fgm_symmetric_positive_definite(self):
        info = fisher_info(ModelParams.fgm(0.5, 0.3), W2)
        assert np.array_equal(info, info.T)
        assert np.all(np.linalg.eigvalsh(info) > 0)

    @pytest.mark.parametrize("p,w", [(ModelParams.product(0.3), W2), (ModelParams.fgm(0.5, 0.3), W2),
                                     (ModelParams.fgm(0.08172, 0.10256), REF_WINDOW)])
    def test_information_matrix_equality(self, p, w):
        # Jacobian of theta' -> E_theta[psi_theta'] at theta' = theta
        def mean_score(q):
            return support_integral(lambda x, t: _score_raw(q, w, x, t) * density(p, w, x, t)[..., None], w)

        jac = np.column_stack([central_diff(mean_score, p, rel=1e-5)[k] for k in range(p.dim)])
        assert expected_score_derivative(p, w) == pytest.approx(jac, rel=1e-3, abs=1e-9)
        assert score_sign(p) * jac == pytest.approx(-fisher_info(p, w), rel=1e-3)

    def test_influence_has_inverse_information_covariance(self):
        p = ModelParams.fgm(0.5, 0.3)
        cov = support_integral(lambda x, t: (lambda f: f[..., :, None] * f[..., None, :])(
            influence(p, W2, x, t)) * density(p, W2, x, t)[..., None, None], W2)
        assert cov == pytest.approx(np.linalg.inv(fisher_info(p, W2)), rel=1e-7)


@pytest.mark.parametrize("vt,expected", [(0.10256, 0.0228), (0.0, 0.0), (0.9, 0.2)])
def test_kendall_tau(vt, expected):
    assert kendall_tau(vt) == pytest.approx(expected, abs=5e-5)


def test_kendall_tau_reference_rounding():
    assert round(kendall_tau(0.10256), 3) == 0.023


def test_kendall_tau_rejects_edge():
    with pytest.raises(ValidationError):
        kendall_tau(1.0)
