import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffrnn.activations import KINDS, DiffusedActivation, mc_convolution_oracle
from diffrnn.exceptions import DomainError, UnsupportedOperationError

ERF = DiffusedActivation("erf", a=1.0)
finite_x = st.floats(-6, 6, allow_nan=False)
sigmas = st.floats(0.0, 3.0, allow_nan=False)


def central_diff(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


class TestDiffused:
    def test_erf_odd_at_origin(self):
        assert ERF.diffused(0.0, 1.0) == 0.0

    def test_relu_at_origin(self):
        assert DiffusedActivation("relu").diffused(0.0, 1.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-14)
        assert DiffusedActivation("relu").diffused(0.0, 1.0) == pytest.approx(0.39894, abs=1e-5)

    def test_erf_value_matches_formula(self):
        assert ERF.diffused(1.0, 1.0) == pytest.approx(math.erf(1 / math.sqrt(3)), rel=1e-15)
        assert ERF.diffused(1.0, 1.0) == pytest.approx(0.5858, abs=1e-4)

    def test_erf_value_matches_monte_carlo(self):
        mean, se = mc_convolution_oracle(ERF, 1, 1.0, 1.0, 1_000_000, seed=11)
        assert abs(ERF.diffused(1.0, 1.0) - mean) <= 3 * se

    def test_table_formulas(self):
        x, s = 0.7, 0.4
        assert DiffusedActivation("sign").diffused(x, s) == pytest.approx(math.erf(x / (math.sqrt(2) * s)))
        assert DiffusedActivation("erf", 2.5).diffused(x, s) == pytest.approx(
            math.erf(2.5 * x / math.sqrt(1 + 2 * (2.5 * s) ** 2))
        )
        assert DiffusedActivation("tanh").diffused(x, s) == pytest.approx(
            math.tanh(x / math.sqrt(1 + math.pi / 2 * s * s))
        )
        relu = s / math.sqrt(2 * math.pi) * math.exp(-x * x / (2 * s * s)) + 0.5 * x * (
            1 + math.erf(x / (math.sqrt(2) * s))
        )
        assert DiffusedActivation("relu").diffused(x, s) == pytest.approx(relu, rel=1e-14)

    @pytest.mark.parametrize("kind", KINDS)
    def test_sigma_zero_reduces_to_original(self, kind):
        act = DiffusedActivation(kind)
        x = np.linspace(-4, 4, 81)
        expected = {"erf": np.array([math.erf(v) for v in x]), "sign": np.sign(x), "tanh": np.tanh(x), "relu": np.maximum(x, 0)}[kind]
        got = act.diffused(x, 0.0)
        assert np.max(np.abs(got - expected)) <= 1e-15

    @pytest.mark.parametrize("bad", [-1.0, math.nan, math.inf])
    def test_bad_sigma(self, bad):
        with pytest.raises(DomainError):
            ERF.diffused(0.3, bad)

    def test_nonfinite_x(self):
        with pytest.raises(DomainError):
            ERF.diffused(math.inf, 1.0)
        with pytest.raises(DomainError):
            ERF.diffused(np.array([0.0, math.nan]), 1.0)

    def test_sign_at_zero_zero_sigma(self):
        assert DiffusedActivation("sign").diffused(0.0, 0.0) == 0.0

    def test_vector_input_is_elementwise(self):
        x = np.array([-1.0, 0.2, 3.0])
        np.testing.assert_array_equal(ERF.diffused(x, 0.5), [ERF.diffused(v, 0.5) for v in x])

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            DiffusedActivation("softplus")
        with pytest.raises(DomainError):
            DiffusedActivation("erf", a=0.0)

    @settings(max_examples=200, deadline=None)
    @given(kind=st.sampled_from(KINDS), x=finite_x, dx=st.floats(1e-3, 2.0), s=sigmas)
    def test_monotone(self, kind, x, dx, s):
        act = DiffusedActivation(kind)
        assert act.diffused(x + dx, s) >= act.diffused(x, s) - 1e-15

    @settings(max_examples=200, deadline=None)
    @given(kind=st.sampled_from(["erf", "sign", "tanh"]), x=finite_x, s=sigmas)
    def test_bounded_and_odd(self, kind, x, s):
        act = DiffusedActivation(kind)
        v = act.diffused(x, s)
        assert abs(v) <= 1.0
        assert act.diffused(-x, s) == pytest.approx(-v, abs=1e-15)


class TestDiffusedSquare:
    def test_origin_zero_sigma(self):
        assert ERF.diffused_sq(0.0, 0.0) == 0.0

    def test_origin_unit_sigma(self):
        expected = 1 - math.sqrt(math.pi) / math.sqrt(math.pi + 8)
        assert ERF.diffused_sq(0.0, 1.0) == pytest.approx(expected, rel=1e-15)
        assert ERF.diffused_sq(0.0, 1.0) == pytest.approx(0.4690, abs=1e-4)

    def test_against_monte_carlo(self):
        mean, _ = mc_convolution_oracle(ERF, 2, 1.5, 0.5, 1_000_000, seed=5)
        assert abs(ERF.diffused_sq(1.5, 0.5) - mean) <= 0.01

    def test_erf_square_surrogate_error(self):
        x = np.linspace(-3, 3, 60001)
        from scipy.special import erf

        assert np.max(np.abs(erf(x) ** 2 - (1 - np.exp(-4 * x**2 / math.pi)))) <= 0.012

    def test_sigma_zero_is_exact_square(self):
        x = np.linspace(-3, 3, 61)
        np.testing.assert_array_equal(ERF.diffused_sq(x, 0.0), np.asarray(ERF.original(x)) ** 2)

    def test_sign_square_is_one(self):
        np.testing.assert_array_equal(DiffusedActivation("sign").diffused_sq(np.linspace(-2, 2, 9), 0.3), 1.0)

    @pytest.mark.parametrize("kind", ["tanh", "relu"])
    def test_unsupported(self, kind):
        with pytest.raises(UnsupportedOperationError):
            DiffusedActivation(kind).diffused_sq(0.5, 0.5)
        with pytest.raises(UnsupportedOperationError):
            DiffusedActivation(kind).diffused_sq_deriv(0.5, 0.5)

    @settings(max_examples=200, deadline=None)
    @given(x=finite_x, s=sigmas, a=st.floats(0.2, 4.0))
    def test_range_and_variance_nonnegative(self, x, s, a):
        act = DiffusedActivation("erf", a)
        q = act.diffused_sq(x, s)
        assert 0.0 <= q <= 1.0
        assert q - act.diffused(x, s) ** 2 >= -1e-3


class TestDerivatives:
    def test_erf_origin(self):
        assert ERF.diffused_deriv(0.0, 0.0) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-15)
        assert ERF.diffused_deriv(0.0, 1.0) == pytest.approx(2 / (math.sqrt(math.pi) * math.sqrt(3)), rel=1e-15)
        fd = central_diff(lambda v: ERF.diffused(v, 1.0), 0.0)
        assert ERF.diffused_deriv(0.0, 1.0) == pytest.approx(fd, rel=1e-8)
        assert ERF.diffused_deriv(0.0, 1.0) == pytest.approx(0.6515, abs=1e-4)

    @pytest.mark.parametrize("kind", ["erf", "sign", "tanh"])
    def test_saturation(self, kind):
        assert DiffusedActivation(kind).diffused_deriv(1e3, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_square_derivative(self):
        for s in (0.0, 0.3, 2.0):
            assert ERF.diffused_sq_deriv(0.0, s) == 0.0
        assert ERF.diffused_sq_deriv(1e3, 0.3) == pytest.approx(0.0, abs=1e-12)
        fd = central_diff(lambda v: ERF.diffused_sq(v, 0.3), 0.7)
        assert ERF.diffused_sq_deriv(0.7, 0.3) == pytest.approx(fd, rel=1e-6)

    def test_sign_zero_sigma_undefined(self):
        with pytest.raises(DomainError):
            DiffusedActivation("sign").diffused_deriv(0.0, 0.0)

    @pytest.mark.parametrize(
        "kind,fn",
        [(k, "diffused_deriv") for k in KINDS] + [("erf", "diffused_sq_deriv"), ("sign", "diffused_sq_deriv")],
    )
    def test_match_finite_differences(self, kind, fn):
        act = DiffusedActivation(kind, a=1.3)
        base = act.diffused if fn == "diffused_deriv" else act.diffused_sq
        rng = np.random.default_rng(42)
        for x, s in zip(rng.uniform(-2.5, 2.5, 40), rng.uniform(0.05, 2.0, 40)):
            analytic = getattr(act, fn)(x, s)
            fd = central_diff(lambda v: base(v, s), x)
            assert abs(analytic - fd) <= 1e-6 * max(abs(analytic), abs(fd), 1e-3)

    def test_origin_slope_decreases_with_sigma(self):
        grid = np.linspace(0, 5, 51)
        slopes = [ERF.diffused_deriv(0.0, s) for s in grid]
        assert all(b < a for a, b in zip(slopes, slopes[1:]))


class TestOracle:
    def test_symmetry(self):
        mean, se = mc_convolution_oracle(DiffusedActivation("sign"), 1, 0.0, 0.8, 100_000, seed=3)
        assert abs(mean) <= 3 * se

    def test_deterministic(self):
        assert mc_convolution_oracle(ERF, 2, 0.3, 1.0, 5000, seed=9) == mc_convolution_oracle(ERF, 2, 0.3, 1.0, 5000, seed=9)

    def test_tanh_approximation(self):
        mean, _ = mc_convolution_oracle(DiffusedActivation("tanh"), 1, 0.8, 1.0, 1_000_000, seed=4)
        assert abs(mean - math.tanh(0.8 / math.sqrt(1 + math.pi / 2))) <= 0.02

    def test_guards(self):
        with pytest.raises(DomainError):
            mc_convolution_oracle(ERF, 1, 0.0, 1.0, 999)
        with pytest.raises(DomainError):
            mc_convolution_oracle(ERF, 3, 0.0, 1.0, 5000)
