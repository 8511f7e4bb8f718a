import numpy as np
import pytest

import reference_values as ref
from conftest import load_pm
from parsimony import densela
from parsimony.densela import DimensionError
from parsimony.oracle import PolyCoeffs, ProbeError, det_poly_along_class, fd_gradient, mp_axiom_check, real_roots
from parsimony.partialmat import PartialMatrix, assemble, build_pattern, gradient

TIED_2X2 = PartialMatrix(build_pattern([[2, None], [None, 3]], [[(0, 1), (1, 0)]]))


class TestFiniteDifferences:
    def test_tied_2x2(self):
        assert fd_gradient(TIED_2X2, [1.0]) == pytest.approx([-0.4], abs=1e-9)

    def test_stationary_point(self):
        pm = PartialMatrix(build_pattern(ref.EX2_MATRIX, ref.EX2_CLASSES))
        assert np.max(np.abs(fd_gradient(pm, ref.EX2_COMPLETIONS[3]))) < 1e-8

    def test_rectangular(self):
        pm = load_pm("rect_3x5.json")
        x = np.array([0.4, -0.2, 1.1])
        g = gradient(pm, x)
        assert np.max(np.abs(fd_gradient(pm, x) - g)) <= 1e-5 * np.max(np.abs(g))

    def test_probe_error_names_coordinate(self):
        # det = 4 - x^2; with h = 0.5 the probe from x = 1 lands exactly on x = 2
        pm = PartialMatrix(build_pattern([[1, None], [None, 4]], [[(0, 1), (1, 0)]]))
        with pytest.raises(ProbeError) as info:
            fd_gradient(pm, [1.0], h=0.5)
        assert info.value.coordinate == 0


class TestDetPolynomial:
    def test_constant_cofactor(self):
        pm = PartialMatrix(build_pattern([[2, None], [0, 3]]))
        p = det_poly_along_class(pm, [0.0], 0)
        np.testing.assert_allclose(p, [6.0, 0.0], atol=1e-12)
        assert p.degree == 0

    def test_tied_quadratic(self):
        np.testing.assert_allclose(det_poly_along_class(TIED_2X2, [0.0], 0), [6.0, 0.0, -1.0], atol=1e-12)

    def test_example1_derivative_root(self):
        pm = load_pm("example1.json")
        p = det_poly_along_class(pm, [0.0], 0)
        roots = real_roots(p.derivative())
        assert roots == pytest.approx([ref.EX1_X_DEMPSTER], abs=1e-9)

    def test_reproduces_det(self):
        rng = np.random.default_rng(0)
        pm = PartialMatrix(build_pattern(ref.EX2_MATRIX, [[(0, 2), (2, 0), (1, 3)], [(3, 1)]]))
        x = np.array([0.0, 0.7])
        p = det_poly_along_class(pm, x, 0)
        for t in rng.uniform(-5, 5, size=10):
            sigma = assemble(pm, [t, x[1]])
            assert p(t) == pytest.approx(densela.det(sigma), abs=1e-9 * max(1.0, np.max(np.abs(sigma)) ** 4))

    def test_rectangular_refused(self):
        with pytest.raises(DimensionError):
            det_poly_along_class(load_pm("rect_2x3.json"), [0.0, 0.0], 0)


class TestRealRoots:
    def test_quadratic(self):
        np.testing.assert_allclose(real_roots([-6.0, 0.0, 1.0]), [-np.sqrt(6), np.sqrt(6)])

    def test_linear(self):
        np.testing.assert_allclose(real_roots([0.0, 1.0]), [0.0])

    def test_no_real_roots(self):
        assert real_roots([1.0, 0.0, 1.0]).size == 0

    def test_cubic_via_companion(self):
        # (t - 1)(t + 2)(t - 3) = t^3 - 2t^2 - 5t + 6
        np.testing.assert_allclose(real_roots([6.0, -5.0, -2.0, 1.0]), [-2.0, 1.0, 3.0], atol=1e-12)

    def test_quartic_with_complex_pair(self):
        # (t^2 + 1)(t - 2)(t + 0.5)
        p = np.polynomial.polynomial.polyfromroots([1j, -1j, 2.0, -0.5]).real
        np.testing.assert_allclose(real_roots(p), [-0.5, 2.0], atol=1e-12)

    def test_trailing_zeros_trimmed(self):
        np.testing.assert_allclose(real_roots([-4.0, 2.0, 0.0, 0.0]), [2.0])

    def test_degree_zero(self):
        with pytest.raises(ValueError):
            real_roots([3.0])

    def test_poly_helpers(self):
        p = PolyCoeffs([1.0, 2.0, 3.0])
        assert p(2.0) == 17.0
        np.testing.assert_array_equal(p.derivative(), [2.0, 6.0])
        assert p.degree == 2


class TestAxiomCheck:
    def test_inverse(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        assert mp_axiom_check(a, densela.inverse(a)) < 1e-10

    def test_row_vector(self):
        assert mp_axiom_check([[3.0, 4.0]], [[3 / 25], [4 / 25]]) < 1e-15

    def test_random_3x5(self):
        a = np.random.default_rng(1).normal(size=(3, 5))
        assert mp_axiom_check(a, densela.pinv_frr(a)) < 1e-10

    def test_detects_a_wrong_candidate(self):
        a = np.random.default_rng(2).normal(size=(2, 4))
        assert mp_axiom_check(a, a.T) > 1e-3

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            mp_axiom_check(np.ones((2, 3)), np.ones((2, 3)))
