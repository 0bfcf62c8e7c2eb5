import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefmf.kernels import (
    AugmentedInput,
    CoregMatrix,
    Fidelity,
    KernelParams,
    add_jitter,
    coreg_B,
    icm_kernel,
    icm_kernel_matrix,
    kernel_eval,
    kernel_matrix,
    kernel_rowwise,
)


def matern52_scalar(a, b, ls, sv):
    """Independent scalar reference for the Matern-5/2 closed form."""
    r = np.sqrt(sum(((ai - bi) / li) ** 2 for ai, bi, li in zip(a, b, ls)))
    s5r = np.sqrt(5.0) * r
    return sv * (1.0 + s5r + 5.0 * r * r / 3.0) * np.exp(-s5r)


class TestKernelEval:
    def test_diagonal_equals_signal_variance(self):
        p = KernelParams([0.2, 0.5, 1.0], signal_variance=2.0)
        x = np.array([0.3, 0.4, 0.9])
        assert kernel_eval(x, x, p) == pytest.approx(2.0)

    def test_se_one_lengthscale_apart(self):
        p = KernelParams([0.37], signal_variance=1.0)
        assert kernel_eval([0.0], [0.37], p) == pytest.approx(np.exp(-0.5))

    def test_matern52_matches_scalar_reference(self):
        rng = np.random.default_rng(11)
        ls = [0.3, 0.7, 1.2]
        p = KernelParams(ls, signal_variance=1.7, kind="matern52")
        for _ in range(10):
            a, b = rng.uniform(size=3), rng.uniform(size=3)
            assert kernel_eval(a, b, p) == pytest.approx(matern52_scalar(a, b, ls, 1.7), rel=1e-12)

    def test_symmetry(self):
        p = KernelParams([0.4, 0.4], kind="matern52")
        a, b = np.array([0.1, 0.9]), np.array([0.5, 0.2])
        assert kernel_eval(a, b, p) == pytest.approx(kernel_eval(b, a, p))

    def test_dimension_mismatch_rejected(self):
        p = KernelParams([0.2, 0.5])
        with pytest.raises(ValueError):
            kernel_eval([0.1], [0.2], p)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            KernelParams([0.0, 0.1])
        with pytest.raises(ValueError):
            KernelParams([0.1], signal_variance=-1.0)
        with pytest.raises(ValueError):
            KernelParams([0.1], kind="cubic")


class TestKernelMatrix:
    def test_single_point(self):
        p = KernelParams([0.3], signal_variance=1.4)
        K = kernel_matrix([[0.5]], [[0.5]], p)
        assert K.shape == (1, 1)
        assert K[0, 0] == pytest.approx(1.4)

    def test_rectangular_matches_pointwise(self):
        rng = np.random.default_rng(0)
        A, B = rng.uniform(size=(2, 3)), rng.uniform(size=(3, 3))
        p = KernelParams([0.2, 0.4, 0.8], signal_variance=0.9, kind="matern52")
        K = kernel_matrix(A, B, p)
        assert K.shape == (2, 3)
        for i in range(2):
            for j in range(3):
                assert K[i, j] == pytest.approx(kernel_eval(A[i], B[j], p))

    @pytest.mark.parametrize("kind", ["se", "matern52"])
    def test_gram_psd_over_random_sets(self, kind):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n, d = rng.integers(2, 12), rng.integers(1, 4)
            X = rng.uniform(size=(n, d))
            ls = rng.uniform(0.05, 2.0, size=d)
            p = KernelParams(ls, signal_variance=float(rng.uniform(0.1, 3.0)), kind=kind)
            K = add_jitter(kernel_matrix(X, X, p))
            K = 0.5 * (K + K.T)
            assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_rowwise_matches_matrix_diag(self):
        rng = np.random.default_rng(3)
        A, B = rng.uniform(size=(6, 2)), rng.uniform(size=(6, 2))
        p = KernelParams([0.3, 0.9], signal_variance=1.3, kind="matern52")
        expected = np.diag(kernel_matrix(A, B, p))
        assert np.allclose(kernel_rowwise(A, B, p), expected)


class TestCoregB:
    def test_identity_at_rho_zero(self):
        assert np.allclose(coreg_B(CoregMatrix(1.0, 1.0, 0.0)), np.eye(2))

    def test_half_rho_unit_scales(self):
        B = coreg_B(CoregMatrix(1.0, 1.0, 0.5))
        assert np.allclose(B, [[1.0, 0.5], [0.5, 1.0]])

    def test_eigenvalues_match_quadratic_formula(self):
        s1, s2, rho = 2.0, 0.5, 0.9
        B = coreg_B(CoregMatrix(s1, s2, rho))
        # characteristic polynomial of [[a, c], [c, b]]
        a, b, c = s1**2, s2**2, rho * s1 * s2
        disc = np.sqrt((a - b) ** 2 + 4 * c**2)
        expected = np.array([(a + b - disc) / 2, (a + b + disc) / 2])
        assert np.allclose(np.sort(np.linalg.eigvalsh(B)), expected)
        assert expected.min() > 0

    @pytest.mark.parametrize("rho", np.round(np.arange(0.0, 1.0, 0.1), 2).tolist() + [0.99])
    def test_positive_definite_on_rho_grid(self, rho):
        B = coreg_B(CoregMatrix(1.3, 0.6, float(rho)))
        assert np.linalg.eigvalsh(B).min() > 0

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            CoregMatrix(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            CoregMatrix(1.0, 1.0, -0.1)


class TestICMKernel:
    def test_same_fidelity_coincident(self):
        p = KernelParams([0.3, 0.3], signal_variance=1.0)
        c = CoregMatrix(1.0, 2.0, 0.4)
        x = AugmentedInput([0.2, 0.8], Fidelity.HF)
        assert icm_kernel(x, x, c, p) == pytest.approx(1.0)

    def test_cross_fidelity_zero_rho(self):
        p = KernelParams([0.3], signal_variance=1.0)
        c = CoregMatrix(1.5, 0.7, 0.0)
        a = AugmentedInput([0.2], Fidelity.HF)
        b = AugmentedInput([0.9], Fidelity.LF)
        assert icm_kernel(a, b, c, p) == 0.0

    def test_cross_fidelity_coincident(self):
        p = KernelParams([0.3], signal_variance=1.0)
        c = CoregMatrix(1.0, 1.0, 0.8)
        a = AugmentedInput([0.4], Fidelity.HF)
        b = AugmentedInput([0.4], Fidelity.LF)
        assert icm_kernel(a, b, c, p) == pytest.approx(0.8)

    def test_symmetry_under_swap(self):
        p = KernelParams([0.5, 0.2], signal_variance=1.1, kind="matern52")
        c = CoregMatrix(1.2, 0.8, 0.6)
        a = AugmentedInput([0.1, 0.2], Fidelity.HF)
        b = AugmentedInput([0.7, 0.6], Fidelity.LF)
        assert icm_kernel(a, b, c, p) == pytest.approx(icm_kernel(b, a, c, p))

    def test_gram_equals_entrywise_composition(self):
        rng = np.random.default_rng(5)
        X = rng.uniform(size=(7, 2))
        fid = np.array([1, 1, 1, 2, 2, 2, 2])
        p = KernelParams([0.4, 0.6], signal_variance=0.8)
        c = CoregMatrix(1.1, 0.9, 0.7)
        K = icm_kernel_matrix(X, fid, X, fid, c, p)
        B = coreg_B(c)
        for i in range(7):
            for j in range(7):
                expected = B[fid[i] - 1, fid[j] - 1] * kernel_eval(X[i], X[j], p)
                assert K[i, j] == pytest.approx(expected)

    def test_mixed_fidelity_gram_psd_rho_grid(self):
        rng = np.random.default_rng(9)
        for rho in np.arange(0.0, 1.0, 0.1):
            X = rng.uniform(size=(10, 2))
            fid = rng.integers(1, 3, size=10)
            p = KernelParams(rng.uniform(0.1, 1.0, size=2))
            c = CoregMatrix(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)), float(rho))
            K = add_jitter(icm_kernel_matrix(X, fid, X, fid, c, p))
            assert np.linalg.eigvalsh(0.5 * (K + K.T)).min() >= -1e-8


@settings(max_examples=30, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    y=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    ls=st.floats(0.05, 3.0),
    sv=st.floats(0.01, 10.0),
)
def test_kernel_bounded_by_signal_variance(x, y, ls, sv):
    p = KernelParams([ls, ls], signal_variance=sv)
    v = kernel_eval(np.array(x), np.array(y), p)
    assert 0.0 <= v <= sv + 1e-12
