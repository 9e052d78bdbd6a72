from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mcspai import (
    AugmentationMode,
    CsrMatrix,
    DegenerateDiagonalError,
    DominanceError,
    augment_and_split,
    inf_norm,
    transition_probabilities,
)


@st.composite
def nonzero_matrices(draw, max_n=10, integer=False):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    dens = draw(st.floats(0.1, 1.0))
    rng = np.random.default_rng(seed)
    if integer:
        a = rng.integers(-9, 10, (n, n)).astype(float)
    else:
        a = rng.uniform(-1.0, 1.0, (n, n)) * 10.0 ** rng.integers(-3, 4)
    a[rng.random((n, n)) >= dens] = 0.0
    m = CsrMatrix.from_dense(a)
    assume(m.nnz > 0)
    return m


alphas = st.floats(1.0 + 1e-6, 10.0)


class TestExamples:
    @pytest.mark.parametrize("mode", list(AugmentationMode))
    def test_identity(self, mode):
        s = augment_and_split(CsrMatrix.identity(2), 1.0, mode)
        np.testing.assert_array_equal(s.b_hat.to_dense(), 2 * np.eye(2))
        np.testing.assert_array_equal(s.b1_diag, [2.0, 2.0])
        np.testing.assert_array_equal(s.s_diag, [1.0, 1.0])
        assert s.a.nnz == 0 and s.p.nnz == 0
        assert s.a_norm == 0.0

    def test_two_by_two(self, small_b):
        s = augment_and_split(small_b, 1.0)
        assert s.b_norm == 7.0
        np.testing.assert_array_equal(s.b_hat.to_dense(), [[8.0, -2.0], [3.0, 11.0]])
        np.testing.assert_array_equal(s.a.to_dense(), [[0.0, 0.25], [-3.0 / 11.0, 0.0]])
        assert s.a_norm == 3.0 / 11.0
        np.testing.assert_array_equal(s.s_diag, [7.0, 7.0])

    def test_negative_diagonal_sign_aware(self):
        s = augment_and_split(CsrMatrix.from_dense(np.diag([-1.0, 1.0])), 2.0, "sign")
        np.testing.assert_array_equal(s.b_hat.to_dense(), np.diag([-3.0, 3.0]))
        assert s.a.nnz == 0

    def test_plain_mode_shifts_up(self):
        s = augment_and_split(CsrMatrix.from_dense(np.diag([-1.0, 1.0])), 3.0, AugmentationMode.PLAIN)
        np.testing.assert_array_equal(s.b1_diag, [2.0, 4.0])

    def test_plain_mode_degenerate_diagonal(self):
        b = CsrMatrix.from_dense([[1.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(DegenerateDiagonalError) as exc:
            augment_and_split(b, 1.0, AugmentationMode.PLAIN)
        assert exc.value.row == 1

    def test_plain_mode_dominance_failure(self):
        b = CsrMatrix.from_dense([[-10.0, 9.0], [1.0, 1.0]])
        with pytest.raises(DominanceError):
            augment_and_split(b, 0.5, AugmentationMode.PLAIN)

    def test_missing_diagonal_is_materialised(self):
        # sgn(0) = +1: the empty diagonal gains +alpha*||B||
        b = CsrMatrix.from_dense([[0.0, 1.0], [0.5, 2.0]])
        s = augment_and_split(b, 2.0)
        np.testing.assert_array_equal(s.b1_diag, [5.0, 7.0])
        np.testing.assert_array_equal(s.s_diag, [5.0, 5.0])

    def test_alpha_one_with_empty_dominant_row(self):
        # a zero diagonal in a row attaining ||B|| gives |a_ij| sums of exactly 1
        b = CsrMatrix.from_dense([[0.0, 1.0], [0.0, 1.0]])
        with pytest.raises(DominanceError):
            augment_and_split(b, 1.0)

    def test_rejects_nonpositive_alpha(self, small_b):
        with pytest.raises(ValueError):
            augment_and_split(small_b, 0.0)

    def test_mode_parse(self):
        assert AugmentationMode.parse("sign-aware") is AugmentationMode.SIGN_AWARE
        assert AugmentationMode.parse("plain") is AugmentationMode.PLAIN
        with pytest.raises(ValueError):
            AugmentationMode.parse("uniform")


class TestTransitionProbabilities:
    def test_zero_matrix(self):
        assert transition_probabilities(CsrMatrix.from_dense(np.zeros((3, 3)))).nnz == 0

    def test_row_normalisation(self):
        p = transition_probabilities(CsrMatrix.from_dense([[0.0, 0.25, -0.75], [0.0, 0.0, 0.0], [0.3, 0.0, 0.0]]))
        np.testing.assert_array_equal(p.values, [0.25, 0.75, 1.0])


class TestInvariants:
    @given(nonzero_matrices(), alphas)
    def test_split_invariants(self, b, alpha):
        s = augment_and_split(b, alpha)
        assert np.all(s.b1_diag != 0.0)
        assert s.a_norm < 1.0
        assert not np.any(s.a.row_ids() == s.a.col_idx)
        np.testing.assert_array_equal(s.p.row_ptr, s.a.row_ptr)
        np.testing.assert_array_equal(s.p.col_idx, s.a.col_idx)
        assert np.all((s.p.values > 0.0) & (s.p.values <= 1.0))
        sums = np.bincount(s.p.row_ids(), weights=s.p.values, minlength=s.n)
        nonempty = np.diff(s.p.row_ptr) > 0
        np.testing.assert_allclose(sums[nonempty], 1.0, rtol=0, atol=1e-12)
        # off-diagonal preservation
        hat, orig = s.b_hat.to_dense(), b.to_dense()
        off = ~np.eye(b.n, dtype=bool)
        np.testing.assert_array_equal(hat[off], orig[off])
        np.testing.assert_array_equal(np.diag(hat), s.b1_diag)
        # A = I - B1^-1 B_hat
        np.testing.assert_allclose(s.a.to_dense(), np.where(off, -hat / s.b1_diag[:, None], 0.0), rtol=1e-15, atol=0)

    @given(nonzero_matrices(), alphas, st.sampled_from(list(AugmentationMode)))
    def test_reconstruction(self, b, alpha, mode):
        try:
            s = augment_and_split(b, alpha, mode)
        except (DegenerateDiagonalError, DominanceError):
            assume(False)
        d = b.diagonal()
        # the stored shift is the realised one: b_hat_ii - s_ii recovers b_ii to within one ulp of b_hat_ii
        err = np.abs((s.b1_diag - s.s_diag) - d)
        assert np.all(err <= np.spacing(np.abs(s.b1_diag)))

    @given(nonzero_matrices(integer=True), st.integers(1, 8), st.sampled_from(list(AugmentationMode)))
    def test_reconstruction_exact_on_integers(self, b, alpha, mode):
        try:
            s = augment_and_split(b, float(alpha), mode)
        except (DegenerateDiagonalError, DominanceError):
            assume(False)
        np.testing.assert_array_equal(s.b1_diag - s.s_diag, b.diagonal())

    @given(nonzero_matrices(), alphas, st.integers(-20, 20))
    def test_scale_covariance_power_of_two(self, b, alpha, e):
        c = 2.0**e
        s1 = augment_and_split(b, alpha)
        s2 = augment_and_split(b.scaled(c), alpha)
        assert s1.a.equals(s2.a)
        assert s1.p.equals(s2.p)
        assert s2.b_norm == c * s1.b_norm

    @given(nonzero_matrices(), alphas, st.floats(1e-3, 1e3))
    def test_scale_covariance_general(self, b, alpha, c):
        s1 = augment_and_split(b, alpha)
        s2 = augment_and_split(b.scaled(c), alpha)
        np.testing.assert_array_equal(s1.a.col_idx, s2.a.col_idx)
        np.testing.assert_allclose(s2.a.values, s1.a.values, rtol=1e-13)
        np.testing.assert_allclose(s2.p.values, s1.p.values, rtol=1e-13)

    def test_a_norm_exact_rational(self, small_b):
        s = augment_and_split(small_b, 1.0)
        assert Fraction(s.a_norm).limit_denominator(100) == Fraction(3, 11)
        assert inf_norm(s.a) == s.a_norm
