import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vi2dssm.coupling import (
    CanonicalCoupling,
    build_canonical,
    commutes_with_all_permutations,
    decompose_to_canonical,
    mode_spectrum,
    permutation_matrix,
    zero_sum_basis,
)
from vi2dssm.errors import DimensionError, DomainError, SizeError

finite = st.floats(-5, 5, allow_nan=False)


def brute_force_commutes(M):
    """Literal check of M P == P M over the full symmetric group."""
    n = M.shape[0]
    for p in itertools.permutations(range(n)):
        P = np.eye(n)[list(p)]
        if not np.allclose(M @ P, P @ M, atol=1e-10, rtol=0):
            return False
    return True


def test_build_canonical_example():
    M = build_canonical(CanonicalCoupling(0.5, 0.1, 3))
    np.testing.assert_array_equal(M, [[0.6, 0.1, 0.1], [0.1, 0.6, 0.1], [0.1, 0.1, 0.6]])


def test_decompose_recovers_parameters():
    c = decompose_to_canonical(build_canonical(CanonicalCoupling(0.5, 0.1, 3)))
    assert c.alpha == pytest.approx(0.5) and c.beta == pytest.approx(0.1) and c.num_vars == 3


def test_decompose_rejects_and_names_entry():
    M = build_canonical(CanonicalCoupling(0.5, 0.1, 3))
    M[0, 1] = 0.2
    rej = decompose_to_canonical(M)
    assert not rej
    assert rej.gap == pytest.approx(0.1)
    # the first scan-order entry that differs from the reference is (1, 3)
    # once (1, 2) itself defines the off-diagonal reference
    assert rej.first in {(1, 3), (2, 1)}


def test_single_variable_is_canonical():
    c = decompose_to_canonical(np.array([[0.7]]))
    assert c and c.alpha == pytest.approx(0.7) and c.beta == 0.0


def test_validation():
    with pytest.raises(SizeError):
        CanonicalCoupling(0.1, 0.1, 0)
    with pytest.raises(DomainError):
        CanonicalCoupling(np.nan, 0.1, 2)
    with pytest.raises(DimensionError):
        decompose_to_canonical(np.ones((2, 3)))
    with pytest.raises(SizeError):
        commutes_with_all_permutations(np.eye(7))


def test_permutation_matrix_convention():
    x = np.array([10.0, 20.0, 30.0])
    perm = [2, 0, 1]
    np.testing.assert_array_equal(permutation_matrix(perm) @ x, x[perm])


@pytest.mark.parametrize("C", [2, 3, 4])
def test_commutation_matches_brute_force(C):
    r = np.random.default_rng(C)
    for trial in range(40):
        if trial % 2:
            M = build_canonical(CanonicalCoupling(r.normal(), r.normal(), C))
            if trial % 4 == 1:
                i, j = r.integers(C, size=2)
                M[i, j] += 0.5
        else:
            M = r.normal(size=(C, C))
        assert commutes_with_all_permutations(M) == brute_force_commutes(M)
        assert bool(decompose_to_canonical(M)) == brute_force_commutes(M)


@settings(max_examples=60, deadline=None)
@given(finite, finite, st.integers(1, 6))
def test_canonical_matrices_commute_and_round_trip(alpha, beta, C):
    M = build_canonical(CanonicalCoupling(alpha, beta, C))
    assert commutes_with_all_permutations(M)
    c = decompose_to_canonical(M)
    assert c
    if C == 1:
        # a 1x1 matrix only fixes alpha + beta
        assert abs(c.alpha + c.beta - (alpha + beta)) < 1e-9
    else:
        assert abs(c.alpha - alpha) < 1e-9 and abs(c.beta - beta) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(-1, 1), st.integers(1, 12))
def test_mode_spectrum_matches_lapack(alpha, beta, C):
    c = CanonicalCoupling(alpha, beta, C)
    ms = mode_spectrum(c)
    ev = np.sort(np.linalg.eigvalsh(build_canonical(c)))
    want = np.sort([ms.lambda_diff] * (C - 1) + [ms.lambda_mean])
    np.testing.assert_allclose(ev, want, atol=1e-9)
    assert ms.stable == (abs(alpha) < 1.0 and abs(alpha + C * beta) < 1.0)
    if C > 1:
        assert ms.stable == (max(abs(ev)) < 1.0) or abs(max(abs(ev)) - 1.0) < 1e-9


@pytest.mark.parametrize("alpha,beta,C,diff,mean,stable", [
    (0.9, 0.0, 10, 0.9, 0.9, True),
    (0.5, 0.1, 4, 0.5, 0.9, True),
    (0.5, 0.2, 3, 0.5, 1.1, False),
])
def test_mode_spectrum_examples(alpha, beta, C, diff, mean, stable):
    ms = mode_spectrum(CanonicalCoupling(alpha, beta, C))
    assert ms.lambda_diff == pytest.approx(diff)
    assert ms.lambda_mean == pytest.approx(mean)
    assert ms.stable is stable
    ev = np.sort(np.linalg.eigvalsh(build_canonical(CanonicalCoupling(alpha, beta, C))))
    assert ev[-1] == pytest.approx(max(diff, mean)) and ev[0] == pytest.approx(min(diff, mean))


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_zero_sum_basis(n):
    Q = zero_sum_basis(n)
    assert Q.shape == (n, max(n - 1, 0))
    np.testing.assert_allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-14)
    np.testing.assert_allclose(np.ones(n) @ Q, 0.0, atol=1e-14)


def test_zero_sum_basis_spans_diff_eigenspace():
    c = CanonicalCoupling(0.3, -0.2, 5)
    M, Q = build_canonical(c), zero_sum_basis(5)
    np.testing.assert_allclose(M @ Q, 0.3 * Q, atol=1e-14)
