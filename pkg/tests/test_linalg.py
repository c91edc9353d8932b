"""Eigendecomposition pseudoinverse, range tests, PSD checks."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvequil.linalg import is_psd, pseudoinverse, range_membership, scalar_dagger


def random_spd_spectrum(rng, n, zero_frac=0.4):
    """Symmetric matrix with eigenvalues either exactly 0 or in [0.1, 10]."""
    w = rng.uniform(0.1, 10.0, size=n)
    w[rng.random(n) < zero_frac] = 0.0
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(w) @ Q.T, w


@given(st.integers(0, 10**6), st.integers(1, 6))
@settings(max_examples=80, deadline=None)
def test_pseudoinverse_involution(seed, n):
    rng = np.random.default_rng(seed)
    M, _ = random_spd_spectrum(rng, n)
    back = pseudoinverse(pseudoinverse(M).pinv).pinv
    assert np.linalg.norm(back - M) <= 1e-8 * max(1.0, np.linalg.norm(M))


@given(st.integers(0, 10**6), st.integers(1, 6))
@settings(max_examples=80, deadline=None)
def test_pseudoinverse_penrose_identities(seed, n):
    rng = np.random.default_rng(seed)
    M, w = random_spd_spectrum(rng, n)
    res = pseudoinverse(M)
    P = res.pinv
    assert res.rank == int(np.count_nonzero(w))
    assert np.allclose(M @ P @ M, M, atol=1e-9)
    assert np.allclose(P @ M @ P, P, atol=1e-9)
    assert np.allclose(P, P.T, atol=1e-12)


@given(st.integers(0, 10**6), st.integers(1, 6))
@settings(max_examples=80, deadline=None)
def test_range_membership_of_image_vectors(seed, n):
    rng = np.random.default_rng(seed)
    M, _ = random_spd_spectrum(rng, n)
    z = rng.standard_normal(n)
    ok, residual = range_membership(M @ z, M)
    assert ok
    assert residual <= 1e-8 * max(1.0, np.linalg.norm(M @ z))


@given(st.integers(0, 10**6), st.integers(2, 6))
@settings(max_examples=80, deadline=None)
def test_range_membership_rejects_kernel_component(seed, n):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 10.0, size=n)
    w[0] = 0.0
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    M = Q @ np.diag(w) @ Q.T
    v = M @ rng.standard_normal(n) + Q[:, 0]  # unit kernel component
    ok, residual = range_membership(v, M)
    assert not ok
    assert residual > 0.5


def test_rank_one_diagonal_pseudoinverse_is_exact():
    res = pseudoinverse(np.diag([2.0, 0.0]))
    assert np.array_equal(res.pinv, np.diag([0.5, 0.0]))
    assert res.rank == 1


def test_scalar_dagger():
    assert scalar_dagger(0.0) == 0.0
    assert scalar_dagger(2.0) == 0.5
    assert scalar_dagger(-4.0) == -0.25
    assert scalar_dagger(1e-15) == 0.0  # below the absolute cutoff
    assert scalar_dagger(3.0) == pseudoinverse(np.array([[3.0]])).pinv[0, 0]


def test_is_psd_examples():
    assert is_psd(np.diag([1.0, 0.0]))
    assert is_psd(np.zeros((3, 3)))
    assert is_psd(np.diag([1.0, -1e-12]))  # inside tolerance
    assert not is_psd(np.diag([1.0, -1e-6]))


def test_asymmetric_input_raises():
    M = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(np.linalg.LinAlgError):
        pseudoinverse(M)
    with pytest.raises(np.linalg.LinAlgError):
        is_psd(M)
    with pytest.raises(np.linalg.LinAlgError):
        range_membership(np.ones(2), M)


def test_nonfinite_input_raises():
    M = np.array([[1.0, np.nan], [np.nan, 1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        pseudoinverse(M)


def test_tiny_asymmetry_is_symmetrized():
    M = np.array([[2.0, 1.0 + 1e-13], [1.0, 2.0]])
    res = pseudoinverse(M)
    assert np.allclose(res.pinv @ M, np.eye(2), atol=1e-9)
