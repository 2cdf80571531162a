#!/usr/bin/env python3
"""
Tests for the linear-algebra kernel and seeded random streams.
"""
import numpy as np
import pytest

from numerics import NotPositiveDefiniteError, RngStream, as_vector, gaussian_matrix, solve_spd


def _gauss_jordan_inverse(M):
    """Plain Gauss-Jordan elimination with partial pivoting."""
    n = M.shape[0]
    aug = np.hstack([M.astype(float), np.eye(n)])
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(aug[col:, col])))
        aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def test_solve_spd_identity_and_diagonal():
    """Identity and diagonal systems solve exactly."""
    np.testing.assert_allclose(solve_spd(np.eye(3), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(solve_spd(2.0 * np.eye(2), np.array([4.0, 6.0])), [2.0, 3.0])


def test_solve_spd_matches_gauss_jordan_inverse():
    """Random SPD system agrees with an explicitly inverted matrix."""
    G = RngStream(11).generator().standard_normal((8, 8))
    M = G @ G.T + np.eye(8)
    b = RngStream(12).generator().standard_normal(8)
    np.testing.assert_allclose(solve_spd(M, b), _gauss_jordan_inverse(M) @ b, rtol=0, atol=1e-8)


@pytest.mark.parametrize("n", [1, 20, 200])
def test_solve_spd_residual(n):
    """M v reproduces b to 1e-8 relative."""
    gen = RngStream(3, n).generator()
    G = gen.standard_normal((n, n))
    M = G @ G.T / n + np.eye(n)
    b = gen.standard_normal(n)
    v = solve_spd(M, b)
    assert np.linalg.norm(M @ v - b) <= 1e-8 * np.linalg.norm(b)


def test_solve_spd_multiple_right_hand_sides():
    """A matrix of right-hand sides is solved column by column."""
    M = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(solve_spd(M, b), np.linalg.inv(M), atol=1e-12)


def test_solve_spd_reports_failing_pivot():
    """Indefinite matrix raises with the index of the failing pivot."""
    M = np.diag([1.0, 2.0, -1.0])
    with pytest.raises(NotPositiveDefiniteError) as excinfo:
        solve_spd(M, np.ones(3))
    assert excinfo.value.pivot == 2
    assert "pivot 2" in str(excinfo.value)


def test_solve_spd_rejects_asymmetric_and_mismatched():
    """Asymmetric matrices and wrong right-hand-side shapes are rejected."""
    with pytest.raises(ValueError, match="symmetric"):
        solve_spd(np.array([[1.0, 0.5], [0.0, 1.0]]), np.ones(2))
    with pytest.raises(ValueError):
        solve_spd(np.eye(3), np.ones(2))


def test_solve_spd_symmetry_tolerance_is_relative():
    """Asymmetry is judged against the matrix scale, small or large."""
    skew = np.array([[2.0, 1.001], [1.0, 2.0]])
    with pytest.raises(ValueError, match="symmetric"):
        solve_spd(1e-12 * skew, np.ones(2))
    big = 1e6 * np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
    np.testing.assert_allclose(big @ solve_spd(big, np.ones(2)), np.ones(2), rtol=1e-10)


def test_rng_stream_is_reproducible():
    """Same (seed, stream_id) reproduces the same draws; distinct ids differ."""
    a = RngStream(5, 1).generator().standard_normal(16)
    b = RngStream(5, 1).generator().standard_normal(16)
    c = RngStream(5, 2).generator().standard_normal(16)
    np.testing.assert_array_equal(a, b)
    assert np.all(a != c)


def test_rng_child_streams():
    """Child streams are deterministic in their labels and keep the seed."""
    root = RngStream(42)
    assert root.child("trial", 3) == root.child("trial", 3)
    assert root.child("trial", 3) != root.child("trial", 4)
    assert root.child("a").child("b") != root.child("a", "b")
    assert root.child("x").seed == 42


def test_rng_stream_rejects_out_of_range_seed():
    """Seeds outside 64 bits are rejected."""
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2 ** 64)


def test_gaussian_matrix_determinism_and_moments():
    """Same stream gives the same matrix; large draws have the requested moments."""
    rng = RngStream(7, 9)
    np.testing.assert_array_equal(gaussian_matrix(4, 3, 1.0, rng), gaussian_matrix(4, 3, 1.0, rng))
    big = gaussian_matrix(1000, 1000, 1.0, RngStream(2024))
    assert abs(big.mean()) < 0.01
    assert abs(big.var() - 1.0) < 0.01


def test_gaussian_matrix_preconditions():
    """Zero std and empty dimensions are errors."""
    with pytest.raises(ValueError):
        gaussian_matrix(3, 3, 0.0, RngStream(0))
    with pytest.raises(ValueError):
        gaussian_matrix(0, 3, 1.0, RngStream(0))


def test_as_vector_rejects_non_finite():
    """Non-finite entries never enter the kernel."""
    with pytest.raises(ValueError, match="non-finite"):
        as_vector([1.0, np.nan])
