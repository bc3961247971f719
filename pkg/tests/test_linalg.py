"""Solver tests against hand-derived and brute-force oracles."""

import numpy as np
import pytest

from apfl.errors import NotPositiveDefiniteError, ShapeError
from apfl.linalg import as_matrix, matmul, ridge_solve, spd_solve, symmetrize


def naive_matmul(a, b):
    """Triple-loop reference product."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def spd_with_condition(dim, cond, rng):
    """Random SPD matrix with the requested condition number."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eigs = np.logspace(0, -np.log10(cond), dim)
    return symmetrize(q @ np.diag(eigs) @ q.T)


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.5, -2.0], [0.25, 7.0]])
        assert np.array_equal(matmul(np.eye(2), m), m)

    def test_hand_arithmetic(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[1.0], [1.0]])
        assert np.array_equal(matmul(a, b), np.array([[3.0], [7.0]]))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((3, 4))
        got = matmul(a, b)
        want = naive_matmul(a, b)
        assert np.max(np.abs(got - want)) <= 1e-14

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            matmul(np.array([[np.nan, 1.0]]), np.ones((2, 1)))


class TestSpdSolve:
    def test_identity_returns_rhs(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal((3, 2))
        assert np.allclose(spd_solve(np.eye(3), b), b, atol=1e-15)

    def test_explicit_2x2_inverse(self):
        # inverse of [[3,1],[1,3]] is (1/8)[[3,-1],[-1,3]]
        a = np.array([[3.0, 1.0], [1.0, 3.0]])
        b = np.array([[2.0], [1.0]])
        want = (1.0 / 8.0) * np.array([[3.0, -1.0], [-1.0, 3.0]]) @ b
        got = spd_solve(a, b)
        assert np.allclose(got, want, atol=1e-15)
        assert np.allclose(got, [[0.625], [0.125]], atol=1e-15)

    def test_diagonal(self):
        a = np.diag([2.0, 4.0])
        b = np.array([[2.0], [4.0]])
        assert np.allclose(spd_solve(a, b), [[1.0], [1.0]], atol=1e-15)

    def test_not_positive_definite_reports_minor(self):
        a = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(NotPositiveDefiniteError) as exc:
            spd_solve(a, np.ones((3, 1)))
        assert exc.value.leading_minor == 2

    def test_rejects_asymmetric(self):
        a = np.array([[2.0, 1.0], [0.0, 2.0]])
        with pytest.raises(ValueError, match="not symmetric"):
            spd_solve(a, np.ones((2, 1)))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            spd_solve(np.eye(3), np.ones((2, 1)))

    @pytest.mark.parametrize("cond", [1e2, 1e5, 1e8])
    def test_round_trip_residual(self, cond):
        # solve then multiply back on consistent systems b = a @ x_true;
        # a float64 result cannot beat eps*|a|*|x| for adversarial b, so
        # the arbitrary-b variant below stops at condition 1e6
        rng = np.random.default_rng(11)
        for _ in range(5):
            a = spd_with_condition(24, cond, rng)
            b = a @ rng.standard_normal((24, 4))
            x = spd_solve(a, b)
            rel = np.linalg.norm(a @ x - b) / np.linalg.norm(b)
            assert rel <= 1e-10

    @pytest.mark.parametrize("cond", [1e2, 1e4, 1e6])
    def test_arbitrary_rhs_residual(self, cond):
        rng = np.random.default_rng(13)
        for _ in range(5):
            a = spd_with_condition(24, cond, rng)
            b = rng.standard_normal((24, 4))
            x = spd_solve(a, b)
            rel = np.linalg.norm(a @ x - b) / np.linalg.norm(b)
            assert rel <= 1e-10


class TestRidgeSolve:
    def test_scalar_normal_equation(self):
        # phi^T phi = 2, so the solution is (2 + 1)^-1 * 2 = 2/3
        phi = np.array([[1.0], [1.0]])
        y = np.array([[1.0], [1.0]])
        got = ridge_solve(phi, y, 1.0)
        assert np.allclose(got, [[2.0 / 3.0]], atol=1e-15)

    def test_explicit_2x2_normal_equation(self):
        phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        y = np.array([[1.0], [0.0], [1.0]])
        # normal equations: (phi^T phi + I) w = phi^T y, solved by hand
        gram = phi.T @ phi + np.eye(2)
        want = np.linalg.solve(gram, phi.T @ y)
        got = ridge_solve(phi, y, 1.0)
        assert np.allclose(got, want, atol=1e-14)
        assert np.allclose(got, [[0.625], [0.125]], atol=1e-14)

    def test_zero_target(self):
        rng = np.random.default_rng(3)
        phi = rng.standard_normal((6, 4))
        got = ridge_solve(phi, np.zeros((6, 2)), 0.5)
        assert np.array_equal(got, np.zeros((4, 2)))

    @pytest.mark.parametrize("reg", [0.0, -1.0])
    def test_nonpositive_reg_rejected(self, reg):
        with pytest.raises(ValueError):
            ridge_solve(np.ones((2, 1)), np.ones((2, 1)), reg)

    def test_stationarity_on_random_instances(self):
        # the minimizer must satisfy phi^T phi G + reg G = phi^T y
        rng = np.random.default_rng(19)
        for _ in range(10):
            n = int(rng.integers(5, 120))
            d = int(rng.integers(1, 64))
            c = int(rng.integers(1, 8))
            reg = float(rng.choice([0.01, 1.0, 100.0]))
            phi = rng.standard_normal((n, d))
            y = rng.standard_normal((n, c))
            g = ridge_solve(phi, y, reg)
            lhs = phi.T @ (phi @ g) + reg * g
            rhs = phi.T @ y
            assert np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs) <= 1e-10

    def test_local_minimum_probe(self):
        # objective at the solution is below 100 random nearby perturbations
        rng = np.random.default_rng(23)
        phi = rng.standard_normal((40, 12))
        y = rng.standard_normal((40, 3))
        reg = 0.7
        g = ridge_solve(phi, y, reg)

        def objective(w):
            return np.linalg.norm(y - phi @ w) ** 2 + reg * np.linalg.norm(w) ** 2

        base = objective(g)
        for _ in range(100):
            d = rng.standard_normal(g.shape)
            d *= 1e-3 / np.linalg.norm(d)
            assert base <= objective(g + d)


class TestAsMatrix:
    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            as_matrix(np.zeros((0, 3)))

    def test_rejects_1d(self):
        with pytest.raises(ShapeError):
            as_matrix(np.zeros(3))
