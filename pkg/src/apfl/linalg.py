"""Dense double-precision linear algebra behind the closed-form training paths.

Every linear system solved in this package has a coefficient matrix of the
form X^T X + g*I with g > 0, which is symmetric positive definite by
construction. All solves therefore go through a Cholesky factorization, and
no explicit matrix inverse is ever formed.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .errors import NotPositiveDefiniteError, ShapeError

# Accumulated gram matrices lose exact symmetry to roundoff; a relative
# defect beyond this marks a genuinely asymmetric input.
SYMMETRY_RTOL = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a non-empty 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape validation."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape} by {b.shape}: inner dimensions differ"
        )
    return a @ b


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return (A + A^T) / 2."""
    return 0.5 * (a + a.T)


def symmetry_defect(a: np.ndarray) -> float:
    """Relative Frobenius distance of ``a`` from its transpose."""
    denom = float(np.linalg.norm(a))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - a.T)) / denom


def check_spd_input(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate that ``a`` is square and symmetric to within SYMMETRY_RTOL."""
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    defect = symmetry_defect(a)
    if defect > SYMMETRY_RTOL:
        raise ValueError(
            f"{name} is not symmetric: relative defect {defect:.3e} exceeds "
            f"{SYMMETRY_RTOL:.0e}"
        )
    return a


def cholesky_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix.

    Raises NotPositiveDefiniteError carrying the order of the first
    non-positive leading minor, straight from the LAPACK info flag.
    """
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(int(info))
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of Cholesky factorization")
    return c


# Residuals above this (relative) trigger compensated refinement; the
# gram-plus-ridge systems of the training paths never get close.
_REFINE_THRESHOLD = 1e-11

_SPLITTER = 134217729.0  # 2**27 + 1, Veltkamp split constant for float64


def _two_prod(a, b):
    """Exact product a*b = p + err for float64 inputs (Dekker's algorithm)."""
    p = a * b
    t = _SPLITTER * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLITTER * b
    bh = t - (t - b)
    bl = b - bh
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def compensated_residual(a: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """b - a @ x with the products exact and the sums compensated.

    A plain float64 residual carries an error of order eps * |a| * |x|,
    which is what limits iterative refinement on ill-conditioned systems;
    this one is accurate to roughly eps^2 at O(d) slowdown, paid only on
    the refinement path.
    """
    s = -b.copy()
    comp = np.zeros_like(b)
    for k in range(a.shape[1]):
        p, err = _two_prod(a[:, k:k + 1], x[k : k + 1, :])
        t = s + p
        comp += np.where(np.abs(s) >= np.abs(p), (s - t) + p, (p - t) + s) + err
        s = t
    return -(s + comp)


def spd_solve(a, b) -> np.ndarray:
    """Solve a @ X = b for symmetric positive definite ``a`` via Cholesky.

    A bare factorization solve leaves a relative residual of roughly
    eps * cond(a), which misses the 1e-10 contract near condition 1e8. When
    the cheap residual check fails, up to three refinement steps with
    compensated residuals restore it; the factor is reused, so each step
    costs one matrix product and one pair of triangular solves.
    """
    a = check_spd_input(a, "a")
    b = as_matrix(b, "b")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(
            f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}"
        )
    c = cholesky_factor(a)
    x, info = lapack.dpotrs(c, b, lower=1)
    if info != 0:
        raise ValueError(f"illegal value in argument {-info} of triangular solve")
    b_norm = np.linalg.norm(b)
    if np.linalg.norm(b - a @ x) > _REFINE_THRESHOLD * b_norm:
        for _ in range(3):
            residual = compensated_residual(a, x, b)
            if np.linalg.norm(residual) <= 1e-13 * b_norm:
                break
            correction, info = lapack.dpotrs(c, residual, lower=1)
            if info != 0:
                raise ValueError(
                    f"illegal value in argument {-info} of triangular solve"
                )
            x = x + correction
    return x


def ridge_solve(phi, y, reg: float) -> np.ndarray:
    """Ridge regression weights (phi^T phi + reg*I)^-1 phi^T y.

    The unique minimizer of ||y - phi @ W||_F^2 + reg * ||W||_F^2.
    """
    if reg <= 0.0:
        raise ValueError(f"reg must be > 0 to keep the system positive definite, got {reg}")
    phi = as_matrix(phi, "phi")
    y = as_matrix(y, "y")
    if phi.shape[0] != y.shape[0]:
        raise ShapeError(
            f"phi has {phi.shape[0]} rows but y has {y.shape[0]}"
        )
    gram = symmetrize(phi.T @ phi)
    gram[np.diag_indices_from(gram)] += reg
    return spd_solve(gram, phi.T @ y)
