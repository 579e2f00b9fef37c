"""Dense numerical kernels: SPD solves, conjugate gradient, LiSSA, Pearson r.

Vectors and matrices are plain float64 numpy arrays throughout; the helpers
here validate shape, dtype and finiteness at the boundaries so the callers
can stay terse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateInputError,
    DivergedError,
    NonFiniteError,
    SingularMatrixError,
)

DenseVector = np.ndarray
DenseMatrix = np.ndarray

COND_LIMIT = 1e14
RESIDUAL_RTOL = 1e-8
SYMMETRY_RTOL = 1e-10


def as_vector(x) -> DenseVector:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    require_finite(v, context="vector")
    return v


def as_matrix(a) -> DenseMatrix:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {m.shape}")
    require_finite(m, context="matrix")
    return m


def require_finite(*arrays, context: str = "array") -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite entries in {context}")


def require_symmetric(a: DenseMatrix) -> None:
    """Check |A - A^T|_inf <= SYMMETRY_RTOL * |A|_inf."""
    scale = np.abs(a).max()
    if scale == 0.0:
        return
    skew = np.abs(a - a.T).max()
    if skew > SYMMETRY_RTOL * scale:
        raise ValueError(f"matrix is not symmetric: skew {skew:.3e} at scale {scale:.3e}")


def solve_spd(a: DenseMatrix, rhs: DenseVector, damping: float = 0.0) -> DenseVector:
    """Solve (A + damping*I) x = rhs for symmetric A.

    Tries a Cholesky factorization first and falls back to a pivoted LU when
    the damped matrix is not positive definite.  Raises SingularMatrixError
    when the system is numerically singular (condition estimate > 1e14) or
    the residual cannot be brought under 1e-8 * |rhs|.
    """
    a = as_matrix(a)
    rhs = as_vector(rhs)
    if a.shape[0] != a.shape[1] or a.shape[0] != rhs.shape[0]:
        raise ValueError(f"shape mismatch: A {a.shape}, rhs {rhs.shape}")
    require_symmetric(a)
    if damping < 0:
        raise ValueError("damping must be nonnegative")

    m = a if damping == 0.0 else a + damping * np.eye(a.shape[0])
    x = None
    try:
        factor = scipy.linalg.cho_factor(m, check_finite=False)
        x = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
        solve_again = lambda r: scipy.linalg.cho_solve(factor, r, check_finite=False)
    except scipy.linalg.LinAlgError:
        if np.linalg.cond(m) > COND_LIMIT:
            raise SingularMatrixError(
                f"condition estimate exceeds {COND_LIMIT:.0e}"
            ) from None
        lu = scipy.linalg.lu_factor(m, check_finite=False)
        x = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        solve_again = lambda r: scipy.linalg.lu_solve(lu, r, check_finite=False)

    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)
    resid = rhs - m @ x
    if np.linalg.norm(resid) > RESIDUAL_RTOL * rhs_norm:
        # one step of iterative refinement before giving up
        x = x + solve_again(resid)
        resid = rhs - m @ x
        if np.linalg.norm(resid) > RESIDUAL_RTOL * rhs_norm:
            raise SingularMatrixError(
                f"residual {np.linalg.norm(resid):.3e} exceeds "
                f"{RESIDUAL_RTOL:.0e} * |rhs| = {RESIDUAL_RTOL * rhs_norm:.3e}"
            )
    require_finite(x, context="solve_spd result")
    return x


@dataclass(frozen=True)
class CgResult:
    """Conjugate gradient outcome; `converged` is advisory, not an error."""

    x: DenseVector
    converged: bool
    iterations: int
    residual_norm: float


def cg_solve(
    apply_a: Callable[[DenseVector], DenseVector],
    rhs: DenseVector,
    damping: float = 0.0,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> CgResult:
    """Conjugate gradient on the damped operator v -> A v + damping * v.

    The operator must be symmetric positive definite after damping; this is
    the caller's responsibility.  Stops when |r| <= tol * |rhs| or after
    max_iter iterations (default 10 * dim), whichever comes first.
    """
    rhs = as_vector(rhs)
    d = rhs.shape[0]
    if max_iter is None:
        max_iter = 10 * d
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return CgResult(np.zeros(d), True, 0, 0.0)

    def op(v):
        out = np.asarray(apply_a(v), dtype=np.float64)
        return out + damping * v if damping != 0.0 else out

    x = np.zeros(d)
    r = rhs.copy()
    p = r.copy()
    rs = r @ r
    it = 0
    while it < max_iter and np.sqrt(rs) > tol * rhs_norm:
        ap = op(p)
        denom = p @ ap
        if denom <= 0 or not np.isfinite(denom):
            # operator is not PD along p; bail out with what we have
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    resid = np.sqrt(rs)
    require_finite(x, context="cg_solve result")
    return CgResult(x, bool(resid <= tol * rhs_norm), it, float(resid))


def lissa_solve(
    sample_hvp: Callable[[int, DenseVector], DenseVector],
    num_steps: int,
    scale: float,
    damping: float,
    rhs: DenseVector,
    rng_seed: int,
    n_terms: int = 1,
) -> DenseVector:
    """Stochastic truncated Neumann solve of (A + damping*I) x = rhs.

    sample_hvp(j, v) must return an unbiased per-term estimate of A @ v for
    a term index j in [0, n_terms); with n_terms == 1 it is called with
    j = 0 every step, which gives the deterministic full-batch recursion.
    Runs r_{t+1} = rhs + r_t - (sample_hvp(j_t, r_t) + damping * r_t) / scale
    for num_steps steps and returns r_T / scale.  The index stream is drawn
    from a generator seeded with rng_seed, so results are reproducible.
    Raises DivergedError when |r_t| exceeds 1e8 * |rhs|.
    """
    rhs = as_vector(rhs)
    if scale <= 0:
        raise ValueError("scale must be positive")
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    rng = np.random.default_rng(rng_seed)
    r = rhs.copy()
    for _ in range(num_steps):
        j = int(rng.integers(n_terms)) if n_terms > 1 else 0
        hv = np.asarray(sample_hvp(j, r), dtype=np.float64)
        r = rhs + r - (hv + damping * r) / scale
        norm = np.linalg.norm(r)
        if not np.isfinite(norm) or norm > 1e8 * rhs_norm:
            raise DivergedError(
                f"LiSSA iterate norm {norm:.3e} exceeds 1e8 * |rhs|; "
                "increase scale or damping"
            )
    return r / scale


def pearson(a: DenseVector, b: DenseVector) -> float:
    """Sample Pearson correlation of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError("length mismatch")
    if a.shape[0] < 2:
        raise DegenerateInputError("need at least two points")
    ac = a - a.mean()
    bc = b - b.mean()
    na = np.linalg.norm(ac)
    nb = np.linalg.norm(bc)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("constant input has undefined correlation")
    return float((ac / na) @ (bc / nb))
