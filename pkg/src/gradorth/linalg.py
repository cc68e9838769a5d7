"""Dense matrix helpers: validation, products, thin SVD, rank selection.

Matrices are plain 2-D float64 numpy arrays. The SVD is a one-sided
Jacobi iteration implemented here rather than delegated, because the
surrounding code depends on its exact convergence behaviour, column
ordering, and sign convention.
"""

import math
from dataclasses import dataclass

import numpy as np

JACOBI_SWEEP_CAP = 60
JACOBI_REL_TOL = 1e-12


class NumericError(RuntimeError):
    """An iterative numeric routine failed (non-convergence, overflow, NaN)."""


def as_matrix(a, name="matrix"):
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    out = np.asarray(a, dtype=float)
    if out.ndim != 2:
        raise ValueError("%s must be 2-D, got shape %s" % (name, out.shape))
    if out.size == 0:
        raise ValueError("%s must be non-empty, got shape %s" % (name, out.shape))
    if not np.isfinite(out).all():
        raise ValueError("%s contains non-finite entries" % name)
    return out


def as_vector(x, name="vector"):
    """Validate and return `x` as a 1-D float64 array with finite entries."""
    out = np.asarray(x, dtype=float)
    if out.ndim != 1:
        raise ValueError("%s must be 1-D, got shape %s" % (name, out.shape))
    if not np.isfinite(out).all():
        raise ValueError("%s contains non-finite entries" % name)
    return out


def matmul(a, b):
    """Matrix product with shape diagnostics naming both operands."""
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            "cannot multiply %dx%d by %dx%d: inner dimensions differ"
            % (a.shape[0], a.shape[1], b.shape[0], b.shape[1])
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise NumericError("matrix product overflowed to non-finite values")
    return out


def frobenius_norm(a):
    a = as_matrix(a)
    return float(math.sqrt(float((a * a).sum())))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD factors with singular values sorted descending.

    `u` has orthonormal columns (r of them, r = min(rows, cols)), `sigma`
    is non-negative and descending, and `u * diag(sigma) @ v.T`
    reconstructs the input. Each `u` column has its largest-magnitude
    entry non-negative, which fixes the sign ambiguity.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def _fill_orthonormal_column(u, j):
    """Pick a deterministic unit vector orthogonal to u[:, :j].

    Used when the input is rank deficient and a sigma is (numerically)
    zero: the standard basis vector least represented in the existing
    columns is orthogonalized against them twice and normalized.
    """
    m = u.shape[0]
    existing = u[:, :j]
    row_energy = (existing * existing).sum(axis=1)
    cand = np.zeros(m)
    cand[int(np.argmin(row_energy))] = 1.0
    for _ in range(2):
        cand = cand - existing @ (existing.T @ cand)
    norm = math.sqrt(float((cand * cand).sum()))
    if norm == 0.0:
        raise NumericError("failed to complete an orthonormal basis column")
    return cand / norm


def _jacobi_factor(a):
    """One-sided Jacobi on a matrix with rows >= cols.

    Rotates column pairs of a working copy until every pair is orthogonal
    to relative tolerance JACOBI_REL_TOL, accumulating the rotations in v.
    """
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    worst = 0.0
    for _ in range(JACOBI_SWEEP_CAP):
        rotated = False
        worst = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(w[:, p] @ w[:, p])
                beta = float(w[:, q] @ w[:, q])
                gamma = float(w[:, p] @ w[:, q])
                # sqrt before multiplying: alpha * beta can underflow to 0
                # for tiny columns, which would silently skip the rotation.
                scale = math.sqrt(alpha) * math.sqrt(beta)
                if scale == 0.0 or abs(gamma) <= JACOBI_REL_TOL * scale:
                    continue
                rotated = True
                worst = max(worst, abs(gamma) / scale)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                wp = w[:, p].copy()
                w[:, p] = c * wp - s * w[:, q]
                w[:, q] = s * wp + c * w[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    else:
        raise NumericError(
            "SVD did not converge within %d sweeps; worst off-diagonal ratio %.3e"
            % (JACOBI_SWEEP_CAP, worst)
        )

    sigma = np.sqrt((w * w).sum(axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros((m, n))
    cutoff = max(m, n) * np.finfo(float).eps * (float(sigma[0]) if n else 0.0)
    for j in range(n):
        if sigma[j] > cutoff:
            u[:, j] = w[:, j] / sigma[j]
        else:
            sigma[j] = 0.0
            u[:, j] = _fill_orthonormal_column(u, j)
    return u, sigma, v


def svd_thin(a):
    """Thin SVD via one-sided Jacobi rotations.

    Args:
        a: matrix of shape (m, n), non-empty and finite.

    Returns:
        SvdResult with r = min(m, n) columns in u and v.

    Raises:
        NumericError: if the rotation sweeps do not converge.
    """
    a = as_matrix(a)
    m, n = a.shape
    # Rescale by a power of two so the largest entry lands in [1, 2).
    # The scaling is exact in binary and keeps every column dot product
    # well inside the normal floating-point range, where the rotation
    # tolerances behave; sigma is unscaled on the way out.
    peak = float(np.abs(a).max())
    shift = 1 - math.frexp(peak)[1] if peak > 0.0 else 0
    scaled = np.ldexp(a, shift)
    if m >= n:
        u, sigma, v = _jacobi_factor(scaled)
    else:
        v, sigma, u = _jacobi_factor(scaled.T)
    sigma = np.ldexp(sigma, -shift)
    if not np.isfinite(sigma).all():
        raise NumericError("singular values overflow the floating-point range")
    u = u.copy()
    v = v.copy()
    for j in range(u.shape[1]):
        lead = int(np.argmax(np.abs(u[:, j])))
        if u[lead, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u, sigma=sigma, v=v)


def rank_select(svd, eps_th):
    """Smallest k whose leading singular values hold eps_th of the energy.

    Energy is the sum of squared singular values; k is the smallest index
    with cumulative energy >= eps_th * total, so exact ties resolve to
    the smaller k.

    Args:
        svd: an SvdResult.
        eps_th: energy fraction threshold in (0, 1].

    Returns:
        k in [1, len(sigma)].

    Raises:
        ValueError: if eps_th is out of range or all singular values are
            zero (a zero matrix has no meaningful subspace).
    """
    if not 0.0 < eps_th <= 1.0:
        raise ValueError("eps_th must be in (0, 1], got %r" % (eps_th,))
    energy = np.asarray(svd.sigma, dtype=float) ** 2
    cumulative = np.cumsum(energy)
    total = float(cumulative[-1])
    if total == 0.0:
        raise ValueError("all singular values are zero: representation matrix is zero")
    k = int(np.searchsorted(cumulative, eps_th * total, side="left")) + 1
    return min(k, len(energy))
