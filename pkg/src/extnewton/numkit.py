"""Small dense linear algebra and sampling helpers.

Everything here works on numpy arrays. The solvers accept a leading batch
dimension so the basin mapper can push thousands of tiny systems through
one call.
"""
import numpy as np

PIVOT_TOL = 1e-14


class SingularMatrix(ArithmeticError):
    """Raised when LU elimination meets a pivot below ``PIVOT_TOL``."""


def lu_solve_batch(a, b):
    """Solve ``a @ x = b`` for a stack of square systems.

    Gaussian elimination with partial pivoting, vectorised over the leading
    dimensions.

    Parameters
    ----------
    a : ndarray, shape (..., n, n)
    b : ndarray, shape (..., n)

    Returns
    -------
    x : ndarray, shape (..., n)
        Solution; rows flagged singular hold NaN.
    singular : ndarray of bool, shape (...)
        True where some pivot magnitude fell below ``PIVOT_TOL``.
    """
    a = np.array(a, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    n = a.shape[-1]
    if a.shape[-2] != n or b.shape[-1] != n:
        raise ValueError("lu_solve needs a square matrix and a conformable rhs")
    batch = a.shape[:-2]
    a = a.reshape(-1, n, n)
    b = b.reshape(-1, n)
    rows = np.arange(a.shape[0])
    singular = np.zeros(a.shape[0], dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(n):
            p = k + np.argmax(np.abs(a[:, k:, k]), axis=1)
            # row swap k <-> p
            ak, ap = a[rows, k].copy(), a[rows, p].copy()
            a[rows, k], a[rows, p] = ap, ak
            bk, bp = b[rows, k].copy(), b[rows, p].copy()
            b[rows, k], b[rows, p] = bp, bk
            piv = a[:, k, k]
            bad = ~(np.abs(piv) >= PIVOT_TOL)
            singular |= bad
            piv = np.where(bad, 1.0, piv)
            m = a[:, k + 1:, k] / piv[:, None]
            a[:, k + 1:, k:] -= m[:, :, None] * a[:, None, k, k:]
            b[:, k + 1:] -= m * b[:, k, None]
        x = np.empty_like(b)
        for k in range(n - 1, -1, -1):
            s = b[:, k] - np.einsum("bj,bj->b", a[:, k, k + 1:], x[:, k + 1:])
            x[:, k] = s / a[:, k, k]
    x[singular] = np.nan
    return x.reshape(batch + (n,)), singular.reshape(batch)


def lu_solve(a, b):
    """Solve a single square system ``a @ x = b``.

    Raises
    ------
    SingularMatrix
        If a pivot magnitude drops below ``PIVOT_TOL``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 1:
        raise ValueError("lu_solve expects a 2-d matrix and a 1-d vector")
    x, sing = lu_solve_batch(a, b)
    if sing:
        raise SingularMatrix("pivot below %g" % PIVOT_TOL)
    return x


def _cutoff(s, m, n):
    smax = s[..., :1] if s.shape[-1] else np.zeros(s.shape[:-1] + (1,))
    return max(m, n) * np.finfo(float).eps * smax


def moore_penrose_pinv(a):
    """Moore-Penrose pseudoinverse, batched over leading dimensions.

    Singular values below ``max(m, n) * eps * sigma_max`` are treated as zero.
    """
    a = np.asarray(a, dtype=float)
    m, n = a.shape[-2:]
    if m == 0 or n == 0:
        return np.zeros(a.shape[:-2] + (n, m))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    keep = s > _cutoff(s, m, n)
    sinv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return np.swapaxes(vt, -1, -2) @ (sinv[..., :, None] * np.swapaxes(u, -1, -2))


def matrix_rank(a, tol=None):
    """Number of singular values above ``tol`` (default: the pinv cutoff)."""
    a = np.asarray(a, dtype=float)
    m, n = a.shape[-2:]
    s = np.linalg.svd(a, compute_uv=False)
    if tol is None:
        tol = _cutoff(s, m, n)
    return np.sum(s > tol, axis=-1)


def norm2(v):
    """Euclidean norm of a vector (last axis for stacked input)."""
    return np.sqrt(np.sum(np.square(np.asarray(v, dtype=float)), axis=-1))


def make_rng(seed):
    """numpy Generator from a 64-bit seed."""
    return np.random.default_rng(np.uint64(int(seed) % 2**64))


def lhs_sample(dims, n, seed):
    """Latin hypercube sample of ``n`` points in ``[0, 1)^dims``.

    Each axis is cut into ``n`` equal strata and every stratum receives
    exactly one point. The strata are paired across axes by independent
    random permutations.

    Returns
    -------
    ndarray, shape (n, dims)
    """
    if dims < 1 or n < 1:
        raise ValueError("dims and n must be positive")
    rng = make_rng(seed)
    u = rng.random((n, dims))
    perm = np.stack([rng.permutation(n) for _ in range(dims)], axis=1)
    pts = (perm + u) / n
    # guard against (n-1 + u)/n rounding up to 1.0
    return np.minimum(pts, np.nextafter(1.0, 0.0))
