"""Dense linear-algebra kernels on float64 numpy arrays.

Arrays are C-ordered (row-major), so flattening a filter always walks
height, then width, then channel.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite, ShapeMismatch, SingularMatrix

JITTER_START = 1e-8
JITTER_CEILING = 1e-2
JITTER_FACTOR = 10.0


def as_tensor(data, shape=None):
    """Return ``data`` as a float64 C-contiguous array, optionally reshaped.

    Enforces the tensor invariants: non-empty shape with every dimension >= 1.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeMismatch(f"cannot view {arr.size} values as {shape}")
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(s < 1 for s in arr.shape):
        raise ShapeMismatch(f"invalid tensor shape {arr.shape}")
    return arr


def jitter_schedule():
    """Jitter values tried by :func:`cholesky`: 0, then 1e-8 growing x10 to 1e-2."""
    yield 0.0
    lam = JITTER_START
    while lam <= JITTER_CEILING * (1 + 1e-12):
        yield lam
        lam *= JITTER_FACTOR


def cholesky(a, return_jitter=False):
    """Lower Cholesky factor of a symmetric matrix with jitter escalation.

    A plain factorization is attempted first; on failure ``lam * I`` is added
    with ``lam`` escalating from 1e-8 by factors of ten up to 1e-2.

    Raises
    ------
    NotPositiveDefinite
        If the matrix is still indefinite at the jitter ceiling.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"cholesky needs a square matrix, got {a.shape}")
    scale = max(np.max(np.abs(a)), 1.0)
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-10 * scale):
        raise ShapeMismatch("cholesky needs a symmetric matrix")
    eye = np.eye(a.shape[0])
    for lam in jitter_schedule():
        try:
            lower = np.linalg.cholesky(a + lam * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(lower)):
            return (lower, lam) if return_jitter else lower
    raise NotPositiveDefinite(
        f"matrix not positive definite even with jitter {JITTER_CEILING:g}"
    )


def triangular_solve(lower, b, transposed=False):
    """Solve ``L x = b`` (or ``L^T x = b`` when ``transposed``)."""
    lower = np.asarray(lower, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if lower.ndim != 2 or lower.shape[0] != lower.shape[1]:
        raise ShapeMismatch("triangular_solve needs a square factor")
    if b.shape[0] != lower.shape[0]:
        raise ShapeMismatch(f"rhs rows {b.shape[0]} != order {lower.shape[0]}")
    if np.any(np.diag(lower) == 0.0):
        raise SingularMatrix("zero on the diagonal of the triangular factor")
    return solve_triangular(lower, b, lower=True, trans=1 if transposed else 0)


def cho_solve(lower, b):
    """Solve ``(L L^T) x = b`` by two triangular solves."""
    return triangular_solve(lower, triangular_solve(lower, b), transposed=True)


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _vector(u):
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.size == 0:
        raise ShapeMismatch("empty vector")
    return u


def dot(u, v):
    u, v = _vector(u), _vector(v)
    if u.size != v.size:
        raise ShapeMismatch(f"length {u.size} != {v.size}")
    return float(u @ v)


def l2_norm(u):
    return float(np.linalg.norm(_vector(u)))


def l1_norm(u):
    return float(np.sum(np.abs(_vector(u))))
