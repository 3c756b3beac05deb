"""Small dense linear algebra helpers.

Everything here works on plain numpy arrays.  The eigensolver is a cyclic
Jacobi method so results are deterministic and independent of the LAPACK
build; a ``method="lapack"`` switch exists for the hot loops of the SDP
solver where speed matters more than bit-level reproducibility.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConvergenceError",
    "as_vector",
    "as_symmetric",
    "make_rng",
    "sym_eig",
    "project_psd",
    "spectral_norm",
    "sym_outer",
    "frozen",
]


class ConvergenceError(RuntimeError):
    """Raised when an iterative linear algebra routine fails to converge.

    Attributes
    ----------
    residual : float
        Last measured residual (e.g. off-diagonal Frobenius norm).
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual reached: {residual:.3e})")
        self.residual = residual


def frozen(a: np.ndarray) -> np.ndarray:
    """Return a read-only float copy of ``a``."""
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Validate and convert ``x`` to a finite 1-d float array.

    Parameters
    ----------
    x : array_like
        Candidate vector.
    dim : int, optional
        Required dimension.
    name : str
        Used in error messages.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    if dim is not None and arr.size != dim:
        raise ValueError(f"{name} has dimension {arr.size}, expected {dim}")
    return arr


def as_symmetric(S, atol: float = 1e-12) -> np.ndarray:
    """Check that ``S`` is square, finite and symmetric; return the symmetrized copy."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > atol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (S + S.T)


def sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetric outer product ``(a b^T + b a^T) / 2``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return 0.5 * (np.outer(a, b) + np.outer(b, a))


def make_rng(seed: int | None = 0) -> np.random.Generator:
    """The single source of randomness used throughout the package.

    A PCG64 generator seeded from ``seed``; identical seeds give identical
    streams on every platform numpy supports.
    """
    return np.random.Generator(np.random.PCG64(seed))


def _off_norm(A: np.ndarray) -> float:
    off = A - np.diag(np.diag(A))
    return float(np.linalg.norm(off))


def _jacobi(S: np.ndarray, tol: float, max_sweeps: int):
    n = S.shape[0]
    A = S.copy()
    Q = np.eye(n)
    fro = float(np.linalg.norm(S))
    if n == 1 or fro == 0.0:
        return np.diag(A).copy(), Q
    # stop well below the requested tolerance; quadratic convergence makes
    # the extra sweep cheap
    target = max(1e-2 * tol, 4 * np.finfo(float).eps) * fro
    off = _off_norm(A)
    for _ in range(max_sweeps):
        if off <= target:
            return np.diag(A).copy(), Q
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                app, aqq = A[p, p], A[q, q]
                # skip rotations that cannot change anything at this precision
                if abs(apq) < 1e-18 * (abs(app) + abs(aqq)):
                    A[p, q] = A[q, p] = 0.0
                    continue
                tau = (aqq - app) / (2.0 * apq)
                if tau == 0:
                    t = 1.0
                elif abs(tau) > 1e150:
                    t = 0.5 / tau  # avoid overflow in tau * tau
                else:
                    t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                Ap = A[:, p].copy()
                Aq = A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap = A[p, :].copy()
                Aq = A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Qp = Q[:, p].copy()
                Q[:, p] = c * Qp - s * Q[:, q]
                Q[:, q] = s * Qp + c * Q[:, q]
                rotated = True
        off = _off_norm(A)
        if not rotated:
            return np.diag(A).copy(), Q
    if off <= target:
        return np.diag(A).copy(), Q
    if off <= tol * fro:
        # good enough for the contract even if the inner target was missed
        return np.diag(A).copy(), Q
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", off)


def sym_eig(S, tol: float = 1e-12, max_sweeps: int = 100, method: str = "jacobi"):
    """Eigendecomposition of a real symmetric matrix.

    Parameters
    ----------
    S : array_like, shape (n, n)
        Symmetric matrix.
    tol : float
        Relative tolerance on the reconstruction ``||S - Q diag(w) Q^T||_F``.
    max_sweeps : int
        Jacobi sweep budget.
    method : {"jacobi", "lapack"}
        ``"lapack"`` defers to :func:`numpy.linalg.eigh`.

    Returns
    -------
    w : ndarray
        Eigenvalues in descending order.
    Q : ndarray
        Orthogonal matrix whose columns are the matching eigenvectors.

    Raises
    ------
    ConvergenceError
        If the off-diagonal mass has not dropped below tolerance after
        ``max_sweeps`` sweeps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = as_symmetric(S)
    if method == "lapack":
        w, Q = np.linalg.eigh(S)
    elif method == "jacobi":
        w, Q = _jacobi(S, tol, max_sweeps)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], Q[:, order]


def project_psd(S, sign: str = "plus", method: str = "jacobi") -> np.ndarray:
    """Frobenius projection onto the PSD cone (``plus``) or its negative (``minus``)."""
    if sign not in ("plus", "minus"):
        raise ValueError("sign must be 'plus' or 'minus'")
    w, Q = sym_eig(S, method=method)
    w = np.maximum(w, 0.0) if sign == "plus" else np.minimum(w, 0.0)
    out = (Q * w) @ Q.T
    return 0.5 * (out + out.T)


def spectral_norm(M, tol: float = 1e-12, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    The start vector is a seeded Gaussian draw, so the result is
    deterministic for a given ``seed``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("expected a matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0 or not np.any(M):
        return 0.0
    x = make_rng(seed).standard_normal(M.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            # start vector landed in the null space; restart from a basis vector
            x = np.zeros_like(x)
            x[int(np.argmax(np.linalg.norm(M, axis=0)))] = 1.0
            continue
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    # Rayleigh quotient is more accurate than the ratio of norms
    return float(np.linalg.norm(M @ x))
