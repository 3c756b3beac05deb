"""Lower-bound machinery for span methods and general deterministic methods.

The hard instance is :func:`idvkit.operators.make_worst_case`.  For span
methods the audit is direct.  For arbitrary deterministic methods the
instance is rotated adaptively (a resisting oracle) so that the pulled-back
iterates are zero-respecting, and the same inequalities apply to them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import as_vector, make_rng
from .operators import OperatorSpec, make_worst_case, residual, rotate_operator

__all__ = [
    "SpanTrace",
    "LowerBoundReport",
    "verify_lower_bound",
    "ResistingResult",
    "resisting_rotation",
    "picard_algorithm",
    "ohm_algorithm",
    "heavy_ball_algorithm",
    "trace_from_algorithm",
    "random_span_algorithm",
    "random_convex_weights",
    "SUPPORT_TOL",
]

SUPPORT_TOL = 1e-9

Algorithm = Callable[[np.ndarray, Sequence[np.ndarray]], np.ndarray]


@dataclass(frozen=True)
class SpanTrace:
    """Iterates ``x^0..x^{k-1}``, their residuals, and combination weights.

    ``weights`` are real numbers summing to one; the audited quantity is
    ``sum_i weights[i] * residuals[i]``.
    """

    iterates: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.iterates, dtype=float))
        R = np.atleast_2d(np.asarray(self.residuals, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if X.shape != R.shape or X.shape[0] != w.size:
            raise ValueError(f"inconsistent shapes: iterates {X.shape}, residuals {R.shape}, weights {w.shape}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "iterates", X)
        object.__setattr__(self, "residuals", R)
        object.__setattr__(self, "weights", w)

    @property
    def length(self) -> int:
        return self.iterates.shape[0]

    def with_weights(self, weights) -> "SpanTrace":
        return SpanTrace(self.iterates, self.residuals, weights)

    def span_violation(self, tol: float = 1e-8) -> int | None:
        """First ``n`` with ``x^n - x^0`` outside ``span{r^0..r^{n-1}}``, else None."""
        x0 = self.iterates[0]
        for n in range(1, self.length):
            d = self.iterates[n] - x0
            B = self.residuals[:n].T
            coef = np.linalg.lstsq(B, d, rcond=None)[0]
            if np.linalg.norm(B @ coef - d) > tol * max(1.0, np.linalg.norm(d)):
                return n
        return None

    def zero_respecting_violation(self, tol: float = SUPPORT_TOL) -> int | None:
        """First ``t`` whose support leaves the union of earlier residual supports."""
        x0 = self.iterates[0]
        seen = np.zeros(self.iterates.shape[1], dtype=bool)
        for t in range(self.length):
            supp = np.abs(self.iterates[t] - x0) > tol
            if np.any(supp & ~seen):
                return t
            seen |= np.abs(self.residuals[t]) > tol
        return None


@dataclass(frozen=True)
class LowerBoundReport:
    k: int
    dist_sq: float
    distance_lhs: float
    distance_rhs: float
    normgap_lhs: float
    normgap_rhs: float
    passed: bool

    @property
    def distance_ratio(self) -> float:
        return self.distance_lhs / self.distance_rhs if self.distance_rhs > 0 else np.inf

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"k={self.k}: ||w - v||^2 = {self.distance_lhs:.12g} >= {self.distance_rhs:.12g}; "
            f"(||w|| - ||v||)^2 = {self.normgap_lhs:.12g} >= {self.normgap_rhs:.12g} [{status}]"
        )


def _worst_case_k(op: OperatorSpec) -> int:
    if op.kind == "worst_case":
        return int(op.params["k"])
    if op.kind == "rotated":
        return _worst_case_k(op.params["inner"])
    raise ValueError("operator is not a (rotated) worst-case instance")


def verify_lower_bound(op_worst: OperatorSpec, trace: SpanTrace, mode: str = "span", tol: float = 1e-9) -> LowerBoundReport:
    """Evaluate both lower-bound inequalities on a trace.

    Parameters
    ----------
    op_worst : OperatorSpec
        Output of ``make_worst_case(k, ...)`` or a rotation of it.
    trace : SpanTrace
        Exactly ``k`` iterates ``x^0..x^{k-1}``.
    mode : {"span", "zero_respecting", "unchecked"}
        Structural precondition enforced before evaluating.  Traces pulled
        back through a resisting rotation are zero-respecting but need not
        satisfy the span condition; ``unchecked`` is for ambient traces of
        arbitrary deterministic methods run against a resisting rotation.

    Raises
    ------
    ValueError
        On a structural violation, naming the offending index.
    """
    k = _worst_case_k(op_worst)
    gt = op_worst.ground_truth
    if trace.length != k:
        raise ValueError(f"trace has {trace.length} iterates, the instance is built for k={k}")
    if mode == "span":
        bad = trace.span_violation()
        if bad is not None:
            raise ValueError(f"span condition violated at iterate {bad}")
    elif mode == "zero_respecting":
        bad = trace.zero_respecting_violation()
        if bad is not None:
            raise ValueError(f"zero-respecting condition violated at iterate {bad}")
    elif mode != "unchecked":
        raise ValueError(f"unknown mode {mode!r}")
    x0 = trace.iterates[0]
    dist_sq = float(np.sum((x0 - gt.x_star) ** 2))
    w = trace.weights @ trace.residuals
    lhs1 = float(np.sum((w - gt.v) ** 2))
    lhs2 = float((np.linalg.norm(w) - np.linalg.norm(gt.v)) ** 2)
    rhs1 = 4.0 / k**2 * dist_sq
    rhs2 = 1.0 / (2.0 * k**2) * dist_sq
    passed = lhs1 >= rhs1 - tol * max(1.0, rhs1) and lhs2 >= rhs2 - tol * max(1.0, rhs2)
    return LowerBoundReport(k, dist_sq, lhs1, rhs1, lhs2, rhs2, passed)


# ---------------------------------------------------------------- example algorithms


def picard_algorithm(x0: np.ndarray, residuals: Sequence[np.ndarray]) -> np.ndarray:
    """``x^{t+1} = x^t - r^t``, written against the residual history only."""
    return x0 - np.sum(residuals, axis=0)


def ohm_algorithm(x0: np.ndarray, residuals: Sequence[np.ndarray]) -> np.ndarray:
    """OHM in residual form: ``x^{n+1} = x^0 - sum_{i<=n} (i+1)/(n+2) r^i``."""
    n = len(residuals) - 1
    coef = np.arange(1, n + 2) / (n + 2)
    return x0 - coef @ np.asarray(residuals)


def heavy_ball_algorithm(step: float = 0.8, momentum: float = 0.5) -> Algorithm:
    """Span method ``x^{t+1} = x^t - step r^t + momentum (x^t - x^{t-1})``."""

    def algo(x0: np.ndarray, residuals: Sequence[np.ndarray]) -> np.ndarray:
        prev, cur = x0, x0
        for r in residuals:
            prev, cur = cur, cur - step * r + momentum * (cur - prev)
        return cur

    return algo


def random_span_algorithm(seed: int = 0, scale: float = 1.0) -> Algorithm:
    """Span method with seeded random coefficients on every past residual.

    Coefficients depend only on the seed and the step index, so repeated
    calls with the same history return the same query.
    """

    def algo(x0: np.ndarray, residuals: Sequence[np.ndarray]) -> np.ndarray:
        t = len(residuals)
        coef = make_rng([seed, t]).normal(0.0, scale, size=t)
        return x0 + coef @ np.asarray(residuals)

    return algo


def random_convex_weights(k: int, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(1, ..., 1) draw of length ``k``."""
    return rng.dirichlet(np.ones(k))


def trace_from_algorithm(op: OperatorSpec, algorithm: Algorithm, x0, k: int, weights=None) -> SpanTrace:
    """Run a residual-oracle algorithm for ``k`` queries against ``op``."""
    x0 = as_vector(x0, op.dimension, "x0")
    X, R = [x0], [residual(op, x0)]
    for _ in range(k - 1):
        x = as_vector(algorithm(x0, list(R)), op.dimension)
        X.append(x)
        R.append(residual(op, x))
    if weights is None:
        weights = np.full(k, 1.0 / k)
    return SpanTrace(np.array(X), np.array(R), weights)


# ---------------------------------------------------------------- resisting rotation


@dataclass(frozen=True)
class ResistingResult:
    """Outcome of the adaptive rotation.

    Attributes
    ----------
    op : OperatorSpec
        Rotated worst-case operator on the ambient space.
    U : ndarray, shape (ambient_dim, K+1)
        Isometric embedding with orthonormal columns.
    trace : SpanTrace
        Ambient iterates with residuals recomputed from ``op``.
    pulled_back : SpanTrace
        ``U^T (x^t - x^0)`` with residuals of the inner operator.
    oracle_residuals : ndarray
        Residuals the algorithm actually received.
    """

    op: OperatorSpec
    inner: OperatorSpec
    U: np.ndarray
    trace: SpanTrace
    pulled_back: SpanTrace
    oracle_residuals: np.ndarray


class _Basis:
    """Incrementally grown orthonormal basis (two-pass Gram-Schmidt)."""

    def __init__(self, dim: int):
        self.Q = np.zeros((dim, 0))

    def residual_of(self, x: np.ndarray) -> np.ndarray:
        y = x - self.Q @ (self.Q.T @ x)
        return y - self.Q @ (self.Q.T @ y)

    def add(self, x: np.ndarray, rel_tol: float = 1e-10) -> bool:
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return False
        y = self.residual_of(x)
        ny = np.linalg.norm(y)
        if ny <= rel_tol * nx:
            return False
        self.Q = np.column_stack([self.Q, y / ny])
        return True


def resisting_rotation(
    algorithm: Algorithm,
    inner: OperatorSpec,
    x0,
    v,
    ambient_dim: int,
    K: int,
    seed: int = 0,
    weights=None,
) -> ResistingResult:
    """Adaptively embed ``inner`` so that ``algorithm`` sees a worst case.

    Parameters
    ----------
    algorithm : callable
        ``(x0, past_residuals) -> next query``, called ``K - 1`` times.
    inner : OperatorSpec
        ``make_worst_case(K, ||v||, alpha)``.
    x0 : array_like
        Ambient starting point.
    v : array_like
        Desired displacement vector of the rotated operator; its norm must
        match the inner instance.
    ambient_dim : int
        At least ``2K - 1``.
    K : int
    seed : int
        Seeds the directions used for freshly revealed columns.
    weights : array_like, optional
        Combination weights stored in the returned traces (default uniform).

    Notes
    -----
    Column ``K+1`` (the displacement coordinate) is fixed to ``v / ||v||``.
    Whenever a residual reveals a new coordinate, the matching column is
    drawn orthogonal to every chosen column and to every iterate
    displacement seen so far, so earlier and current queries have zero
    component along it.  Span methods never need more than ``K + 1``
    directions; a method whose iterates leave the revealed subspace at
    every step can need ``2K`` of them, and the construction then aborts
    in dimension ``2K - 1``.

    Raises
    ------
    ValueError
        If the dimension is too small or a fresh direction cannot be found.
    """
    if _worst_case_k(inner) != K or inner.kind != "worst_case":
        raise ValueError(f"inner must be make_worst_case({K}, ...)")
    if ambient_dim < 2 * K - 1:
        raise ValueError(f"ambient dimension {ambient_dim} < 2K - 1 = {2 * K - 1}")
    if ambient_dim < K + 1:
        raise ValueError(f"ambient dimension {ambient_dim} cannot host {K + 1} orthonormal columns")
    x0 = as_vector(x0, ambient_dim, "x0")
    v = as_vector(v, ambient_dim, "v")
    v_norm = inner.params["v_norm"]
    if abs(np.linalg.norm(v) - v_norm) > 1e-10 * max(1.0, v_norm):
        raise ValueError(f"||v|| = {np.linalg.norm(v)} but the inner instance has {v_norm}")
    rng = make_rng(seed)
    M, shift = inner.params["M"], inner.params["shift"]
    cols: dict[int, np.ndarray] = {}
    basis = _Basis(ambient_dim)

    def fresh(idx: int, t: int) -> np.ndarray:
        for _ in range(8):
            y = basis.residual_of(rng.standard_normal(ambient_dim))
            ny = np.linalg.norm(y)
            if ny > 1e-6:
                return y / ny
        raise ValueError(
            f"no direction orthogonal to the revealed subspace (rank {basis.Q.shape[1]}) "
            f"for coordinate {idx + 1} at query {t}; ambient dimension {ambient_dim} too small"
        )

    def reveal(idx: int, t: int, u: np.ndarray | None = None):
        u = fresh(idx, t) if u is None else u
        cols[idx] = u
        basis.add(u)

    if v_norm > 0:
        reveal(K, 0, v / v_norm)

    X, oracle = [], []
    for t in range(K):
        x = x0 if t == 0 else as_vector(algorithm(x0, list(oracle)), ambient_dim, f"query {t}")
        d = x - x0
        z = np.zeros(K + 1)
        for i, u in cols.items():
            z[i] = u @ d
        basis.add(d)
        r = M @ z + shift
        for i in np.flatnonzero(np.abs(r) > SUPPORT_TOL):
            if int(i) not in cols:
                reveal(int(i), t)
        r_amb = np.zeros(ambient_dim)
        for i in np.flatnonzero(np.abs(r) > SUPPORT_TOL):
            r_amb += r[i] * cols[int(i)]
        X.append(x)
        oracle.append(r_amb)

    # coordinates never revealed: complete against the chosen columns only
    done = _Basis(ambient_dim)
    for i in sorted(cols):
        done.add(cols[i])
    for i in range(K + 1):
        if i not in cols:
            for _ in range(8):
                y = done.residual_of(rng.standard_normal(ambient_dim))
                if np.linalg.norm(y) > 1e-6:
                    break
            cols[i] = y / np.linalg.norm(y)
            done.add(cols[i])
    U = np.column_stack([cols[i] for i in range(K + 1)])
    op = rotate_operator(inner, U, x0)
    if v_norm == 0:
        # any direction works; the ground truth already reads U * 0 = 0
        pass
    X = np.array(X)
    R = np.array([residual(op, x) for x in X])
    Z = (X - x0) @ U
    Rin = np.array([residual(inner, z) for z in Z])
    w = np.full(K, 1.0 / K) if weights is None else weights
    return ResistingResult(
        op=op,
        inner=inner,
        U=U,
        trace=SpanTrace(X, R, w),
        pulled_back=SpanTrace(Z, Rin, w),
        oracle_residuals=np.array(oracle),
    )


def default_inner(K: int, v_norm: float = 1.0) -> OperatorSpec:
    """Worst-case instance with the tight choice ``alpha = sqrt(K) * v_norm``."""
    return make_worst_case(K, v_norm)
