"""Nonexpansive test operators with optional ground truth.

An :class:`OperatorSpec` is an immutable description of a map ``T`` on
``R^d`` together with, when known, the infimal displacement vector ``v``
(the minimum-norm element of the closure of the range of ``I - T``) and a
point ``x_star`` with ``x_star - T x_star = v``.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .linalg import as_vector, frozen, make_rng

__all__ = [
    "GroundTruth",
    "OperatorSpec",
    "NonexpansiveAudit",
    "affine",
    "translation",
    "make_counterexample",
    "make_worst_case",
    "worst_case_matrix",
    "rotate_operator",
    "composite",
    "evaluate",
    "residual",
    "audit_nonexpansive",
    "random_orthogonal",
    "random_affine_with_fixed_displacement",
    "to_config",
    "from_config",
]

KINDS = ("affine", "translation", "rotation_shift", "worst_case", "rotated", "composite")


@dataclass(frozen=True)
class GroundTruth:
    """Known displacement vector ``v`` and optional witness ``x_star``."""

    v: np.ndarray
    x_star: np.ndarray | None = None


@dataclass(frozen=True)
class OperatorSpec:
    """Immutable nonexpansive operator description.

    Attributes
    ----------
    kind : str
        One of ``affine``, ``translation``, ``rotation_shift``,
        ``worst_case``, ``rotated``, ``composite``.
    dimension : int
        Dimension of the space the operator acts on.
    params : Mapping
        Kind-specific data (read-only arrays).
    ground_truth : GroundTruth or None
    """

    kind: str
    dimension: int
    params: Mapping[str, Any] = field(default_factory=dict)
    ground_truth: GroundTruth | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    def __call__(self, x):
        return evaluate(self, x)


def _gt(v, x_star=None) -> GroundTruth:
    return GroundTruth(frozen(v), None if x_star is None else frozen(x_star))


# ---------------------------------------------------------------- builders


def affine(A, b, v=None, x_star=None) -> OperatorSpec:
    """``T x = A x + b``.  Nonexpansive iff ``||A||_2 <= 1`` (not checked here)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    b = as_vector(b, A.shape[0], "b")
    gt = None if v is None else _gt(as_vector(v, A.shape[0], "v"), x_star)
    return OperatorSpec("affine", A.shape[0], {"A": frozen(A), "b": frozen(b)}, gt)


def translation(v) -> OperatorSpec:
    """``T x = x - v``; every point is a witness, we attach ``x_star = 0``."""
    v = as_vector(v, name="v")
    return OperatorSpec("translation", v.size, {"v": frozen(v)}, _gt(v, np.zeros_like(v)))


def make_counterexample() -> OperatorSpec:
    """Quarter-turn rotation in the plane combined with a unit drop along z.

    ``T(x, y, z) = (-y, x, z - 1)``.  The residual range is the plane
    ``z = 1``, so ``v = (0, 0, 1)``, attained at the origin.
    """
    return OperatorSpec("rotation_shift", 3, {}, _gt([0.0, 0.0, 1.0], [0.0, 0.0, 0.0]))


def worst_case_matrix(k: int) -> np.ndarray:
    """The ``(k+1) x (k+1)`` matrix ``M`` of the hard instance.

    Row 1 has ones at columns 1 and ``k``; rows ``2..k`` carry a ``-1, 1``
    difference pattern; the last row is zero.  ``I - M`` is a signed
    permutation: ``e1 -> e2 -> ... -> e_k -> -e1`` and ``e_{k+1}`` fixed.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    M = np.zeros((k + 1, k + 1))
    M[0, 0] += 1.0
    M[0, k - 1] += 1.0
    for i in range(1, k):
        M[i, i - 1] = -1.0
        M[i, i] = 1.0
    return M


def make_worst_case(k: int, v_norm: float = 1.0, alpha: float | None = None) -> OperatorSpec:
    """Hard instance for span methods after ``k`` residual queries.

    ``residual(x) = M x + alpha e_1 + v_norm e_{k+1}``.  The default
    ``alpha = sqrt(k) * v_norm`` (or 1 when ``v_norm = 0``) is the choice
    that makes the lower bound tight.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if v_norm < 0:
        raise ValueError("v_norm must be nonnegative")
    if alpha is None:
        alpha = np.sqrt(k) * v_norm if v_norm > 0 else 1.0
    if alpha == 0:
        raise ValueError("alpha = 0 degenerates the hard instance")
    M = worst_case_matrix(k)
    shift = np.zeros(k + 1)
    shift[0] = alpha
    shift[k] = v_norm
    v = np.zeros(k + 1)
    v[k] = v_norm
    x_star = np.zeros(k + 1)
    x_star[:k] = -alpha / 2.0
    params = {
        "k": int(k),
        "v_norm": float(v_norm),
        "alpha": float(alpha),
        "M": frozen(M),
        "shift": frozen(shift),
    }
    return OperatorSpec("worst_case", k + 1, params, _gt(v, x_star))


def _check_orthonormal_columns(U: np.ndarray, tol: float = 1e-10):
    err = np.linalg.norm(U.T @ U - np.eye(U.shape[1]))
    if err > tol:
        raise ValueError(f"U is not orthogonal: ||U^T U - I||_F = {err:.2e}")


def rotate_operator(op: OperatorSpec, U, x0) -> OperatorSpec:
    """Conjugate ``op`` by an isometric embedding.

    ``T_U(y) = U T(U^T (y - x0)) + x0 + (I - U U^T)(y - x0)`` when ``U`` has
    fewer columns than rows; for square ``U`` this is ``U T U^T (y - x0) + x0``.

    Notes
    -----
    For a rectangular ``U`` the orthogonal complement is mapped by the
    identity, which keeps the wrapped map nonexpansive and leaves the
    displacement vector ``U v`` unchanged (the complement contributes zero
    residual).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] != op.dimension:
        raise ValueError("U must have op.dimension columns")
    if U.shape[0] < U.shape[1]:
        raise ValueError("U must have at least as many rows as columns")
    _check_orthonormal_columns(U)
    x0 = as_vector(x0, U.shape[0], "x0")
    gt = None
    if op.ground_truth is not None:
        xs = op.ground_truth.x_star
        gt = _gt(U @ op.ground_truth.v, None if xs is None else x0 + U @ xs)
    return OperatorSpec("rotated", U.shape[0], {"inner": op, "U": frozen(U), "x0": frozen(x0)}, gt)


def composite(dimension: int, apply: Callable[[np.ndarray], np.ndarray], ground_truth=None, **extra) -> OperatorSpec:
    """Wrap an arbitrary map (used for PG-EXTRA and the SDP solver)."""
    params = {"apply": apply, **extra}
    return OperatorSpec("composite", int(dimension), params, ground_truth)


# ---------------------------------------------------------------- evaluation


def _apply(op: OperatorSpec, x: np.ndarray) -> np.ndarray:
    p = op.params
    kind = op.kind
    if kind == "affine":
        return p["A"] @ x + p["b"]
    if kind == "translation":
        return x - p["v"]
    if kind == "rotation_shift":
        return np.array([-x[1], x[0], x[2] - 1.0])
    if kind == "worst_case":
        return x - (p["M"] @ x + p["shift"])
    if kind == "rotated":
        U, x0 = p["U"], p["x0"]
        d = x - x0
        z = U.T @ d
        return U @ _apply(p["inner"], z) + x0 + (d - U @ z)
    if kind == "composite":
        return np.asarray(p["apply"](x), dtype=float)
    raise ValueError(kind)  # pragma: no cover


def evaluate(op: OperatorSpec, x) -> np.ndarray:
    """Return ``T x``."""
    x = as_vector(x, op.dimension)
    return _apply(op, x)


def residual(op: OperatorSpec, x) -> np.ndarray:
    """Return the fixed-point residual ``x - T x``."""
    x = as_vector(x, op.dimension)
    return x - _apply(op, x)


# ---------------------------------------------------------------- auditing


@dataclass(frozen=True)
class NonexpansiveAudit:
    max_ratio: float
    samples: int
    flagged: bool
    worst_pair: tuple[np.ndarray, np.ndarray] | None = None

    def __str__(self):
        status = "FLAGGED" if self.flagged else "ok"
        return f"nonexpansive audit: max ratio {self.max_ratio:.12g} over {self.samples} pairs [{status}]"


def audit_nonexpansive(
    op: OperatorSpec,
    samples: int = 200,
    seed: int = 0,
    scale: float = 1.0,
    norm: Callable[[np.ndarray], float] | None = None,
    sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
    threshold: float = 1e-9,
) -> NonexpansiveAudit:
    """Sampled Lipschitz-constant estimate ``max ||Tx - Ty|| / ||x - y||``.

    ``norm`` lets callers audit in a non-Euclidean metric and ``sampler``
    overrides the default Gaussian point distribution.
    """
    rng = make_rng(seed)
    norm = norm or (lambda z: float(np.linalg.norm(z)))
    draw = sampler or (lambda g: scale * g.standard_normal(op.dimension))
    worst, pair = 0.0, None
    for _ in range(samples):
        x, y = draw(rng), draw(rng)
        den = norm(x - y)
        if den == 0.0:
            continue
        ratio = norm(evaluate(op, x) - evaluate(op, y)) / den
        if ratio > worst:
            worst, pair = ratio, (x, y)
    return NonexpansiveAudit(worst, samples, worst > 1.0 + threshold, pair)


# ---------------------------------------------------------------- random zoo


def random_orthogonal(n: int, rng: np.random.Generator, cols: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrix (or its first ``cols`` columns)."""
    G = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(G)
    Q = Q * np.sign(np.diag(R))
    return Q if cols is None else Q[:, :cols]


def random_affine_with_fixed_displacement(dim: int, rng: np.random.Generator, x0_scale: float | None = None):
    """Random nonexpansive affine operator with attained displacement vector.

    A unit direction ``u`` is made an eigenvector of ``A`` with eigenvalue 1
    and the rest of ``A`` is a random block scaled to spectral norm at most
    one.  Then ``I - A`` is singular along ``u``, the component of ``b``
    along ``u`` cannot be cancelled, and ``v = -(u . b) u``.

    Returns
    -------
    op : OperatorSpec
    x0 : ndarray
        Random starting point whose scale is drawn from {0.1, 1, 10}
        unless ``x0_scale`` is given.
    """
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    P = np.eye(dim) - np.outer(u, u)
    B = rng.standard_normal((dim, dim))
    B /= np.linalg.norm(B, 2)
    A = P @ B @ P
    A /= max(1.0, np.linalg.norm(A, 2))
    A = A + np.outer(u, u)
    b = rng.standard_normal(dim)
    v = -(u @ b) * u
    # x_star solves (I - A) x = b + v, consistent because b + v is orthogonal to u
    x_star = np.linalg.lstsq(np.eye(dim) - A, b + v, rcond=None)[0]
    if x0_scale is None:
        x0_scale = float(rng.choice([0.1, 1.0, 10.0]))
    x0 = x0_scale * rng.standard_normal(dim)
    return affine(A, b, v=v, x_star=x_star), x0


# ---------------------------------------------------------------- text config


def _fmt_vec(a) -> str:
    return ",".join(repr(float(t)) for t in np.asarray(a).ravel())


def _fmt_mat(A) -> str:
    return ";".join(_fmt_vec(row) for row in np.asarray(A))


def _parse_vec(s: str) -> np.ndarray:
    return np.array([float(t) for t in s.split(",") if t.strip()])


def _parse_mat(s: str) -> np.ndarray:
    return np.array([_parse_vec(row) for row in s.split(";")])


def _write_section(cp: configparser.ConfigParser, name: str, op: OperatorSpec):
    sec: dict[str, str] = {"kind": op.kind, "dimension": str(op.dimension)}
    p = op.params
    if op.kind == "affine":
        sec["A"] = _fmt_mat(p["A"])
        sec["b"] = _fmt_vec(p["b"])
    elif op.kind == "translation":
        sec["v"] = _fmt_vec(p["v"])
    elif op.kind == "worst_case":
        sec["k"] = str(p["k"])
        sec["v_norm"] = repr(p["v_norm"])
        sec["alpha"] = repr(p["alpha"])
    elif op.kind == "rotated":
        sec["U"] = _fmt_mat(p["U"])
        sec["x0"] = _fmt_vec(p["x0"])
        _write_section(cp, name + ".inner", p["inner"])
    elif op.kind == "composite":
        raise ValueError("composite operators are built in code and cannot be serialized")
    if op.kind == "affine" and op.ground_truth is not None:
        sec["v"] = _fmt_vec(op.ground_truth.v)
        if op.ground_truth.x_star is not None:
            sec["x_star"] = _fmt_vec(op.ground_truth.x_star)
    cp[name] = sec


def to_config(op: OperatorSpec) -> str:
    """Serialize to an INI-style document; nested operators live in ``[operator.inner]``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep "A" and "U" upper-case
    _write_section(cp, "operator", op)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


_ALLOWED_KEYS = {
    "affine": {"kind", "dimension", "A", "b", "v", "x_star"},
    "translation": {"kind", "dimension", "v"},
    "rotation_shift": {"kind", "dimension"},
    "worst_case": {"kind", "dimension", "k", "v_norm", "alpha"},
    "rotated": {"kind", "dimension", "U", "x0"},
}


def _read_section(cp: configparser.ConfigParser, name: str) -> OperatorSpec:
    if name not in cp:
        raise ValueError(f"missing section [{name}]")
    sec = cp[name]
    kind = sec.get("kind")
    if kind not in _ALLOWED_KEYS:
        raise ValueError(f"[{name}] has unsupported kind {kind!r}")
    unknown = set(sec.keys()) - _ALLOWED_KEYS[kind]
    if unknown:
        raise ValueError(f"[{name}] has unknown keys {sorted(unknown)}")
    if kind == "affine":
        gt_v = _parse_vec(sec["v"]) if "v" in sec else None
        xs = _parse_vec(sec["x_star"]) if "x_star" in sec else None
        op = affine(_parse_mat(sec["A"]), _parse_vec(sec["b"]), v=gt_v, x_star=xs)
    elif kind == "translation":
        op = translation(_parse_vec(sec["v"]))
    elif kind == "rotation_shift":
        op = make_counterexample()
    elif kind == "worst_case":
        alpha = float(sec["alpha"]) if "alpha" in sec else None
        op = make_worst_case(int(sec["k"]), float(sec.get("v_norm", "1")), alpha)
    else:
        inner = _read_section(cp, name + ".inner")
        op = rotate_operator(inner, _parse_mat(sec["U"]), _parse_vec(sec["x0"]))
    if "dimension" in sec and int(sec["dimension"]) != op.dimension:
        raise ValueError(f"[{name}] declares dimension {sec['dimension']} but builds {op.dimension}")
    return op


def from_config(text: str) -> OperatorSpec:
    """Inverse of :func:`to_config`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    return _read_section(cp, "operator")
