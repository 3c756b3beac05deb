"""Performance estimation SDP for OHM on inconsistent nonexpansive operators.

The Gram matrix ``Z = G^T G`` has order ``k + 3`` with columns of ``G``
ordered as ``[r^0, ..., r^k, v, x^0 - x_star]`` (``r^i`` the residual at the
OHM iterate ``x^i``).  OHM iterates are encoded through

    x^i - x^0 = -sum_{l<i} (l+1)/(i+1) r^l,

so every interpolation inequality becomes a linear trace constraint on
``Z``.  The SDP maximizes ``||r^k - v||^2`` subject to those inequalities and
``||x^0 - x_star||^2 <= 1``.

Indices in docstrings below are 1-based like the Gram columns; code uses
0-based arrays.
"""

from __future__ import annotations

import io
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import harmonic
from .linalg import project_psd, spectral_norm, sym_outer
from .operators import composite
from .schedules import Schedule, iterate, km

__all__ = [
    "PepConstraint",
    "PepProblem",
    "build_pep",
    "gram_from_trajectory",
    "export_sdpa",
    "read_sdpa",
    "dump_text",
    "PepSolveOptions",
    "PepSolution",
    "solve_pep",
    "pep_bounds",
    "PepBoundReport",
    "verify_pep_bounds",
]

SENSES = (">=0", "<=0", "<=1")


@dataclass(frozen=True)
class PepConstraint:
    """``tr(matrix @ Z)`` compared with 0 or 1 according to ``sense``.

    ``tag`` is a tuple such as ``("nonexp", i, j)``, ``("nonexp_star", i)``,
    ``("idv", i)``, ``("radius",)`` or ``("idv_cap",)``.
    """

    matrix: np.ndarray
    sense: str
    tag: tuple

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")

    @property
    def rhs(self) -> float:
        return 1.0 if self.sense == "<=1" else 0.0

    def value(self, Z: np.ndarray) -> float:
        return float(np.sum(self.matrix * Z))

    def violation(self, Z: np.ndarray) -> float:
        t = self.value(Z)
        if self.sense == ">=0":
            return max(0.0, -t)
        return max(0.0, t - self.rhs)


@dataclass(frozen=True)
class PepProblem:
    """SDP data over symmetric matrices of order ``k + 3``.

    Attributes
    ----------
    k : int
        OHM iteration count whose residual is measured.
    objective : ndarray
        ``C_k``; the SDP maximizes ``tr(C_k Z)``.
    constraints : tuple of PepConstraint
    v_norm_cap : float or None
        Optional extra constraint ``||v||^2 <= cap`` (not part of the
        standard problem; see :func:`build_pep`).
    """

    k: int
    objective: np.ndarray
    constraints: tuple
    v_norm_cap: float | None = None

    @property
    def order(self) -> int:
        return self.k + 3

    def count(self, kind: str) -> int:
        return sum(1 for c in self.constraints if c.tag[0] == kind)

    def objective_value(self, Z: np.ndarray) -> float:
        return float(np.sum(self.objective * Z))

    def max_violation(self, Z: np.ndarray) -> float:
        return max(c.violation(Z) for c in self.constraints)


def _e(i: int, n: int) -> np.ndarray:
    """1-based canonical basis vector."""
    out = np.zeros(n)
    out[i - 1] = 1.0
    return out


def _ohm_coeffs(i: int, n: int) -> np.ndarray:
    """Coefficients ``a_i`` with ``x^i - x^0 = -G a_i``."""
    a = np.zeros(n)
    for l in range(i):
        a[l] = (l + 1) / (i + 1)
    return a


def build_pep(k: int, v_norm_cap: float | None = None) -> PepProblem:
    """Assemble the OHM performance estimation SDP for iteration ``k``.

    Constraints, in order:

    * ``nonexp(i, j)`` for every ordered pair ``i != j``:
      ``tr(A_ij Z) >= 0`` with ``A_ij = -2 d (.) (a_i - a_j) - d d^T``,
      ``d = e_{i+1} - e_{j+1}``.  This is
      ``2<x^i - x^j, r^i - r^j> - ||r^i - r^j||^2 >= 0``, i.e.
      ``||T x^i - T x^j|| <= ||x^i - x^j||``.  Both orders are kept so the
      count is ``k (k + 1)``.
    * ``nonexp_star(i)``: the same inequality between ``x^i`` and ``x_star``
      whose residual is ``v``.
    * ``idv(i)``: ``<r^i - v, v> >= 0``, with
      ``B_i = (e_{i+1} - e_{k+2}) (.) e_{k+2}``.
    * ``radius``: ``tr(e_{k+3} e_{k+3}^T Z) <= 1``.

    ``(.)`` is the symmetric outer product.

    Parameters
    ----------
    k : int
        ``k >= 1``.
    v_norm_cap : float, optional
        Adds ``||v||^2 <= v_norm_cap`` (tag ``idv_cap``).  Off by default;
        without it the supremum is approached only as ``||v|| -> inf``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = k + 3
    cons: list[PepConstraint] = []
    for i in range(k + 1):
        for j in range(k + 1):
            if i == j:
                continue
            d = _e(i + 1, n) - _e(j + 1, n)
            A = -2.0 * sym_outer(d, _ohm_coeffs(i, n) - _ohm_coeffs(j, n)) - np.outer(d, d)
            cons.append(PepConstraint(A, ">=0", ("nonexp", i, j)))
    for i in range(k + 1):
        d = _e(i + 1, n) - _e(k + 2, n)
        A = -2.0 * sym_outer(d, _ohm_coeffs(i, n) - _e(k + 3, n)) - np.outer(d, d)
        cons.append(PepConstraint(A, ">=0", ("nonexp_star", i)))
    for i in range(k + 1):
        B = sym_outer(_e(i + 1, n) - _e(k + 2, n), _e(k + 2, n))
        cons.append(PepConstraint(B, ">=0", ("idv", i)))
    cons.append(PepConstraint(np.outer(_e(k + 3, n), _e(k + 3, n)), "<=1", ("radius",)))
    if v_norm_cap is not None:
        if v_norm_cap < 0:
            raise ValueError("v_norm_cap must be nonnegative")
        E = np.outer(_e(k + 2, n), _e(k + 2, n))
        if v_norm_cap == 0:
            cons.append(PepConstraint(E, "<=0", ("idv_cap",)))
        else:
            cons.append(PepConstraint(E / v_norm_cap, "<=1", ("idv_cap",)))
    d = _e(k + 1, n) - _e(k + 2, n)
    return PepProblem(k, np.outer(d, d), tuple(cons), v_norm_cap)


def gram_from_trajectory(residuals: np.ndarray, v: np.ndarray, x0: np.ndarray, x_star: np.ndarray) -> np.ndarray:
    """``Z = G^T G`` for ``G = [r^0 .. r^k, v, x^0 - x_star]``."""
    G = np.column_stack(list(residuals) + [v, x0 - x_star])
    return G.T @ G


# ---------------------------------------------------------------- SDPA files


def _tag_str(tag: tuple) -> str:
    return ":".join(str(t) for t in tag)


def _parse_tag(s: str) -> tuple:
    parts = s.split(":")
    return (parts[0],) + tuple(int(p) for p in parts[1:])


def _sdpa_text(problem: PepProblem) -> str:
    n = problem.order
    m = len(problem.constraints)
    out = io.StringIO()
    out.write(f'" OHM performance estimation problem, k={problem.k}\n')
    out.write('" maximize tr(F0 Y) subject to tr(Fi Y) (sense_i) c_i, Y psd\n')
    out.write('" rows with sense >= read tr(Fi Y) - c_i = s_i >= 0; rows with sense <= read c_i - tr(Fi Y) = s_i >= 0\n')
    out.write('" an equality-form solver needs one extra diagonal slack block carrying s\n')
    if problem.v_norm_cap is not None:
        out.write(f"* v_norm_cap {problem.v_norm_cap!r}\n")
    for idx, c in enumerate(problem.constraints, start=1):
        sense = ">=" if c.sense == ">=0" else "<="
        out.write(f"* con {idx} {sense} {_tag_str(c.tag)}\n")
    out.write(f"{m} = mDIM\n1 = nBLOCK\n{n} = bLOCKsTRUCT\n")
    out.write(" ".join(f"{c.rhs:.17g}" for c in problem.constraints) + "\n")
    mats = [problem.objective] + [c.matrix for c in problem.constraints]
    for matno, A in enumerate(mats):
        for i in range(n):
            for j in range(i, n):
                if A[i, j] != 0.0:
                    out.write(f"{matno} 1 {i + 1} {j + 1} {A[i, j]:.17g}\n")
    return out.getvalue()


def export_sdpa(problem: PepProblem, destination) -> str:
    """Write the problem in sparse SDPA format.

    ``destination`` may be a path or a writable text stream.  Constraint
    senses and tags go in comment lines (``"`` or ``*``) ahead of the data
    so :func:`read_sdpa` can rebuild the exact problem.  Returns the text.
    """
    text = _sdpa_text(problem)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(os.fspath(destination), "w") as fh:
            fh.write(text)
    return text


def read_sdpa(source) -> PepProblem:
    """Parse a file written by :func:`export_sdpa` (path, stream or text)."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(os.fspath(source)) as fh:
            text = fh.read()
    k = None
    cap = None
    meta: dict[int, tuple[str, tuple]] = {}
    data: list[str] = []
    for line in text.splitlines():
        s = line.strip()
        if not s:
            continue
        if s.startswith('"'):
            if "k=" in s:
                k = int(s.split("k=")[1].split()[0])
            continue
        if s.startswith("*"):
            parts = s[1:].split()
            if parts and parts[0] == "con":
                meta[int(parts[1])] = (parts[2], _parse_tag(parts[3]))
            elif parts and parts[0] == "v_norm_cap":
                cap = float(parts[1])
            continue
        data.append(s)
    m = int(data[0].split()[0])
    nblock = int(data[1].split()[0])
    if nblock != 1:
        raise ValueError("only single-block problems are supported")
    n = int(data[2].split()[0].strip("{}(),"))
    rhs = [float(t) for t in data[3].replace(",", " ").replace("{", " ").replace("}", " ").split()]
    if len(rhs) != m:
        raise ValueError(f"RHS has {len(rhs)} entries, expected {m}")
    mats = [np.zeros((n, n)) for _ in range(m + 1)]
    for s in data[4:]:
        matno, blk, i, j, val = s.split()
        A = mats[int(matno)]
        A[int(i) - 1, int(j) - 1] = float(val)
        A[int(j) - 1, int(i) - 1] = float(val)
    if k is None:
        k = n - 3
    cons = []
    for idx in range(1, m + 1):
        sense_sym, tag = meta.get(idx, (">=", ("unknown", idx)))
        if sense_sym == ">=":
            sense = ">=0"
        else:
            sense = "<=1" if rhs[idx - 1] == 1.0 else "<=0"
        cons.append(PepConstraint(mats[idx], sense, tag))
    return PepProblem(k, mats[0], tuple(cons), cap)


def dump_text(problem: PepProblem) -> str:
    """Human-readable dump: one section per matrix, dense rows."""
    out = io.StringIO()
    out.write(f"# k = {problem.k}, order = {problem.order}, constraints = {len(problem.constraints)}\n")

    def block(title, A):
        out.write(f"[{title}]\n")
        for row in A:
            out.write(" ".join(f"{x:g}" for x in row) + "\n")

    block("objective", problem.objective)
    for c in problem.constraints:
        block(f"{_tag_str(c.tag)} {c.sense}", c.matrix)
    return out.getvalue()


# ---------------------------------------------------------------- solver


@dataclass(frozen=True)
class PepSolveOptions:
    """Settings of the primal-dual solver.

    Attributes
    ----------
    max_iter : int
    tol : float
        Relative threshold on primal residual, dual residual and gap.
    check_every : int
        Iterations between convergence checks.
    primal_weight : float
        Ratio ``sigma / tau`` of dual to primal step; small values favour
        the dual, which suits these problems.
    step_fraction : float
        ``tau * sigma * ||L||^2 = step_fraction^2 < 1``.
    relaxation : float
        KM parameter applied on top of the primal-dual map (0 means plain
        primal-dual steps).
    """

    max_iter: int = 200_000
    tol: float = 1e-6
    check_every: int = 500
    primal_weight: float = 0.2
    step_fraction: float = 0.9
    relaxation: float = 0.0


@dataclass(frozen=True)
class PepSolution:
    value: float
    Z: np.ndarray
    y: np.ndarray
    accurate: bool
    diagnostics: dict = field(default_factory=dict)


class _Layout:
    """Vectorized constraint operator with unit-norm rows."""

    def __init__(self, problem: PepProblem):
        n = problem.order
        self.n = n
        raw = np.array([c.matrix.ravel() for c in problem.constraints])
        self.row_norm = np.linalg.norm(raw, axis=1)
        self.L = raw / self.row_norm[:, None]
        self.rhs = np.array([c.rhs for c in problem.constraints]) / self.row_norm
        self.ge = np.array([c.sense == ">=0" for c in problem.constraints])
        self.c = problem.objective.ravel()

    def proj_K(self, s: np.ndarray) -> np.ndarray:
        return np.where(self.ge, np.maximum(s, 0.0), np.minimum(s, self.rhs))


def _psd_part(M: np.ndarray) -> np.ndarray:
    M = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(M)
    return (Q * np.maximum(w, 0.0)) @ Q.T


def solve_pep(problem: PepProblem, options: PepSolveOptions | None = None, **overrides) -> PepSolution:
    """Approximately maximize the SDP with a primal-dual hybrid gradient method.

    One primal-dual step

        Z+ = P_psd(Z - tau (L^T y - C)),
        y+ = w - sigma P_K(w / sigma),   w = y + sigma L (2 Z+ - Z),

    is a nonexpansive map on the stacked state ``(Z, y)`` (in the metric of
    the method), so it is wrapped as an operator and driven by the package's
    own KM iteration.  The PSD projection inside each step uses LAPACK
    through :func:`numpy.linalg.eigh`.

    Convergence is declared when the relative primal residual, the dual
    residual (negative part of ``L^T y - C``) and the duality gap all fall
    below ``tol``.  Otherwise the checkpoint with the smallest combined
    residual is returned with ``accurate = False``.
    """
    opts = options or PepSolveOptions()
    if overrides:
        opts = PepSolveOptions(**{**opts.__dict__, **overrides})
    lay = _Layout(problem)
    n, m = lay.n, lay.L.shape[0]
    Lnorm = spectral_norm(lay.L, tol=1e-10)
    eta = opts.step_fraction / Lnorm
    tau, sigma = eta / opts.primal_weight, eta * opts.primal_weight
    N = n * n
    L, c = lay.L, lay.c

    def step(state: np.ndarray) -> np.ndarray:
        Z, y = state[:N], state[N:]
        Zn = _psd_part((Z - tau * (L.T @ y - c)).reshape(n, n)).ravel()
        w = y + sigma * (L @ (2.0 * Zn - Z))
        yn = w - sigma * lay.proj_K(w / sigma)
        return np.concatenate([Zn, yn])

    op = composite(N + m, step)
    sched: Schedule = km(opts.relaxation)
    scale_c = max(1.0, float(np.linalg.norm(c)))
    best = None
    history = []
    t0 = time.perf_counter()
    accurate = False
    it = 0
    for it, state, image in iterate(op, sched, np.zeros(N + m)):
        if it % opts.check_every == 0 or it >= opts.max_iter:
            # the image is the freshly projected (hence PSD) primal point
            Z = image[:N].reshape(n, n)
            y = image[N:]
            s = L @ Z.ravel()
            p_res = float(np.linalg.norm(s - lay.proj_K(s))) / (1.0 + float(np.linalg.norm(lay.rhs)))
            S = (L.T @ y - c).reshape(n, n)
            S = 0.5 * (S + S.T)
            neg = S - _psd_part(S)
            y_feas = np.where(lay.ge, np.minimum(y, 0.0), np.maximum(y, 0.0))
            d_res = (float(np.linalg.norm(neg)) + float(np.linalg.norm(y - y_feas))) / scale_c
            pobj = float(c @ Z.ravel())
            dobj = float(np.sum(np.where(lay.ge, 0.0, lay.rhs * y)))
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            score = max(p_res, d_res, gap)
            history.append((it, pobj, dobj, p_res, d_res, gap))
            if best is None or score <= best[0]:
                best = (score, it, image.copy())
            if score < opts.tol:
                accurate = True
                break
        if it >= opts.max_iter:
            break
    score, best_it, state = best
    Z = state[:N].reshape(n, n)
    Z = 0.5 * (Z + Z.T)
    Zr = project_psd(Z, "plus", method="lapack")
    raw_obj = problem.objective_value(Z)
    value = problem.objective_value(Zr)
    y = state[N:] / lay.row_norm
    diag = {
        "iterations": int(it),
        "best_iteration": int(best_it),
        "score": float(score),
        "primal_residual": history[-1][3] if history else np.nan,
        "dual_residual": history[-1][4] if history else np.nan,
        "gap": history[-1][5] if history else np.nan,
        "raw_objective": raw_obj,
        "rounding_gap": abs(raw_obj - value),
        "max_violation": problem.max_violation(Zr),
        "min_eig": float(np.linalg.eigvalsh(Zr)[0]),
        "v_norm_sq": float(Zr[problem.k + 1, problem.k + 1]),
        "elapsed_s": time.perf_counter() - t0,
        "history": history,
    }
    return PepSolution(value, Zr, y, accurate, diag)


# ---------------------------------------------------------------- bounds


def pep_bounds(k: int) -> tuple[float, float]:
    """Lower and upper bracket for the unit-radius SDP value at ``k``.

    The lower end is the span lower bound with ``k + 1`` residuals
    (OHM's ``k``-th residual is a combination of ``r^0..r^k``); the upper
    end is the OHM residual envelope.
    """
    lower = 4.0 / (k + 1) ** 2
    upper = ((np.sqrt(harmonic(k) + 4.0) + 1.0) / (k + 1)) ** 2
    return lower, upper


@dataclass(frozen=True)
class PepBoundReport:
    k: int
    value: float
    lower: float
    upper: float
    slack: float
    passed: bool
    side: str

    def __str__(self):
        status = "PASS" if self.passed else f"FAIL ({self.side})"
        return f"k={self.k}: {self.lower:.6g} <= {self.value:.9g} <= {self.upper:.6g} [{status}]"


def verify_pep_bounds(k: int, value: float, rel_slack: float = 0.05, tol: float = 1e-6) -> PepBoundReport:
    """Check ``lower - slack <= value <= upper + slack`` (5% relative plus ``tol``)."""
    lower, upper = pep_bounds(k)
    lo_ok = value >= lower * (1 - rel_slack) - tol
    hi_ok = value <= upper * (1 + rel_slack) + tol
    side = "" if lo_ok and hi_ok else ("low" if not lo_ok else "high")
    return PepBoundReport(k, float(value), lower, upper, rel_slack, lo_ok and hi_ok, side)
