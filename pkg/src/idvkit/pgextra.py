"""Decentralized SDP infeasibility experiment with PG-EXTRA.

``p`` agents share a decision vector ``x in R^m``.  Agent ``i`` privately
holds ``c_i`` and an LMI ``sum_j A_i^j x_j <= B_i`` (order ``n``) and talks
to its graph neighbours through a mixing matrix ``W``.  One PG-EXTRA sweep
is a forward-backward step under the metric

    M = [[I/alpha, L^*], [L, I/beta]],

so it is nonexpansive in the M-norm and the package's iterations (Picard,
OHM, KM) apply to it unchanged.  On an infeasible instance the normalized
iterate converges to the infimal displacement vector, which certifies
infeasibility.

The state vector stacks ``x`` (p x m), the dual matrices ``u_i`` (p of
them, n x n) and the consensus variable ``w`` (p x m).
"""

from __future__ import annotations

import configparser
import csv
import io
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .linalg import as_symmetric, make_rng, project_psd, spectral_norm, sym_eig
from .operators import OperatorSpec, composite
from .schedules import Schedule, iterate, km, ohm, picard

__all__ = [
    "SdpInstance",
    "make_infeasible_chain",
    "MixingMatrix",
    "metropolis_weights",
    "ring_with_chords",
    "StateLayout",
    "PgExtra",
    "pg_extra_operator",
    "m_norm_sq",
    "PgExtraConfig",
    "load_config",
    "ExperimentResult",
    "run_experiment",
    "PGEXTRA_COLUMNS",
]


# ---------------------------------------------------------------- instance


@dataclass(frozen=True)
class SdpInstance:
    """Per-agent LMI data.

    Attributes
    ----------
    A : ndarray, shape (p, m, n, n)
        ``A[i, j]`` is the coefficient matrix of ``x_j`` for agent ``i``.
    B : ndarray, shape (p, n, n)
    c : ndarray, shape (p, m)
    diagnostics : dict
        Notes from the builder (e.g. agents that received no constraint).
    """

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        A, B, c = (np.asarray(t, dtype=float) for t in (self.A, self.B, self.c))
        if A.ndim != 4 or A.shape[2] != A.shape[3]:
            raise ValueError("A must have shape (p, m, n, n)")
        p, m, n, _ = A.shape
        if B.shape != (p, n, n) or c.shape != (p, m):
            raise ValueError("inconsistent instance shapes")
        for i in range(p):
            as_symmetric(B[i])
            for j in range(m):
                as_symmetric(A[i, j])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def n(self) -> int:
        return self.A.shape[2]

    def lmi(self, i: int, x) -> np.ndarray:
        """``sum_j A_i^j x_j``."""
        return np.tensordot(np.asarray(x, dtype=float), self.A[i], axes=(0, 0))

    def adjoint(self, i: int, u: np.ndarray) -> np.ndarray:
        """``(tr(A_i^j u))_j``."""
        return np.einsum("jab,ab->j", self.A[i], u)

    def max_violation(self, x) -> float:
        """Largest eigenvalue of ``A_i[x] - B_i`` over agents (<= 0 means feasible)."""
        return max(float(np.linalg.eigvalsh(self.lmi(i, x) - self.B[i])[-1]) for i in range(self.p))


def _chain_lmis(m: int, epsilon: float):
    """2x2 LMIs ``A[x] <= B`` as (dict var -> 2x2 coefficient, 2x2 rhs, label)."""
    E11 = np.array([[1.0, 0.0], [0.0, 0.0]])
    E22 = np.array([[0.0, 0.0], [0.0, 1.0]])
    Eoff = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = []
    # [[x_i, x_{i+1}], [x_{i+1}, eps]] >= 0  <=>  -x_i E11 - x_{i+1} Eoff <= eps E22
    for i in range(m - 2):
        out.append(({i: -E11, i + 1: -Eoff}, epsilon * E22, f"chain{i + 1}"))
    for i in range(m - 2):
        out.append(({i: E11, i + 1: -Eoff}, epsilon * E22, f"flipped{i + 1}"))
    # [[x_1, 0], [0, x_m]] >= I  <=>  -x_1 E11 - x_m E22 <= -I
    out.append(({0: -E11, m - 1: -E22}, -np.eye(2), "final"))
    return out


def make_infeasible_chain(
    m: int = 11,
    epsilon: float = 0.5,
    p: int = 10,
    n: int = 10,
    seed: int = 0,
    objective: str = "random",
) -> SdpInstance:
    """Chained 2x2 LMIs whose conjunction is infeasible.

    The chain ``x_i >= x_{i+1}^2 / eps`` and its sign-flipped copy
    ``-x_i >= x_{i+1}^2 / eps`` (``i = 1..m-2``) pin ``x_1..x_{m-1}`` to
    zero; the final block ``diag(x_1, x_m) >= I`` then asks for
    ``x_1 >= 1``.  The ``2(m-2) + 1`` LMIs are dealt round-robin to the
    ``p`` agents and the ``r``-th LMI of an agent occupies diagonal slot
    ``r`` (rows ``2r, 2r+1``) of its zero-padded ``n x n`` block.

    Raises
    ------
    ValueError
        If an agent would need more than ``n // 2`` slots.
    """
    if m < 3:
        raise ValueError("m must be >= 3")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if p < 1 or n < 2:
        raise ValueError("need p >= 1 and n >= 2")
    lmis = _chain_lmis(m, epsilon)
    per_agent: list[list] = [[] for _ in range(p)]
    for idx, lmi in enumerate(lmis):
        per_agent[idx % p].append(lmi)
    most = max(len(a) for a in per_agent)
    if 2 * most > n:
        raise ValueError(f"an agent holds {most} LMIs, needing order >= {2 * most}, got n={n}")
    A = np.zeros((p, m, n, n))
    B = np.zeros((p, n, n))
    for i, items in enumerate(per_agent):
        for r, (coef, rhs, _) in enumerate(items):
            sl = slice(2 * r, 2 * r + 2)
            for j, mat in coef.items():
                A[i, j, sl, sl] += mat
            B[i, sl, sl] = rhs
    if objective == "random":
        c = make_rng(seed).uniform(-0.1, 0.1, size=(p, m))
    elif objective == "zero":
        c = np.zeros((p, m))
    else:
        raise ValueError("objective must be 'random' or 'zero'")
    idle = [i for i, a in enumerate(per_agent) if not a]
    diagnostics = {
        "constraints": len(lmis),
        "assignment": [[lab for *_, lab in a] for a in per_agent],
        "idle_agents": idle,
    }
    return SdpInstance(A, B, c, diagnostics)


# ---------------------------------------------------------------- graph


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic ``W`` with the spectrum of ``I - W``.

    ``sigma`` holds the eigenvalues of ``I - W`` in descending order and
    ``V`` the eigenvectors; the last pair is the consensus direction.
    """

    W: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def p(self) -> int:
        return self.W.shape[0]


def ring_with_chords(p: int) -> list[tuple[int, int]]:
    """Ring over ``p`` nodes plus chords ``{i, i + p/2}`` when ``p`` is even."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if p == 1:
        return []
    if p == 2:
        return [(0, 1)]
    edges = {tuple(sorted((i, (i + 1) % p))) for i in range(p)}
    if p % 2 == 0 and p > 4:
        edges |= {tuple(sorted((i, i + p // 2))) for i in range(p // 2)}
    return sorted(edges)


def metropolis_weights(edges: Sequence[tuple[int, int]], p: int | None = None) -> MixingMatrix:
    """Metropolis weights ``W_ij = 1 / (1 + max(deg_i, deg_j))`` on a connected graph."""
    edges = sorted({tuple(sorted((int(a), int(b)))) for a, b in edges})
    if any(a == b for a, b in edges):
        raise ValueError("self-loops are not allowed")
    if p is None:
        p = 1 + max((b for _, b in edges), default=0)
    deg = np.zeros(p, dtype=int)
    adj: list[set] = [set() for _ in range(p)]
    for a, b in edges:
        if b >= p:
            raise ValueError(f"edge ({a}, {b}) outside {p} nodes")
        deg[a] += 1
        deg[b] += 1
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != p:
        raise ValueError(f"graph is disconnected ({len(seen)} of {p} nodes reachable)")
    W = np.zeros((p, p))
    for a, b in edges:
        W[a, b] = W[b, a] = 1.0 / (1.0 + max(deg[a], deg[b]))
    W[np.diag_indices(p)] = 1.0 - W.sum(axis=1)
    sigma, V = sym_eig(np.eye(p) - W)
    return MixingMatrix(W, sigma, V)


# ---------------------------------------------------------------- operator


@dataclass(frozen=True)
class StateLayout:
    p: int
    m: int
    n: int

    @property
    def size(self) -> int:
        return 2 * self.p * self.m + self.p * self.n * self.n

    def unpack(self, z: np.ndarray):
        p, m, n = self.p, self.m, self.n
        a = p * m
        b = a + p * n * n
        return z[:a].reshape(p, m), z[a:b].reshape(p, n, n), z[b:].reshape(p, m)

    def pack(self, x, u, w) -> np.ndarray:
        return np.concatenate([np.ravel(x), np.ravel(u), np.ravel(w)])


@dataclass(frozen=True)
class PgExtra:
    """PG-EXTRA sweep plus the metric needed to measure it.

    Attributes
    ----------
    instance, mixing : SdpInstance, MixingMatrix
    alpha, beta : float
    layout : StateLayout
    op : OperatorSpec
        Composite operator performing one sweep.
    coupling_norm : float
        ``||L||`` of the coupling operator; the metric is positive definite
        iff ``alpha * beta * ||L||^2 < 1``.
    """

    instance: SdpInstance
    mixing: MixingMatrix
    alpha: float
    beta: float
    layout: StateLayout
    op: OperatorSpec
    coupling_norm: float
    eig_method: str = "lapack"

    def sweep(self, z: np.ndarray) -> np.ndarray:
        return self.op.params["apply"](z)

    def to_y(self, w: np.ndarray) -> np.ndarray:
        """Recover the scaled dual ``y`` with ``beta w = U y``, ``U = (1/2 (I - W))^{1/2}``."""
        sig, V = self.mixing.sigma[:-1], self.mixing.V[:, :-1]
        coords = V.T @ (self.beta * w)  # (p-1, m)
        return V @ (coords / np.sqrt(sig / 2.0)[:, None])

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """M inner product of two state vectors (differences of states)."""
        return m_inner(a, b, self)

    def norm_sq(self, a: np.ndarray) -> float:
        return m_inner(a, a, self)

    def metric_matrix(self) -> np.ndarray:
        """Dense M on (x, u, y) coordinates; for checks on small instances."""
        L = _coupling_matrix(self.instance, self.mixing)
        nx = L.shape[1]
        ny = L.shape[0]
        M = np.zeros((nx + ny, nx + ny))
        M[:nx, :nx] = np.eye(nx) / self.alpha
        M[nx:, nx:] = np.eye(ny) / self.beta
        M[:nx, nx:] = L.T
        M[nx:, :nx] = L
        return M

    def to_xuy(self, z: np.ndarray) -> np.ndarray:
        x, u, w = self.layout.unpack(z)
        return np.concatenate([x.ravel(), u.ravel(), self.to_y(w).ravel()])


def _sqrt_half_laplacian(mix: MixingMatrix) -> np.ndarray:
    sig = np.clip(mix.sigma, 0.0, None)
    return (mix.V * np.sqrt(sig / 2.0)) @ mix.V.T


def _coupling_matrix(inst: SdpInstance, mix: MixingMatrix) -> np.ndarray:
    """Dense ``L x = (-A_1[x_1], ..., -A_p[x_p], U x)`` with columns ordered like ``x``."""
    p, m, n = inst.p, inst.m, inst.n
    rows_u = p * n * n
    L = np.zeros((rows_u + p * m, p * m))
    for i in range(p):
        for j in range(m):
            L[i * n * n : (i + 1) * n * n, i * m + j] = -inst.A[i, j].ravel()
    U = _sqrt_half_laplacian(mix)
    L[rows_u:, :] = np.kron(U, np.eye(m))
    return L


def pg_extra_operator(instance: SdpInstance, W: MixingMatrix, alpha: float, beta: float, eig_method: str = "lapack") -> PgExtra:
    """Build one PG-EXTRA sweep as an operator on the stacked state.

    The sweep runs, in order,

        u_i+ = P_{-psd}(u_i + beta (B_i - A_i[x_i]))
        w+   = w + (I - W) x / 2
        x_i+ = x_i - alpha beta (2 w_i+ - w_i) + alpha (A_i^*(2 u_i+ - u_i) - c_i)

    Raises
    ------
    ValueError
        If ``alpha * beta * ||L||^2 >= 1`` (the metric is not positive
        definite, so the sweep is not nonexpansive in any useful norm).
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if W.p != instance.p:
        raise ValueError("mixing matrix and instance disagree on p")
    Lnorm = spectral_norm(_coupling_matrix(instance, W), tol=1e-10)
    if alpha * beta * Lnorm**2 >= 1.0:
        raise ValueError(
            f"metric not positive definite: alpha*beta*||L||^2 = {alpha * beta * Lnorm**2:.4g} >= 1"
        )
    layout = StateLayout(instance.p, instance.m, instance.n)
    half_lap = 0.5 * (np.eye(instance.p) - W.W)
    A, B, c = instance.A, instance.B, instance.c
    p = instance.p

    def sweep(z: np.ndarray) -> np.ndarray:
        x, u, w = layout.unpack(z)
        un = np.empty_like(u)
        for i in range(p):
            lmi = np.tensordot(x[i], A[i], axes=(0, 0))
            un[i] = project_psd(u[i] + beta * (B[i] - lmi), "minus", method=eig_method)
        wn = w + half_lap @ x
        adj = np.einsum("ijab,iab->ij", A, 2.0 * un - u)
        xn = x - alpha * beta * (2.0 * wn - w) + alpha * (adj - c)
        return layout.pack(xn, un, wn)

    op = composite(layout.size, sweep, layout=layout)
    return PgExtra(instance, W, float(alpha), float(beta), layout, op, float(Lnorm), eig_method)


def m_inner(a: np.ndarray, b: np.ndarray, pg: PgExtra) -> float:
    """Polarized M-norm: ``<a, b>_M`` for state vectors ``a`` and ``b``."""
    xa, ua, wa = pg.layout.unpack(a)
    xb, ub, wb = pg.layout.unpack(b)
    ya, yb = pg.to_y(wa), pg.to_y(wb)
    A = pg.instance.A
    val = float(np.sum(xa * xb)) / pg.alpha
    val += (float(np.sum(ua * ub)) + float(np.sum(ya * yb))) / pg.beta
    # <x_a, L^* u_b> + <L x_a, u_b>... symmetrized: <L x_a, u_b> + <L x_b, u_a>
    val += pg.beta * (float(np.sum(xa * wb)) + float(np.sum(xb * wa)))
    val -= float(np.einsum("ij,ijab,iab->", xa, A, ub)) + float(np.einsum("ij,ijab,iab->", xb, A, ua))
    return val


def m_norm_sq(state_a: np.ndarray, state_b: np.ndarray, pg: PgExtra) -> float:
    """``||state_a - state_b||_M^2``.

    The consensus dual ``y`` is recovered from ``w`` through the
    eigendecomposition of ``I - W`` (the zero eigenvalue belongs to the
    consensus direction and is skipped).
    """
    d = np.asarray(state_a, dtype=float) - np.asarray(state_b, dtype=float)
    return m_inner(d, d, pg)


# ---------------------------------------------------------------- experiment


PGEXTRA_COLUMNS = ("k", "norm_iter_norm_sq", "fpr_mnorm_sq", "norm_iter_dist_v_sq", "fpr_dist_v_sq")


@dataclass(frozen=True)
class PgExtraConfig:
    """Experiment settings (defaults reproduce the full-scale setup)."""

    m: int = 11
    n: int = 10
    p: int = 10
    epsilon: float = 0.5
    seed: int = 0
    objective: str = "random"
    graph: str = "ring+chords"
    alpha: float = 0.01
    beta: float = 0.01
    horizon: int = 50_000
    variants: tuple = ("picard", "ohm")
    reference_factor: int = 4
    output_dir: str | None = None

    @classmethod
    def reduced(cls, **kw) -> "PgExtraConfig":
        """Small instance used by the test suite."""
        base = dict(m=5, n=4, p=5, horizon=5_000)
        base.update(kw)
        return cls(**base)


_CONFIG_KEYS = {
    "instance": {"m", "n", "p", "epsilon", "seed", "objective"},
    "graph": {"builtin", "file"},
    "algo": {"alpha", "beta", "horizon", "variant", "reference_factor"},
    "output": {"dir"},
}


def load_config(text: str, base: PgExtraConfig | None = None) -> PgExtraConfig:
    """Parse the sectioned key-value config; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    cfg = base or PgExtraConfig()
    kw: dict = {}
    for sec in cp.sections():
        if sec not in _CONFIG_KEYS:
            raise ValueError(f"unknown config section [{sec}]")
        bad = set(cp[sec].keys()) - _CONFIG_KEYS[sec]
        if bad:
            raise ValueError(f"unknown keys in [{sec}]: {sorted(bad)}")
    if "instance" in cp:
        s = cp["instance"]
        for key in ("m", "n", "p", "seed"):
            if key in s:
                kw[key] = s.getint(key)
        if "epsilon" in s:
            kw["epsilon"] = s.getfloat("epsilon")
        if "objective" in s:
            kw["objective"] = s["objective"].strip()
    if "graph" in cp:
        s = cp["graph"]
        if "file" in s:
            kw["graph"] = "file:" + s["file"].strip()
        elif "builtin" in s:
            kw["graph"] = s["builtin"].strip()
    if "algo" in cp:
        s = cp["algo"]
        for key in ("alpha", "beta"):
            if key in s:
                kw[key] = s.getfloat(key)
        if "horizon" in s:
            kw["horizon"] = s.getint("horizon")
        if "reference_factor" in s:
            kw["reference_factor"] = s.getint("reference_factor")
        if "variant" in s:
            kw["variants"] = tuple(t.strip() for t in s["variant"].split(",") if t.strip())
    if "output" in cp and "dir" in cp["output"]:
        kw["output_dir"] = cp["output"]["dir"].strip()
    return replace(cfg, **kw)


def _graph_edges(cfg: PgExtraConfig) -> list[tuple[int, int]]:
    if cfg.graph == "ring+chords":
        return ring_with_chords(cfg.p)
    if cfg.graph.startswith("file:"):
        path = cfg.graph[5:]
        edges = []
        with open(path) as fh:
            for line in fh:
                line = line.split("#")[0].strip()
                if line:
                    a, b = line.replace(",", " ").split()[:2]
                    edges.append((int(a), int(b)))
        return edges
    raise ValueError(f"unknown graph {cfg.graph!r}")


def _schedule(name: str) -> Schedule:
    if name == "picard":
        return picard()
    if name == "ohm":
        return ohm()
    if name.startswith("km:"):
        return km(float(name[3:]))
    raise ValueError(f"unknown variant {name!r}")


@dataclass(frozen=True)
class ExperimentResult:
    """Per-variant metric columns plus the reference displacement estimate.

    ``tail_margins[variant][kind]`` holds ``<s^k, v_hat>_M - ||v_hat||_M^2``
    over the second half of the run, where ``s^k`` is the residual
    (``kind="fpr"``) or the normalized iterate (``kind="normalized"``).
    The projection inequality makes these nonnegative for the exact ``v``.
    """

    config: PgExtraConfig
    columns: dict
    v_hat: np.ndarray
    v_hat_norm_sq: float
    final_states: dict
    tail_margins: dict
    diagnostics: dict

    def to_csv(self, variant: str) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(PGEXTRA_COLUMNS)
        cols = self.columns[variant]
        for k in range(len(cols["norm_iter_norm_sq"])):
            row = [k]
            for name in PGEXTRA_COLUMNS[1:]:
                val = cols[name][k]
                row.append("" if np.isnan(val) else f"{val:.17g}")
            wr.writerow(row)
        return buf.getvalue()

    def write(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for variant in self.columns:
            path = os.path.join(directory, f"pgextra_{variant.replace(':', '_')}.csv")
            with open(path, "w", newline="") as fh:
                fh.write(self.to_csv(variant))
            paths.append(path)
        path = os.path.join(directory, "pgextra_reference.csv")
        with open(path, "w", newline="") as fh:
            fh.write("quantity,value\n")
            fh.write(f"v_hat_norm_sq,{self.v_hat_norm_sq:.17g}\n")
            fh.write(f"reference_sweeps,{self.diagnostics['reference_sweeps']}\n")
        paths.append(path)
        return paths


def _stream(pg: PgExtra, sched: Schedule, z0: np.ndarray, K: int, v_hat: np.ndarray | None):
    """Run ``K`` sweeps, recording M-norm metrics on the fly."""
    cols = {name: np.full(K + 1, np.nan) for name in PGEXTRA_COLUMNS[1:]}
    margins = {"fpr": np.full(K + 1, np.nan), "normalized": np.full(K + 1, np.nan)}
    factor = 0.0
    vv = pg.norm_sq(v_hat) if v_hat is not None else np.nan
    last = None
    for k, z, tz in iterate(pg.op, sched, z0):
        if k >= 1:
            lam = sched.lam_at(k)
            factor = factor + (1.0 - lam) if sched.kind in ("picard", "km") else (1.0 - lam) * (1.0 + factor)
        r = z - tz
        cols["fpr_mnorm_sq"][k] = pg.norm_sq(r)
        if k >= 1:
            nz = -(z - z0) / factor
            cols["norm_iter_norm_sq"][k] = pg.norm_sq(nz)
            if v_hat is not None:
                cols["norm_iter_dist_v_sq"][k] = pg.norm_sq(nz - v_hat)
                margins["normalized"][k] = pg.inner(nz, v_hat) - vv
        if v_hat is not None:
            cols["fpr_dist_v_sq"][k] = pg.norm_sq(r - v_hat)
            margins["fpr"][k] = pg.inner(r, v_hat) - vv
        if k == K:
            last = (z.copy(), factor)
            break
    return cols, margins, last


def run_experiment(config: PgExtraConfig) -> ExperimentResult:
    """Run the reference Picard estimate of ``v`` and every configured variant.

    Each variant performs exactly ``horizon`` sweeps from the zero state.
    ``v_hat`` is the Picard normalized iterate after
    ``reference_factor * horizon`` sweeps.
    """
    inst = make_infeasible_chain(config.m, config.epsilon, config.p, config.n, config.seed, config.objective)
    mix = metropolis_weights(_graph_edges(config), config.p)
    pg = pg_extra_operator(inst, mix, config.alpha, config.beta)
    z0 = np.zeros(pg.layout.size)
    K = int(config.horizon)
    Kref = int(config.reference_factor * K)
    z = z0
    for k, z, _ in iterate(pg.op, picard(), z0):
        if k == Kref:
            break
    v_hat = -(z - z0) / Kref
    v_hat.setflags(write=False)
    columns, finals, margins = {}, {}, {}
    for name in config.variants:
        cols, marg, last = _stream(pg, _schedule(name), z0, K, v_hat)
        columns[name] = cols
        finals[name] = last[0]
        margins[name] = marg
    tail = {
        name: {kind: series[K // 2 :] for kind, series in marg.items()} for name, marg in margins.items()
    }
    diagnostics = {
        "coupling_norm": pg.coupling_norm,
        "metric_margin": 1.0 - config.alpha * config.beta * pg.coupling_norm**2,
        "reference_sweeps": Kref,
        "instance": inst.diagnostics,
    }
    result = ExperimentResult(config, columns, v_hat, pg.norm_sq(v_hat), finals, tail, diagnostics)
    if config.output_dir:
        result.write(config.output_dir)
    return result
