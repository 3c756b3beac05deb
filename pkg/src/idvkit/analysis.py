"""Infeasibility certificates, rate envelopes and trajectory audits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import as_vector
from .operators import OperatorSpec, evaluate
from .schedules import (
    DegenerateNormalization,
    Schedule,
    Trajectory,
    halpern_theta,
    km_factor,
    ohm,
    picard,
    run,
)

__all__ = [
    "Certificate",
    "estimate_idv",
    "RateEnvelope",
    "ENVELOPES",
    "envelope",
    "harmonic",
    "lyapunov",
    "lyapunov_series",
    "ProjectionReport",
    "check_projection_inequality",
    "RateAudit",
    "audit_rate",
]


def harmonic(k: int) -> float:
    """``sum_{n=1}^k 1/n``."""
    return float(sum(1.0 / n for n in range(1, k + 1)))


# ---------------------------------------------------------------- certificates


@dataclass(frozen=True)
class Certificate:
    """Estimate of the infimal displacement vector.

    A nonzero ``v_hat`` with small ``residual_gap`` certifies that the
    operator has no fixed point.
    """

    v_hat: np.ndarray
    source: str
    iterations: int
    norm: float
    residual_gap: float

    def __str__(self):
        return f"v_hat from {self.source} after {self.iterations} steps: ||v_hat|| = {self.norm:.12g}"


def estimate_idv(op: OperatorSpec, x0, K: int, method: str = "picard_normalized") -> Certificate:
    """Estimate ``v`` from a ``K``-step run.

    Parameters
    ----------
    method : {"picard_normalized", "halpern_normalized", "fpr"}
        Normalized iterate of Picard or OHM, or the last OHM residual.

    Notes
    -----
    ``residual_gap`` is ``||x^K - T x^K|| - ||v_hat||``; it is nonnegative
    in exact arithmetic when ``v_hat`` is a normalized iterate (the
    residual range closure is convex and ``v`` has minimal norm there only
    in the limit, so the gap is a diagnostic, not a bound).
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if method == "picard_normalized":
        sched = picard()
    elif method in ("halpern_normalized", "fpr"):
        sched = ohm()
    else:
        raise ValueError(f"unknown method {method!r}")
    traj = run(op, sched, x0, K)
    if method == "fpr":
        v_hat = traj.residuals[K].copy()
    else:
        if traj.factors[K] <= 0:
            raise DegenerateNormalization(f"factor {traj.factors[K]} at K={K}")
        v_hat = -(traj.iterates[K] - traj.iterates[0]) / traj.factors[K]
    nrm = float(np.linalg.norm(v_hat))
    gap = float(np.linalg.norm(traj.residuals[K])) - nrm
    v_hat.setflags(write=False)
    return Certificate(v_hat, method, K, nrm, gap)


# ---------------------------------------------------------------- envelopes


@dataclass(frozen=True)
class RateEnvelope:
    """Named upper bound ``k -> bound`` for a trajectory quantity.

    Attributes
    ----------
    name : str
        Envelope id (see :data:`ENVELOPES`).
    quantity : str
        Trajectory metric the bound applies to.
    bound : callable
        ``(params, k) -> value``; ``params`` carries ``dist_sq`` and, where
        needed, the schedule.
    description : str
    """

    name: str
    quantity: str
    bound: Callable[[dict, int], float]
    description: str


def _dist(params: dict) -> float:
    return float(params.get("dist_sq", 1.0))


def _km_sum(params: dict, k: int) -> float:
    sched: Schedule = params["schedule"]
    return km_factor(sched, k)


def _km_weight_sum(params: dict, k: int) -> float:
    sched: Schedule = params["schedule"]
    return float(sum(sched.lam_at(i + 1) * (1.0 - sched.lam_at(i + 1)) for i in range(k + 1)))


def _theta(params: dict, k: int) -> float:
    sched = params.get("schedule") or ohm()
    return halpern_theta(sched, k)


def _ohm_fpr(params: dict, k: int) -> float:
    return ((np.sqrt(harmonic(k) + 4.0) + 1.0) / (k + 1)) ** 2 * _dist(params)


ENVELOPES: dict[str, RateEnvelope] = {
    e.name: e
    for e in [
        RateEnvelope(
            "km-normalized",
            "norm_iter_dist_v_sq",
            lambda p, k: 4.0 / _km_sum(p, k) ** 2 * _dist(p),
            "KM normalized iterate: 4 / (sum(1 - lam_i))^2 * D",
        ),
        RateEnvelope(
            "picard-normalized",
            "norm_iter_dist_v_sq",
            lambda p, k: 4.0 / k**2 * _dist(p),
            "Picard normalized iterate: 4 / k^2 * D",
        ),
        RateEnvelope(
            "km-half-mean-fpr",
            "fpr_mean_dist_v_sq",
            lambda p, k: 4.0 / (k + 1) * _dist(p),
            "KM with lam = 1/2, mean of squared residual errors: 4 / (k + 1) * D",
        ),
        RateEnvelope(
            "km-cesaro",
            "cesaro_dist_v_sq",
            lambda p, k: _dist(p) / _km_weight_sum(p, k),
            "KM weighted residual average: D / sum(lam_{i+1}(1 - lam_{i+1}))",
        ),
        RateEnvelope(
            "km-fpr-gap",
            "fpr_normgap_sq",
            lambda p, k: _dist(p) / _km_weight_sum(p, k),
            "KM residual norm gap: D / sum(lam_{i+1}(1 - lam_{i+1}))",
        ),
        RateEnvelope(
            "halpern-normalized",
            "norm_iter_dist_v_sq",
            lambda p, k: 4.0 / _theta(p, k) ** 2 * _dist(p),
            "Halpern normalized iterate: 4 / theta_k^2 * D",
        ),
        RateEnvelope(
            "ohm-fpr",
            "fpr_dist_v_sq",
            _ohm_fpr,
            "OHM residual: ((sqrt(H_k + 4) + 1) / (k + 1))^2 * D",
        ),
        RateEnvelope(
            "ohm-normalized",
            "norm_iter_dist_v_sq",
            lambda p, k: 16.0 / k**2 * _dist(p),
            "OHM normalized iterate: 16 / k^2 * D",
        ),
        RateEnvelope(
            "ohm-fpr-gap",
            "fpr_normgap_sq",
            lambda p, k: 16.0 / k**2 * _dist(p),
            "OHM residual norm gap: 16 / k^2 * D",
        ),
    ]
}


def envelope(name: str, params: dict, k: int) -> float:
    """Evaluate a named envelope at ``k``.

    Parameters
    ----------
    name : str
        Key of :data:`ENVELOPES`.
    params : dict
        ``dist_sq`` (squared distance from ``x^0`` to ``x_star``) and, for
        KM/Halpern envelopes, ``schedule``.
    k : int
        Iteration count, ``k >= 1``.
    """
    if name not in ENVELOPES:
        raise KeyError(f"unknown envelope {name!r}; known: {sorted(ENVELOPES)}")
    if k < 1:
        raise ValueError("envelopes are defined for k >= 1")
    return float(ENVELOPES[name].bound(params, k))


# ---------------------------------------------------------------- Lyapunov


def lyapunov_series(X: np.ndarray, R: np.ndarray, t_anchor: np.ndarray, x_anchor: np.ndarray) -> np.ndarray:
    """OHM potential ``V^k`` for every row of an OHM run (NaN at ``k = 0``).

    ``X`` and ``R`` hold iterates and residuals, ``t_anchor = T x_anchor``.
    """
    K = X.shape[0] - 1
    x0 = X[0]
    ra = x_anchor - t_anchor
    d0 = float(np.sum((x0 - x_anchor) ** 2))
    out = np.full(K + 1, np.nan)
    H = 0.0
    for k in range(1, K + 1):
        H += 1.0 / k
        r, dx = R[k], X[k] - x0
        first = (k + 1) * (k * (r @ r) + 2.0 * (r @ dx))
        second = k * (k + 1) * ((-(2.0 / k) * dx - ra) @ ra)
        w = X[k] - x_anchor + 0.5 * k * ra
        third = 2.0 * (k + 1) / k * (w @ w)
        out[k] = first + second + third - H * d0
    return out


def lyapunov(op: OperatorSpec, trajectory: Trajectory, x_anchor, k: int) -> float:
    """``V^k`` of an OHM trajectory with anchor point ``x_anchor``.

    Recomputes ``T x^k`` from the operator rather than trusting the stored
    residual.
    """
    if trajectory.schedule.kind != "ohm":
        raise ValueError("the potential is specific to OHM trajectories")
    if not 1 <= k <= trajectory.horizon:
        raise ValueError(f"k must be in 1..{trajectory.horizon}")
    x_anchor = as_vector(x_anchor, op.dimension, "x_anchor")
    X = trajectory.iterates[: k + 1]
    R = X - np.array([evaluate(op, x) for x in X])
    return float(lyapunov_series(X, R, evaluate(op, x_anchor), x_anchor)[k])


# ---------------------------------------------------------------- projection inequality


@dataclass(frozen=True)
class ProjectionReport:
    """Margins ``<w, v> - ||v||^2`` over residuals and normalized iterates."""

    residual_margins: np.ndarray
    normalized_margins: np.ndarray
    worst_margin: float
    worst_index: int
    worst_source: str
    passed: bool
    tol: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"projection inequality: worst margin {self.worst_margin:.3e} "
            f"({self.worst_source} at k={self.worst_index}) [{status}]"
        )


def check_projection_inequality(trajectory: Trajectory, v=None, tol: float = 1e-8) -> ProjectionReport:
    """Check ``<w, v> >= ||v||^2`` for every residual and normalized iterate ``w``.

    Any point of the closed convex range closure satisfies it because ``v``
    is the projection of the origin onto that set.
    """
    if v is None:
        if trajectory.op.ground_truth is None:
            raise ValueError("no displacement vector given and operator has no ground truth")
        v = trajectory.op.ground_truth.v
    v = np.asarray(v, dtype=float)
    vv = float(v @ v)
    res = trajectory.residuals @ v - vv
    nrm = trajectory.normalized @ v - vv  # NaN where undefined
    cand = [("residual", res), ("normalized", nrm)]
    worst, idx, src = np.inf, -1, ""
    for name, arr in cand:
        if np.all(np.isnan(arr)):
            continue
        j = int(np.nanargmin(arr))
        if arr[j] < worst:
            worst, idx, src = float(arr[j]), j, name
    return ProjectionReport(res, nrm, worst, idx, src, worst >= -tol, tol)


# ---------------------------------------------------------------- rate audits


@dataclass(frozen=True)
class RateAudit:
    """Per-k comparison of a measured quantity with an envelope."""

    envelope: str
    quantity: str
    ks: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    slack: np.ndarray
    min_slack: float
    argmin_k: int
    passed: bool
    tol: float

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"# audit {self.envelope} on {self.quantity}: "
            f"min slack {self.min_slack:.17g} at k={self.argmin_k} [{status}]"
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "measured", "envelope", "slack"])
        for k, m, b, s in zip(self.ks, self.measured, self.bound, self.slack):
            w.writerow([int(k), f"{m:.17g}", f"{b:.17g}", f"{s:.17g}"])
        return buf.getvalue() + self.summary() + "\n"


def audit_rate(
    trajectory: Trajectory,
    envelope_name: str,
    quantity: str | None = None,
    dist_sq: float | None = None,
    tol: float = 1e-8,
) -> RateAudit:
    """Compare a trajectory metric with a named envelope for ``k = 1..K``.

    ``slack = envelope - measured``; the audit fails if any slack drops
    below ``-tol * max(1, envelope)``.
    """
    env = ENVELOPES.get(envelope_name)
    if env is None:
        raise KeyError(f"unknown envelope {envelope_name!r}")
    quantity = quantity or env.quantity
    if quantity not in trajectory.metrics:
        raise ValueError(f"trajectory lacks {quantity!r} (ground truth missing?)")
    measured_all = trajectory.metrics[quantity]
    if np.all(np.isnan(measured_all[1:])):
        raise ValueError(f"{quantity!r} is undefined along this trajectory (ground truth missing?)")
    if dist_sq is None:
        gt = trajectory.op.ground_truth
        if gt is None or gt.x_star is None:
            raise ValueError("dist_sq not given and operator has no x_star")
        anchor = trajectory.x_anchor if trajectory.x_anchor is not None else gt.x_star
        dist_sq = float(np.sum((trajectory.x0 - anchor) ** 2))
    params = {"dist_sq": dist_sq, "schedule": trajectory.schedule}
    ks = np.arange(1, trajectory.horizon + 1)
    bound = np.array([envelope(envelope_name, params, int(k)) for k in ks])
    measured = measured_all[1:]
    slack = bound - measured
    j = int(np.argmin(slack))
    passed = bool(np.all(slack >= -tol * np.maximum(1.0, bound)))
    return RateAudit(envelope_name, quantity, ks, measured, bound, slack, float(slack[j]), int(ks[j]), passed, tol)
