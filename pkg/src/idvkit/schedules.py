"""Iteration schedules, their normalization factors, and the trajectory runner.

Conventions
-----------
* KM:       ``x^{k+1} = lam_{k+1} x^k + (1 - lam_{k+1}) T x^k``
* Halpern:  ``x^{k+1} = lam_{k+1} x^0 + (1 - lam_{k+1}) T x^k``
* OHM:      Halpern with ``lam_k = 1/(k+1)``
* Mann:     ``x^k = sum_{i=0}^k nu_i^k T x^{i-1}`` with ``T x^{-1} := x^0``

The normalized iterate ``-(x^k - x^0) / factor_k`` uses
``sum_{i<=k}(1 - lam_i)`` for KM (``k`` for Picard), ``theta_k`` for
Halpern and ``alpha_k`` for Mann.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .linalg import as_vector
from .operators import OperatorSpec, evaluate

__all__ = [
    "DegenerateNormalization",
    "NonFiniteIterate",
    "Schedule",
    "picard",
    "km",
    "halpern",
    "ohm",
    "mann",
    "mann_encoding",
    "km_factor",
    "halpern_theta",
    "mann_alpha",
    "Trajectory",
    "iterate",
    "run",
    "CSV_COLUMNS",
]


class DegenerateNormalization(ArithmeticError):
    """The normalization factor is not positive, so nothing can be divided by it."""


class NonFiniteIterate(FloatingPointError):
    """An iterate became NaN/Inf; ``last_finite`` holds the last good index."""

    def __init__(self, last_finite: int):
        super().__init__(f"iterate became non-finite after k={last_finite}")
        self.last_finite = last_finite


@dataclass(frozen=True)
class Schedule:
    """An iteration rule.

    Attributes
    ----------
    kind : {"picard", "km", "halpern", "ohm", "mann"}
    lam : callable, optional
        ``k -> lam_k`` for KM and Halpern, evaluated for ``k >= 1``.
    nu : callable, optional
        ``(k, i) -> nu_i^k`` for Mann, ``0 <= i <= k``.
    name : str
        Label used in reports.
    """

    kind: str
    lam: Callable[[int], float] | None = None
    nu: Callable[[int, int], float] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("picard", "km", "halpern", "ohm", "mann"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind in ("km", "halpern") and self.lam is None:
            raise ValueError(f"{self.kind} schedule needs lam")
        if self.kind == "mann" and self.nu is None:
            raise ValueError("mann schedule needs nu")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def lam_at(self, k: int) -> float:
        """``lam_k`` with the Picard and OHM closed forms filled in."""
        if self.kind == "picard":
            return 0.0
        if self.kind == "ohm":
            return 1.0 / (k + 1)
        if self.lam is None:
            raise ValueError(f"{self.kind} schedule has no lam")
        lam = float(self.lam(k))
        if not 0.0 <= lam < 1.0 and not (self.kind == "km" and lam == 1.0):
            raise ValueError(f"lam_{k} = {lam} outside [0, 1)")
        return lam

    def nu_row(self, k: int) -> np.ndarray:
        """Row ``(nu_0^k, ..., nu_k^k)`` of the Mann table, validated."""
        if self.kind != "mann":
            return mann_encoding(self)(k)
        row = np.array([float(self.nu(k, i)) for i in range(k + 1)])
        if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
            raise ValueError(f"Mann row {k} must be nonnegative and sum to 1, got {row}")
        return row


def picard() -> Schedule:
    return Schedule("picard", name="picard")


def km(lam: float | Callable[[int], float]) -> Schedule:
    """KM schedule; a constant ``lam`` is turned into a constant sequence."""
    if callable(lam):
        return Schedule("km", lam=lam, name="km")
    c = float(lam)
    return Schedule("km", lam=lambda k: c, name=f"km:{c:g}")


def halpern(lam: float | Callable[[int], float]) -> Schedule:
    if callable(lam):
        return Schedule("halpern", lam=lam, name="halpern")
    c = float(lam)
    return Schedule("halpern", lam=lambda k: c, name=f"halpern:{c:g}")


def ohm() -> Schedule:
    return Schedule("ohm", name="ohm")


def mann(nu: Callable[[int, int], float]) -> Schedule:
    return Schedule("mann", nu=nu, name="mann")


def mann_encoding(schedule: Schedule) -> Callable[[int], np.ndarray]:
    """Mann weight rows reproducing a Picard/KM/Halpern/OHM schedule.

    Returns a function ``k -> (nu_0^k, ..., nu_k^k)``.  Rows are memoized
    because the KM encoding is recursive.
    """
    kind = schedule.kind
    cache: dict[int, np.ndarray] = {0: np.array([1.0])}

    def row(k: int) -> np.ndarray:
        if k in cache:
            return cache[k]
        if kind == "mann":
            out = schedule.nu_row(k)
        elif kind in ("halpern", "ohm"):
            lam = schedule.lam_at(k)
            out = np.zeros(k + 1)
            out[0] = lam
            out[k] = 1.0 - lam
        else:  # picard / km: x^k = lam x^{k-1} + (1-lam) T x^{k-1}
            lam = schedule.lam_at(k)
            out = np.zeros(k + 1)
            out[:k] = lam * row(k - 1)
            out[k] = 1.0 - lam
        cache[k] = out
        return out

    return row


def km_factor(schedule: Schedule, k: int) -> float:
    """``sum_{i=1}^k (1 - lam_i)``; Picard gives ``k``.

    Raises
    ------
    DegenerateNormalization
        If the sum is zero.
    """
    if schedule.kind not in ("km", "picard"):
        raise ValueError("km_factor needs a km or picard schedule")
    if k < 1:
        raise ValueError("k must be >= 1")
    total = float(sum(1.0 - schedule.lam_at(i) for i in range(1, k + 1)))
    if total <= 0.0:
        raise DegenerateNormalization(f"KM factor is {total} at k={k}")
    return total


def halpern_theta(schedule: Schedule, k: int) -> float:
    """``theta_k`` from ``theta_{j+1} = (1 - lam_{j+1})(1 + theta_j)``, ``theta_0 = 0``."""
    if schedule.kind not in ("halpern", "ohm"):
        raise ValueError("halpern_theta needs a halpern or ohm schedule")
    theta = 0.0
    for j in range(1, k + 1):
        theta = (1.0 - schedule.lam_at(j)) * (1.0 + theta)
    return theta


def mann_alpha(schedule: Schedule, k: int) -> float:
    """``alpha_k = (1 - nu_0^k) + sum_{i=1}^k nu_i^k alpha_{i-1}``, ``alpha_0 = 0``.

    Accepts any schedule (non-Mann kinds go through :func:`mann_encoding`).

    Raises
    ------
    DegenerateNormalization
        If ``alpha_k <= 0``.
    """
    rows = mann_encoding(schedule)
    alphas = [0.0]
    for j in range(1, k + 1):
        nu = rows(j)
        alphas.append((1.0 - nu[0]) + float(nu[1:] @ np.array(alphas[:j])))
    if k >= 1 and alphas[k] <= 0.0:
        raise DegenerateNormalization(f"Mann alpha is {alphas[k]} at k={k}")
    return alphas[k]


# ---------------------------------------------------------------- running


CSV_COLUMNS = (
    "k",
    "fpr_norm_sq",
    "norm_iter_norm_sq",
    "fpr_dist_v_sq",
    "norm_iter_dist_v_sq",
    "cesaro_dist_v_sq",
    "lyapunov",
)


@dataclass(frozen=True)
class Trajectory:
    """Record of a run.

    Row ``k`` of each array belongs to iterate ``x^k`` (``k = 0..K``).
    Undefined values are NaN: the normalized iterate at ``k = 0`` or with a
    degenerate factor, certificate distances without ground truth, the
    Cesaro average for schedules without KM weights, and the Lyapunov
    value outside OHM runs.

    Attributes
    ----------
    iterates, residuals, images : ndarray, shape (K+1, d)
        ``x^k``, ``x^k - T x^k`` and ``T x^k``.
    factors : ndarray, shape (K+1,)
        Normalization factor of each record (0 at ``k = 0``).
    normalized : ndarray, shape (K+1, d)
        ``-(x^k - x^0) / factor_k``.
    cesaro_weights : ndarray or None
        KM weights ``lam_{i+1}(1 - lam_{i+1})`` for ``i = 0..K``.
    """

    op: OperatorSpec
    schedule: Schedule
    iterates: np.ndarray
    residuals: np.ndarray
    images: np.ndarray
    factors: np.ndarray
    normalized: np.ndarray
    cesaro_weights: np.ndarray | None
    x_anchor: np.ndarray | None = None
    lyapunov_values: np.ndarray | None = None
    metrics: dict = field(default_factory=dict)

    @property
    def x0(self) -> np.ndarray:
        return self.iterates[0]

    @property
    def horizon(self) -> int:
        return self.iterates.shape[0] - 1

    def normalized_iterate(self, k: int) -> np.ndarray | None:
        """Normalized iterate at ``k``, or None where the factor is degenerate."""
        row = self.normalized[k]
        return None if np.isnan(row[0]) else row

    def column(self, name: str) -> np.ndarray:
        return self.metrics[name]

    def to_csv(self, dest=None) -> str:
        """CSV with the fixed column order; NaN is written as an empty field."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        cols = [self.metrics[c] for c in CSV_COLUMNS[1:]]
        for k in range(self.horizon + 1):
            w.writerow([k] + ["" if np.isnan(c[k]) else f"{c[k]:.17g}" for c in cols])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def iterate(op: OperatorSpec, schedule: Schedule, x0) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Stream ``(k, x^k, T x^k)`` for ``k = 0, 1, 2, ...`` without storing history.

    Mann schedules keep every past operator output since a row may touch
    all of them.
    """
    x0 = as_vector(x0, op.dimension, "x0")
    x = x0.copy()
    outputs = [x0]  # T x^{-1} := x^0, only kept for Mann
    rows = mann_encoding(schedule) if schedule.kind == "mann" else None
    k = 0
    while True:
        tx = evaluate(op, x)
        if not (np.all(np.isfinite(tx))):
            raise NonFiniteIterate(k)
        yield k, x, tx
        k += 1
        if schedule.kind == "mann":
            outputs.append(tx)
            x = rows(k) @ np.array(outputs)
        else:
            lam = schedule.lam_at(k)
            base = x0 if schedule.kind in ("halpern", "ohm") else x
            x = lam * base + (1.0 - lam) * tx
        if not np.all(np.isfinite(x)):
            raise NonFiniteIterate(k - 1)


def _factors(schedule: Schedule, K: int) -> np.ndarray:
    f = np.zeros(K + 1)
    if schedule.kind in ("picard", "km"):
        for j in range(1, K + 1):
            f[j] = f[j - 1] + (1.0 - schedule.lam_at(j))
    elif schedule.kind in ("halpern", "ohm"):
        for j in range(1, K + 1):
            f[j] = (1.0 - schedule.lam_at(j)) * (1.0 + f[j - 1])
    else:
        rows = mann_encoding(schedule)
        for j in range(1, K + 1):
            nu = rows(j)
            f[j] = (1.0 - nu[0]) + float(nu[1:] @ f[:j])
    return f


def run(
    op: OperatorSpec,
    schedule: Schedule,
    x0,
    K: int,
    x_anchor=None,
    v=None,
) -> Trajectory:
    """Run ``K`` steps and fill in every derived per-record quantity.

    Parameters
    ----------
    op, schedule : OperatorSpec, Schedule
    x0 : array_like
    K : int
        Horizon (records ``0..K``).
    x_anchor : array_like, optional
        Point used in the OHM Lyapunov function; defaults to the operator's
        ``x_star``.
    v : array_like, optional
        Displacement vector for the distance columns; defaults to the
        operator's ground truth.

    Raises
    ------
    NonFiniteIterate
        If the operator blows up; carries the last finite index.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    d = op.dimension
    X = np.empty((K + 1, d))
    TX = np.empty((K + 1, d))
    for k, x, tx in iterate(op, schedule, x0):
        X[k], TX[k] = x, tx
        if k == K:
            break
    R = X - TX
    factors = _factors(schedule, K)
    normalized = np.full((K + 1, d), np.nan)
    ok = factors > 0
    normalized[ok] = -(X[ok] - X[0]) / factors[ok][:, None]

    gt = op.ground_truth
    if v is None and gt is not None:
        v = gt.v
    if x_anchor is None and gt is not None:
        x_anchor = gt.x_star

    weights = None
    if schedule.kind in ("km", "picard"):
        weights = np.array([schedule.lam_at(i + 1) * (1.0 - schedule.lam_at(i + 1)) for i in range(K + 1)])

    nan = np.full(K + 1, np.nan)
    metrics = {
        "fpr_norm_sq": np.einsum("ij,ij->i", R, R),
        "norm_iter_norm_sq": np.einsum("ij,ij->i", normalized, normalized),
        "fpr_dist_v_sq": nan.copy(),
        "norm_iter_dist_v_sq": nan.copy(),
        "cesaro_dist_v_sq": nan.copy(),
        "lyapunov": nan.copy(),
    }
    if v is not None:
        v = as_vector(v, d, "v")
        dr = np.linalg.norm(R - v, axis=1)
        dn = normalized - v  # -(x^k - x^0)/factor converges to v
        metrics["fpr_dist_v_sq"] = dr**2
        metrics["norm_iter_dist_v_sq"] = np.einsum("ij,ij->i", dn, dn)
        metrics["fpr_normgap_sq"] = (np.sqrt(metrics["fpr_norm_sq"]) - np.linalg.norm(v)) ** 2
        if weights is not None:
            cw = np.cumsum(weights)
            cs = np.cumsum(weights * dr)
            with np.errstate(invalid="ignore", divide="ignore"):
                metrics["cesaro_dist_v_sq"] = np.where(cw > 0, (cs / np.where(cw > 0, cw, 1.0)) ** 2, np.nan)
            metrics["fpr_mean_dist_v_sq"] = np.cumsum(dr**2) / np.arange(1, K + 2)

    lyap = None
    if schedule.kind == "ohm" and x_anchor is not None:
        from .analysis import lyapunov_series

        x_anchor = as_vector(x_anchor, d, "x_anchor")
        lyap = lyapunov_series(X, R, evaluate(op, x_anchor), x_anchor)
        metrics["lyapunov"] = lyap

    for a in (X, R, TX, normalized):
        a.setflags(write=False)
    return Trajectory(
        op=op,
        schedule=schedule,
        iterates=X,
        residuals=R,
        images=TX,
        factors=factors,
        normalized=normalized,
        cesaro_weights=weights,
        x_anchor=x_anchor,
        lyapunov_values=lyap,
        metrics=metrics,
    )
