"""Independent reference values and second implementations used by the tests.

Nothing here imports the package's numerical routines; expected numbers are
either closed forms or frozen literals computed by hand.
"""

import numpy as np

# closed-form OHM residual envelope ((sqrt(H_k + 4) + 1)/(k + 1))^2
H3 = 1.0 + 1.0 / 2.0 + 1.0 / 3.0
OHM_FPR_K3 = ((np.sqrt(H3 + 4.0) + 1.0) / 4.0) ** 2
OHM_FPR_K1 = ((np.sqrt(5.0) + 1.0) / 2.0) ** 2  # golden ratio squared

# frozen literals
PICARD_NORMALIZED_K10 = 0.04  # 4/k^2 with D = 1
KM_HALF_FPR_K9 = 0.4  # 4/(k+1) with D = 1
THETA_HALF_K3 = 7.0 / 8.0


def counterexample_iterate(k: int) -> np.ndarray:
    """Picard iterate of T(x,y,z) = (-y, x, z-1) from (1, 0, 0)."""
    return np.array([np.cos(k * np.pi / 2), np.sin(k * np.pi / 2), -float(k)])


def rotation_shift(x):
    return np.array([-x[1], x[0], x[2] - 1.0])


def lyapunov_terms(x0, xk, txk, x_anchor, t_anchor, k):
    """Term-by-term evaluation of the OHM potential, written independently.

    V^k = (k+1) k ||r^k||^2 + 2 (k+1) <r^k, x^k - x^0>
          + k (k+1) <-(2/k)(x^k - x^0) - r_a, r_a>
          + 2 (k+1)/k ||x^k - x_a + (k/2) r_a||^2 - H_k ||x^0 - x_a||^2
    with r^k = x^k - T x^k and r_a = x_a - T x_a.
    """
    r = xk - txk
    ra = x_anchor - t_anchor
    dx = xk - x0
    H = sum(1.0 / n for n in range(1, k + 1))
    t1 = (k + 1) * k * np.dot(r, r)
    t2 = 2 * (k + 1) * np.dot(r, dx)
    t3 = k * (k + 1) * np.dot(-(2.0 / k) * dx - ra, ra)
    w = xk - x_anchor + (k / 2.0) * ra
    t4 = 2.0 * (k + 1) / k * np.dot(w, w)
    t5 = -H * np.dot(x0 - x_anchor, x0 - x_anchor)
    return t1 + t2 + t3 + t4 + t5


def signed_permutation(n: int, seed: int = 0) -> np.ndarray:
    g = np.random.default_rng(seed)
    P = np.eye(n)[g.permutation(n)]
    return P * g.choice([-1.0, 1.0], size=n)
