import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from idvkit.linalg import make_rng
from idvkit.lowerbound import (
    SpanTrace,
    default_inner,
    heavy_ball_algorithm,
    ohm_algorithm,
    picard_algorithm,
    random_convex_weights,
    random_span_algorithm,
    resisting_rotation,
    trace_from_algorithm,
    verify_lower_bound,
)
from idvkit.operators import make_worst_case, residual
from idvkit.schedules import ohm, picard, run

from .conftest import sq


def picard_trace(k, weights=None):
    op = make_worst_case(k, 1.0, np.sqrt(k))
    return op, trace_from_algorithm(op, picard_algorithm, np.zeros(k + 1), k, weights)


class TestVerify:
    def test_picard_uniform_is_tight(self):
        op, tr = picard_trace(8)
        rep = verify_lower_bound(op, tr)
        assert rep.passed
        assert rep.distance_lhs == pytest.approx(rep.distance_rhs, rel=1e-8)

    def test_ohm_weights(self):
        k = 8
        op = make_worst_case(k, 1.0, np.sqrt(k))
        w = np.arange(1, k + 1, dtype=float)
        tr = trace_from_algorithm(op, ohm_algorithm, np.zeros(k + 1), k, w / w.sum())
        assert verify_lower_bound(op, tr).passed

    def test_last_residual_only(self):
        for algo in (picard_algorithm, ohm_algorithm, heavy_ball_algorithm(), random_span_algorithm(3)):
            op = make_worst_case(6, 1.0)
            tr = trace_from_algorithm(op, algo, np.zeros(7), 6, np.eye(6)[-1])
            assert verify_lower_bound(op, tr).passed

    def test_trace_from_schedule_runner_agrees(self):
        k = 7
        op = make_worst_case(k)
        via_run = run(op, ohm(), np.zeros(k + 1), k - 1)
        via_cb = trace_from_algorithm(op, ohm_algorithm, np.zeros(k + 1), k)
        np.testing.assert_allclose(via_cb.iterates, via_run.iterates, atol=1e-12)
        via_pic = run(op, picard(), np.zeros(k + 1), k - 1)
        np.testing.assert_allclose(picard_trace(k)[1].iterates[:, :], via_pic.iterates, atol=1e-12)

    @pytest.mark.parametrize("k", [4, 8, 16])
    def test_hundred_convex_draws(self, k):
        rng = make_rng(k)
        op = default_inner(k)
        for draw in range(100):
            algo = random_span_algorithm(seed=draw)
            tr = trace_from_algorithm(op, algo, np.zeros(k + 1), k, random_convex_weights(k, rng))
            assert verify_lower_bound(op, tr).passed

    @given(st.integers(2, 12), st.floats(0.0, 3.0), st.integers(0, 1000))
    def test_any_span_method_any_weights(self, k, v_norm, seed):
        op = make_worst_case(k, v_norm) if v_norm > 0 else make_worst_case(k, 0.0, 1.0)
        w = make_rng(seed).normal(size=k)
        w = w - (w.sum() - 1.0) / k  # real weights summing to one
        tr = trace_from_algorithm(op, random_span_algorithm(seed), np.zeros(k + 1), k, w)
        assert verify_lower_bound(op, tr).passed

    def test_span_violation_named(self):
        op = make_worst_case(4)
        X = np.zeros((4, 5))
        X[2, 3] = 1.0  # e4 is never revealed by r^0, r^1
        R = np.array([residual(op, x) for x in X])
        with pytest.raises(ValueError, match="iterate 2"):
            verify_lower_bound(op, SpanTrace(X, R, np.full(4, 0.25)))

    def test_length_and_weights_validation(self):
        op, tr = picard_trace(5)
        with pytest.raises(ValueError):
            verify_lower_bound(make_worst_case(6), tr)
        with pytest.raises(ValueError):
            tr.with_weights(np.ones(5))
        with pytest.raises(ValueError):
            verify_lower_bound(op, tr, mode="fast")


class TestResisting:
    K = 6

    def _run(self, algo, dim=None, seed=0, v=None):
        K = self.K
        dim = dim or 2 * K - 1
        inner = default_inner(K)
        if v is None:
            v = np.eye(dim)[0]
        return resisting_rotation(algo, inner, np.zeros(dim), v, dim, K, seed=seed)

    def test_picard_pullback_matches_direct(self):
        res = self._run(picard_algorithm)
        direct = trace_from_algorithm(res.inner, picard_algorithm, np.zeros(self.K + 1), self.K)
        np.testing.assert_allclose(res.pulled_back.iterates, direct.iterates, atol=1e-8)
        np.testing.assert_allclose(res.pulled_back.residuals, direct.residuals, atol=1e-8)

    @pytest.mark.parametrize("name", ["picard", "ohm", "heavy-ball", "random-span"])
    def test_span_methods_defeated_in_2k_minus_1(self, name):
        algo = {
            "picard": picard_algorithm,
            "ohm": ohm_algorithm,
            "heavy-ball": heavy_ball_algorithm(),
            "random-span": random_span_algorithm(5),
        }[name]
        res = self._run(algo)
        U = res.U
        assert np.linalg.norm(U.T @ U - np.eye(self.K + 1)) <= 1e-10
        assert res.pulled_back.zero_respecting_violation() is None
        assert verify_lower_bound(res.inner, res.pulled_back, mode="zero_respecting").passed
        assert verify_lower_bound(res.op, res.trace, mode="unchecked").passed
        # the algorithm really saw the rotated operator
        np.testing.assert_allclose(res.oracle_residuals, res.trace.residuals, atol=1e-10)

    def test_non_span_method_in_2k(self):
        K = self.K
        offset = make_rng(99).standard_normal(2 * K)

        def wander(x0, residuals):
            # leaves the residual span every step
            t = len(residuals)
            return x0 + np.tanh(np.sum(residuals, axis=0)) + 0.1 * t * offset

        res = self._run(wander, dim=2 * K)
        assert res.trace.span_violation() is not None
        assert res.pulled_back.zero_respecting_violation() is None
        assert verify_lower_bound(res.inner, res.pulled_back, mode="zero_respecting").passed
        assert verify_lower_bound(res.op, res.trace, mode="unchecked").passed

    def test_random_v_direction(self):
        dim = 2 * self.K - 1
        v = make_rng(4).standard_normal(dim)
        v /= np.linalg.norm(v)
        res = self._run(ohm_algorithm, v=v)
        assert np.linalg.norm(res.op.ground_truth.v) == pytest.approx(1.0, abs=1e-10)
        np.testing.assert_allclose(res.op.ground_truth.v, v, atol=1e-12)

    def test_dimension_too_small(self):
        with pytest.raises(ValueError, match="2K - 1"):
            self._run(picard_algorithm, dim=2 * self.K - 2)

    def test_norm_mismatch(self):
        with pytest.raises(ValueError):
            self._run(picard_algorithm, v=2 * np.eye(2 * self.K - 1)[0])

    def test_deterministic(self):
        a = self._run(heavy_ball_algorithm(), seed=3)
        b = self._run(heavy_ball_algorithm(), seed=3)
        np.testing.assert_array_equal(a.U, b.U)
        np.testing.assert_array_equal(a.trace.iterates, b.trace.iterates)


def test_x_star_distance_formula():
    for k in (3, 9):
        op = make_worst_case(k, 2.0)
        assert sq(op.ground_truth.x_star) == pytest.approx(k * op.params["alpha"] ** 2 / 4)
