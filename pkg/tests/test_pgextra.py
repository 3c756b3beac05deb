import numpy as np
import pytest

from idvkit.linalg import make_rng
from idvkit.operators import audit_nonexpansive
from idvkit.pgextra import (
    PGEXTRA_COLUMNS,
    PgExtraConfig,
    SdpInstance,
    load_config,
    make_infeasible_chain,
    m_norm_sq,
    metropolis_weights,
    pg_extra_operator,
    ring_with_chords,
    run_experiment,
)
from idvkit.schedules import iterate, picard

TINY = PgExtraConfig(m=4, n=4, p=3, horizon=200)


def small_pg(alpha=0.01, beta=0.01):
    inst = make_infeasible_chain(5, 0.5, 5, 4, 0)
    mix = metropolis_weights(ring_with_chords(5), 5)
    return pg_extra_operator(inst, mix, alpha, beta)


def sample_state(pg, rng, scale):
    p, m, n = pg.layout.p, pg.layout.m, pg.layout.n
    x = scale * rng.standard_normal((p, m))
    u = scale * rng.standard_normal((p, n, n))
    u = u + u.transpose(0, 2, 1)
    # w lives in range(I - W) along every reachable trajectory
    w = (np.eye(p) - np.ones((p, p)) / p) @ (0.01 * scale * rng.standard_normal((p, m)))
    return pg.layout.pack(x, u, w)


class TestGraph:
    def test_complete_three(self):
        mix = metropolis_weights([(0, 1), (1, 2), (0, 2)])
        np.testing.assert_allclose(mix.W, np.full((3, 3), 1 / 3), atol=1e-15)

    def test_path_two(self):
        np.testing.assert_allclose(metropolis_weights([(0, 1)]).W, np.full((2, 2), 0.5))

    def test_ring_ten(self):
        edges = ring_with_chords(10)
        assert len(edges) == 15
        mix = metropolis_weights(edges, 10)
        np.testing.assert_allclose(mix.W.sum(axis=1), 1.0, atol=1e-14)
        np.testing.assert_allclose(mix.W, mix.W.T)
        eig_w = np.linalg.eigvalsh(mix.W)
        assert np.sum(np.abs(eig_w - 1.0) < 1e-10) == 1
        assert mix.sigma[-1] == pytest.approx(0.0, abs=1e-12)
        assert np.all(mix.sigma[:-1] > 1e-6)

    def test_plain_ring_when_odd(self):
        assert ring_with_chords(5) == [(0, 1), (0, 4), (1, 2), (2, 3), (3, 4)]

    def test_disconnected(self):
        with pytest.raises(ValueError, match="disconnected"):
            metropolis_weights([(0, 1), (2, 3)])
        with pytest.raises(ValueError):
            metropolis_weights([(0, 0), (0, 1)])


class TestInstance:
    def test_default_dimensions(self):
        inst = make_infeasible_chain()
        assert (inst.p, inst.m, inst.n) == (10, 11, 10)
        assert inst.diagnostics["constraints"] == 19
        assert inst.diagnostics["idle_agents"] == []
        assert np.all(np.abs(inst.c) <= 0.1)

    def test_idle_agents(self):
        inst = make_infeasible_chain(m=3, p=5, n=2)
        assert inst.diagnostics["constraints"] == 3
        assert inst.diagnostics["idle_agents"] == [3, 4]
        assert not inst.A[3].any() and not inst.B[3].any()

    def test_too_many_per_agent(self):
        with pytest.raises(ValueError, match="order"):
            make_infeasible_chain(m=11, p=2, n=10)

    def test_bad_arguments(self):
        for kw in ({"m": 2}, {"epsilon": 0.0}, {"objective": "other"}):
            with pytest.raises(ValueError):
                make_infeasible_chain(**kw)

    def test_objective_seeded(self):
        a = make_infeasible_chain(seed=4).c
        np.testing.assert_array_equal(a, make_infeasible_chain(seed=4).c)
        assert not np.array_equal(a, make_infeasible_chain(seed=5).c)
        assert not make_infeasible_chain(objective="zero").c.any()

    def _chain_without_final(self, m, eps):
        inst = make_infeasible_chain(m=m, epsilon=eps, p=1, n=2 * (2 * (m - 2) + 1))
        n = inst.n
        keep = slice(0, n - 2)  # the final block occupies the last slot
        A = inst.A[:, :, keep, keep]
        B = inst.B[:, keep, keep]
        return inst, SdpInstance(A, B, inst.c)

    def test_chain_pins_all_but_last(self):
        full, chain = self._chain_without_final(3, 0.5)
        assert chain.max_violation([0.0, 0.0, 7.0]) <= 0
        assert chain.max_violation([0.0, 0.0, -3.0]) <= 0
        assert chain.max_violation([1e-3, 0.0, 0.0]) > 0
        assert chain.max_violation([-1e-3, 0.0, 0.0]) > 0
        assert chain.max_violation([0.0, 1e-3, 0.0]) > 0
        # with the final block nothing works: x_1 = 0 contradicts x_1 >= 1
        rng = make_rng(0)
        for x in [[0, 0, 7.0], [1.0, 0, 1.0], [1.0, 1.0, 1.0]] + list(rng.normal(0, 3, (200, 3))):
            assert full.max_violation(x) > 0

    def test_lmi_and_adjoint(self):
        inst = make_infeasible_chain(m=4, p=2, n=6)
        rng = make_rng(1)
        x = rng.standard_normal(4)
        u = rng.standard_normal((6, 6))
        u = u + u.T
        for i in range(2):
            assert np.sum(inst.lmi(i, x) * u) == pytest.approx(x @ inst.adjoint(i, u))


class TestSweep:
    def test_hand_computed_step(self):
        A = np.zeros((1, 2, 2, 2))
        A[0, 0] = np.diag([1.0, 0.0])
        A[0, 1] = np.diag([0.0, 1.0])
        B = np.eye(2)[None]
        c = np.array([[0.1, -0.2]])
        inst = SdpInstance(A, B, c)
        pg = pg_extra_operator(inst, metropolis_weights([], 1), alpha=0.25, beta=0.5)
        z = pg.layout.pack(np.array([2.0, 3.0]), np.zeros((2, 2)), np.zeros(2))
        x, u, w = pg.layout.unpack(pg.sweep(z))
        # u = P_nsd(0.5 * (I - diag(2, 3))) = diag(-0.5, -1)
        np.testing.assert_allclose(u[0], np.diag([-0.5, -1.0]), atol=1e-14)
        np.testing.assert_allclose(w, 0.0)
        # x = x + alpha (A^*(2u) - c) = (2, 3) + 0.25 ((-1, -2) - (0.1, -0.2))
        np.testing.assert_allclose(x[0], [1.725, 2.55], atol=1e-14)
        # from the origin the projection clips everything
        x, u, _ = pg.layout.unpack(pg.sweep(np.zeros(pg.layout.size)))
        np.testing.assert_allclose(u[0], 0.0, atol=1e-14)
        np.testing.assert_allclose(x[0], [-0.025, 0.05], atol=1e-15)

    def test_feasible_instance_converges(self):
        # agent 0 asks x_1 >= 1, agent 1 is unconstrained; zero objective
        A = np.zeros((2, 1, 2, 2))
        A[0, 0] = -np.diag([1.0, 0.0])
        B = np.zeros((2, 2, 2))
        B[0] = -np.diag([1.0, 0.0])
        inst = SdpInstance(A, B, np.zeros((2, 1)))
        pg = pg_extra_operator(inst, metropolis_weights([(0, 1)]), 0.3, 0.3)
        z0 = np.zeros(pg.layout.size)
        res = []
        for k, z, tz in iterate(pg.op, picard(), z0):
            res.append(m_norm_sq(z, tz, pg))
            if k == 2000:
                break
        assert res[-1] < 1e-10 * max(res[0], 1.0)
        x, _, _ = pg.layout.unpack(z)
        np.testing.assert_allclose(x[:, 0], x[0, 0], atol=1e-5)
        assert x[0, 0] >= 1 - 1e-5

    def test_metric_not_positive_definite(self):
        inst = make_infeasible_chain(5, 0.5, 5, 4, 0)
        mix = metropolis_weights(ring_with_chords(5), 5)
        with pytest.raises(ValueError, match="positive definite"):
            pg_extra_operator(inst, mix, 1.0, 1.0)
        with pytest.raises(ValueError):
            pg_extra_operator(inst, mix, -0.1, 0.1)
        with pytest.raises(ValueError):
            pg_extra_operator(inst, metropolis_weights([(0, 1)]), 0.01, 0.01)

    def test_w_tracks_running_sum(self):
        pg = small_pg()
        p = pg.layout.p
        z0 = sample_state(pg, make_rng(0), 1.0)
        _, _, w0 = pg.layout.unpack(z0)
        acc = np.zeros_like(w0)
        half_lap = 0.5 * (np.eye(p) - pg.mixing.W)
        for k, z, _ in iterate(pg.op, picard(), z0):
            x, _, w = pg.layout.unpack(z)
            np.testing.assert_allclose(w, w0 + half_lap @ acc, atol=1e-12)
            acc = acc + x
            if k == 30:
                break

    def test_lapack_and_jacobi_agree(self):
        inst = make_infeasible_chain(5, 0.5, 5, 4, 0)
        mix = metropolis_weights(ring_with_chords(5), 5)
        a = pg_extra_operator(inst, mix, 0.01, 0.01, eig_method="lapack")
        b = pg_extra_operator(inst, mix, 0.01, 0.01, eig_method="jacobi")
        z = sample_state(a, make_rng(2), 1.0)
        np.testing.assert_allclose(a.sweep(z), b.sweep(z), atol=1e-10)


class TestMetric:
    def test_zero_difference(self):
        pg = small_pg()
        z = sample_state(pg, make_rng(0), 1.0)
        assert m_norm_sq(z, z, pg) == 0.0

    def test_primal_only(self):
        pg = small_pg()
        x = make_rng(1).standard_normal((pg.layout.p, pg.layout.m))
        z = pg.layout.pack(x, np.zeros((pg.layout.p, pg.layout.n, pg.layout.n)), np.zeros_like(x))
        assert m_norm_sq(z, 0 * z, pg) == pytest.approx(np.sum(x**2) / pg.alpha, rel=1e-13)

    def test_matches_dense_metric(self):
        pg = small_pg()
        M = pg.metric_matrix()
        lam_min = np.linalg.eigvalsh(M)[0]
        assert lam_min > 0
        rng = make_rng(2)
        for _ in range(20):
            a, b = sample_state(pg, rng, 1.0), sample_state(pg, rng, 1.0)
            d = pg.to_xuy(a) - pg.to_xuy(b)
            val = m_norm_sq(a, b, pg)
            assert val == pytest.approx(d @ M @ d, rel=1e-10)
            assert val >= lam_min * (d @ d) * (1 - 1e-10)

    def test_y_recovers_w(self):
        pg = small_pg()
        _, _, w = pg.layout.unpack(sample_state(pg, make_rng(3), 1.0))
        y = pg.to_y(w)
        half = pg.mixing.V @ np.diag(np.sqrt(np.clip(pg.mixing.sigma, 0, None) / 2)) @ pg.mixing.V.T
        np.testing.assert_allclose(half @ y, pg.beta * w, atol=1e-13)

    def test_sweep_nonexpansive_in_metric(self):
        pg = small_pg()
        rng = make_rng(4)
        audit = audit_nonexpansive(
            pg.op,
            samples=300,
            seed=4,
            norm=lambda d: np.sqrt(max(m_norm_sq(d, 0 * d, pg), 0.0)),
            sampler=lambda g: sample_state(pg, g, 10 ** g.uniform(-2, 2)),
        )
        assert not audit.flagged, str(audit)
        # firm nonexpansiveness: ||Ta - Tb||^2 + ||(I-T)a - (I-T)b||^2 <= ||a - b||^2
        for _ in range(200):
            s = 10 ** rng.uniform(-2, 2)
            a, b = sample_state(pg, rng, s), sample_state(pg, rng, s)
            ta, tb = pg.sweep(a), pg.sweep(b)
            lhs = m_norm_sq(ta, tb, pg) + m_norm_sq(a - ta, b - tb, pg)
            assert lhs <= m_norm_sq(a, b, pg) * (1 + 1e-10)

    def test_euclidean_norm_is_not_the_right_one(self):
        # the sweep can expand plain Euclidean distances; the metric matters
        pg = small_pg(0.05, 0.05)
        audit = audit_nonexpansive(pg.op, samples=300, seed=1, sampler=lambda g: sample_state(pg, g, 1.0))
        m_audit = audit_nonexpansive(
            pg.op, samples=300, seed=1,
            norm=lambda d: np.sqrt(m_norm_sq(d, 0 * d, pg)),
            sampler=lambda g: sample_state(pg, g, 1.0),
        )
        assert not m_audit.flagged
        assert audit.max_ratio > m_audit.max_ratio


class TestConfig:
    def test_reduced(self):
        cfg = PgExtraConfig.reduced()
        assert (cfg.m, cfg.n, cfg.p, cfg.horizon) == (5, 4, 5, 5000)

    def test_parse(self, tmp_path):
        text = """
[instance]
m = 5
p = 5
n = 4
epsilon = 0.25
objective = zero
[algo]
alpha = 0.02
horizon = 300
variant = picard, ohm, km:0.5
[output]
dir = out
"""
        cfg = load_config(text)
        assert (cfg.m, cfg.p, cfg.n, cfg.epsilon, cfg.objective) == (5, 5, 4, 0.25, "zero")
        assert cfg.alpha == 0.02 and cfg.beta == 0.01
        assert cfg.variants == ("picard", "ohm", "km:0.5")
        assert cfg.output_dir == "out"

    @pytest.mark.parametrize("text", ["[solver]\nx = 1\n", "[algo]\ngamma = 2\n"])
    def test_unknown_rejected(self, text):
        with pytest.raises(ValueError, match="unknown"):
            load_config(text)

    def test_graph_file(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("# path graph\n0 1\n1,2\n")
        cfg = load_config(f"[graph]\nfile = {path}\n", TINY)
        res = run_experiment(cfg)
        assert res.diagnostics["coupling_norm"] > 0


class TestExperiment:
    def test_equal_sweeps_and_columns(self):
        res = run_experiment(TINY)
        assert set(res.columns) == {"picard", "ohm"}
        for cols in res.columns.values():
            assert set(cols) == set(PGEXTRA_COLUMNS[1:])
            for series in cols.values():
                assert len(series) == TINY.horizon + 1
        assert res.diagnostics["reference_sweeps"] == 4 * TINY.horizon
        assert 0 < res.diagnostics["metric_margin"] < 1
        for marg in res.tail_margins.values():
            assert len(marg["fpr"]) == TINY.horizon - TINY.horizon // 2 + 1

    def test_csv_is_reproducible(self, tmp_path):
        a = run_experiment(TINY)
        b = run_experiment(TINY)
        assert a.to_csv("ohm") == b.to_csv("ohm")
        pa = a.write(str(tmp_path / "a"))
        pb = b.write(str(tmp_path / "b"))
        for x, y in zip(pa, pb):
            assert open(x).read() == open(y).read()
        head = open(pa[0]).readline().strip()
        assert head == ",".join(PGEXTRA_COLUMNS)

    def test_residual_norm_reaches_displacement(self):
        res = run_experiment(TINY)
        cols = res.columns["picard"]
        # ||r^k||^2 >= ||v||^2 always, and the normalized iterate tracks v_hat
        assert np.all(cols["fpr_mnorm_sq"][1:] >= 0.9 * res.v_hat_norm_sq)
        assert res.v_hat_norm_sq > 0
