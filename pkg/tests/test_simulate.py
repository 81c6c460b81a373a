import os
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqcircuit import (CircuitBuilder, GenSpec, SimConfig, Workload,
                        exhaustive_stats, generate, markov_params, simulate)
from seqcircuit.simulate import (SimulationError, read_trace_file,
                                 write_trace_file)
from tests.conftest import and2, toggle_ff


class TestMarkovParams:
    def test_iid_fair_bits(self):
        # Solving a(1-p1) = b*p1 and 2a(1-p1) = ptr for (0.5, 0.5) by hand
        # gives a = b = 0.5: an i.i.d. fair coin.
        assert markov_params(0.5, 0.5) == (0.5, 0.5)

    def test_strict_alternation(self):
        assert markov_params(0.5, 1.0) == (1.0, 1.0)

    def test_constant_one(self):
        assert markov_params(1.0, 0.0) == (0.0, 0.0)

    def test_infeasible(self):
        with pytest.raises(SimulationError):
            markov_params(0.1, 0.5)
        with pytest.raises(SimulationError):
            markov_params(1.0, 0.1)

    @settings(max_examples=100, deadline=None)
    @given(p1=st.floats(0.01, 0.99), frac=st.floats(0.0, 1.0))
    def test_stationarity_and_change_rate(self, p1, frac):
        ptr = frac * 2.0 * min(p1, 1.0 - p1)
        a, b = markov_params(p1, ptr)
        assert 0.0 <= a <= 1.0 + 1e-9 and 0.0 <= b <= 1.0 + 1e-9
        assert a * (1 - p1) == pytest.approx(b * p1, abs=1e-12)
        assert 2 * a * (1 - p1) == pytest.approx(ptr, abs=1e-12)


class TestSimulate:
    def test_not_complement_exact(self):
        b = CircuitBuilder()
        pi = b.add_pi()
        inv = b.add_not(pi)
        b.set_outputs([inv])
        g = b.build()
        stats = simulate(g, Workload({pi: (0.3, 0.2)}), SimConfig(500, 50, 7))
        total = 500 * 50
        assert stats.p1_counts[inv] == total - stats.p1_counts[pi]
        assert stats.tr_counts[inv] == stats.tr_counts[pi]
        assert Fraction(int(stats.p1_counts[inv]), total) \
            == 1 - Fraction(int(stats.p1_counts[pi]), total)
        assert abs(stats.p1[inv] - 0.7) < 3 * np.sqrt(0.3 * 0.7 / total)

    def test_and_of_iid_fair_inputs(self):
        # Output is Bernoulli(1/4) i.i.d. across cycles, so the change
        # probability is 2 * 1/4 * 3/4 = 3/8.
        g, ids = and2()
        w = Workload({ids["a"]: (0.5, 0.5), ids["b"]: (0.5, 0.5)})
        stats = simulate(g, w, SimConfig(1000, 100, 3))
        n = 1000 * 100
        se_p = np.sqrt(0.25 * 0.75 / n)
        se_t = np.sqrt(0.375 * 0.625 / (1000 * 99))
        assert abs(stats.p1[ids["and"]] - 0.25) < 3 * se_p
        assert abs(stats.ptr[ids["and"]] - 0.375) < 3 * se_t

    def test_toggle_ff_alternates(self):
        g, ids = toggle_ff()
        stats = simulate(g, Workload({ids["pi"]: (0.5, 0.5)}),
                         SimConfig(50, 20, 1))
        tr = stats.traces[ids["ff"]]
        assert np.array_equal(tr[:, 0], np.zeros(50, dtype=bool))
        assert np.array_equal(tr[:, 1:], ~tr[:, :-1])
        assert stats.ptr[ids["ff"]] == 1.0

    def test_determinism_bitwise(self):
        g = generate(GenSpec(n_pi=4, n_and=15, n_not=6, n_ff=3, seed=5))
        w = Workload.random(g, 9)
        cfg = SimConfig(300, 40, 11)
        s1 = simulate(g, w, cfg)
        s2 = simulate(g, w, cfg)
        assert np.array_equal(s1.p1_counts, s2.p1_counts)
        assert np.array_equal(s1.tr_counts, s2.tr_counts)
        for ff in g.ffs:
            assert np.array_equal(s1.traces[ff], s2.traces[ff])

    def test_worker_count_invariance(self):
        g = generate(GenSpec(n_pi=4, n_and=15, n_not=6, n_ff=3, seed=6,
                             feedback_prob=0.6))
        w = Workload.random(g, 10)
        cfg = SimConfig(600, 30, 13)
        s1 = simulate(g, w, cfg, workers=1)
        s4 = simulate(g, w, cfg, workers=4)
        assert np.array_equal(s1.p1_counts, s4.p1_counts)
        assert np.array_equal(s1.tr_counts, s4.tr_counts)

    def test_missing_pi_rejected(self):
        g, ids = and2()
        with pytest.raises(SimulationError):
            simulate(g, Workload({ids["a"]: (0.5, 0.5)}), SimConfig(10, 5, 0))

    def test_complement_law_all_nodes(self):
        from seqcircuit.circuit import NodeKind

        for seed in range(5):
            g = generate(GenSpec(n_pi=3, n_and=10, n_not=6, n_ff=2, seed=seed,
                                 feedback_prob=0.5))
            stats = simulate(g, Workload.random(g, seed), SimConfig(200, 30, 2))
            for v in range(g.n):
                if g.kinds[v] == NodeKind.NOT:
                    u = g.fanins[v][0]
                    assert stats.p1_counts[v] == 200 * 30 - stats.p1_counts[u]
                    assert stats.tr_counts[v] == stats.tr_counts[u]

    def test_stationary_transition_bound(self):
        for seed in range(5):
            g = generate(GenSpec(n_pi=4, n_and=12, n_not=5, n_ff=3, seed=seed,
                                 feedback_prob=0.5))
            stats = simulate(g, Workload.random(g, seed + 50),
                             SimConfig(1000, 100, 3))
            bound = 2 * np.minimum(stats.p1, 1 - stats.p1) + 0.02
            assert (stats.ptr <= bound).all()

    def test_pattern_counts_sum(self):
        g, ids = and2()
        w = Workload({ids["a"]: (0.5, 0.5), ids["b"]: (0.4, 0.3)})
        stats = simulate(g, w, SimConfig(100, 25, 5), keep_pattern_counts=True)
        assert np.array_equal(stats.pattern_p1_counts.sum(axis=1),
                              stats.p1_counts)
        assert np.array_equal(stats.pattern_tr_counts.sum(axis=1),
                              stats.tr_counts)


class TestExhaustive:
    def test_and_exact(self):
        g, ids = and2()
        w = Workload({ids["a"]: (0.5, 0.5), ids["b"]: (0.5, 0.5)})
        ex = exhaustive_stats(g, w)
        assert ex.p1[ids["and"]] == pytest.approx(0.25, abs=1e-9)
        assert ex.ptr[ids["and"]] == pytest.approx(0.375, abs=1e-9)

    def test_toggle_exact(self):
        g, ids = toggle_ff()
        ex = exhaustive_stats(g, Workload({ids["pi"]: (0.5, 0.5)}))
        assert ex.p1[ids["ff"]] == pytest.approx(0.5, abs=1e-9)
        assert ex.ptr[ids["ff"]] == pytest.approx(1.0, abs=1e-9)

    def test_finite_horizon_matches_simulation_mean(self):
        # The cfg-form of the oracle is the exact expectation of simulate().
        for seed in (0, 1, 2):
            g = generate(GenSpec(n_pi=4, n_and=8, n_not=4, n_ff=2, seed=seed,
                                 feedback_prob=0.6))
            w = Workload.random(g, seed + 3)
            cfg = SimConfig(2000, 50, seed)
            stats = simulate(g, w, cfg, keep_pattern_counts=True)
            exact = exhaustive_stats(g, w, cfg)
            M = cfg.n_patterns
            se_p1 = np.maximum(
                (stats.pattern_p1_counts / cfg.n_cycles).std(axis=1, ddof=1)
                / np.sqrt(M), 1.0 / (M * cfg.n_cycles))
            se_tr = np.maximum(
                (stats.pattern_tr_counts / (cfg.n_cycles - 1)).std(axis=1, ddof=1)
                / np.sqrt(M), 1.0 / (M * (cfg.n_cycles - 1)))
            assert (np.abs(stats.p1 - exact.p1) <= 4 * se_p1).all()
            assert (np.abs(stats.ptr - exact.ptr) <= 4 * se_tr).all()

    def test_constant_input_propagates(self):
        b = CircuitBuilder()
        pi = b.add_pi()
        c = b.const_false()
        g_and = b.add_and(pi, c)
        b.set_outputs([g_and])
        g = b.build()
        ex = exhaustive_stats(g, Workload({pi: (0.7, 0.3)}))
        assert ex.p1[g_and] == 0.0
        assert ex.ptr[g_and] == 0.0

    def test_size_limits(self):
        b = CircuitBuilder()
        for _ in range(13):
            b.add_pi()
        g = b.build()
        w = Workload({pi: (0.5, 0.5) for pi in g.pis})
        with pytest.raises(SimulationError):
            exhaustive_stats(g, w)


class TestTraceFile:
    def test_roundtrip(self, tmp_path):
        g = generate(GenSpec(n_pi=3, n_and=6, n_not=3, n_ff=4, seed=2,
                             feedback_prob=0.5))
        stats = simulate(g, Workload.random(g, 1), SimConfig(37, 13, 5))
        path = os.path.join(tmp_path, "t.bin")
        write_trace_file(path, stats)
        traces, n_pat, n_cyc = read_trace_file(path)
        assert (n_pat, n_cyc) == (37, 13)
        assert sorted(traces) == sorted(stats.traces)
        for ff, mat in traces.items():
            assert np.array_equal(mat, stats.traces[ff])

    def test_bad_magic(self, tmp_path):
        path = os.path.join(tmp_path, "bad.bin")
        with open(path, "wb") as f:
            f.write(b"XXXX")
        with pytest.raises(SimulationError):
            read_trace_file(path)
