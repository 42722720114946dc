import math
from dataclasses import replace

import numpy as np
import pytest

from opsk import simulation
from opsk.adaptive import UpdatePolicy, candidate_allocations
from opsk.channel import NOISE_FREE, ReleaseEvent, advance_drift
from opsk.perceptual import BitAllocation, generate_odor_bank
from opsk.receiver import absorbed_mass, mass_ratio
from opsk.simulation import (
    ScenarioConfig,
    absorb_and_filter,
    adaptive_extension_analysis,
    expected_mass_ratio,
    random_distributions,
    run_scenario,
    scenario_bank,
    ser_type2_analytic,
    simulate_adaptive_link,
    streams,
    sweep,
    symbol_rate,
)

BASE = ScenarioConfig(distance=0.1, flow_ratio=1.0, edge_ratio=0.05, n_symbols=2000)


def binomial_se(p, n):
    return math.sqrt(max(p * (1 - p), 1.0 / n) / n)


class TestConfig:
    def test_derived(self):
        c = ScenarioConfig(distance=2.0, edge_ratio=0.05, flow_ratio=0.5, fnr=20)
        assert c.edge == pytest.approx(0.1)
        assert c.flow == pytest.approx(1.0)
        assert c.geometry.center == (2.0, 0.0, 0.0)
        assert c.flow_model.sigma == pytest.approx((0.05, 0.0, 0.0))
        assert c.fnr == (20.0, 20.0, 20.0)

    def test_defaults(self):
        c = ScenarioConfig(distance=0.1)
        assert (c.D, c.M, c.m_ratio, c.n_symbols) == (0.14e-4, 2.4e-9, 2.0, 10_000)

    @pytest.mark.parametrize(
        "kw",
        [{"distance": 0}, {"edge_ratio": -1}, {"flow_ratio": 0}, {"fnr": 0}, {"pn": -1}, {"quality": 0}, {"m_ratio": 0.5}, {"n_symbols": 0}, {"seed": -1}],
    )
    def test_rejects(self, kw):
        args = {"distance": 0.1, **kw}
        with pytest.raises(ValueError):
            ScenarioConfig(**args)


class TestRunScenario:
    def test_noise_free_is_error_free(self):
        r = run_scenario(BASE)
        assert r.ser == 0.0
        assert r.type1_errors == r.type2_errors == 0

    def test_deterministic(self):
        cfg = replace(BASE, fnr=10.0, pn=5.0, seed=99)
        a, b = run_scenario(cfg, keep_symbols=True), run_scenario(cfg, keep_symbols=True)
        assert a == b
        assert np.array_equal(a.sent, b.sent) and np.array_equal(a.decoded, b.decoded)

    def test_error_partition(self):
        cfg = replace(BASE, distance=1.0, flow_ratio=10.0, edge_ratio=0.01, fnr=20.0, pn=30.0, seed=3)
        r = run_scenario(cfg, keep_symbols=True)
        assert r.type1_errors > 0 and r.type2_errors > 0
        assert r.type1_errors + r.type2_errors <= r.n_symbols
        assert r.ser == (r.type1_errors + r.type2_errors) / r.n_symbols
        assert np.count_nonzero(r.sent != r.decoded) == r.type1_errors + r.type2_errors
        assert 0 <= r.ser <= 1
        assert 0 < r.mass_ratio_expected <= 1
        assert r.symbol_rate > 0

    def test_common_random_numbers(self):
        # the sent sequence does not depend on the noise settings
        a = run_scenario(replace(BASE, n_symbols=300), keep_symbols=True)
        b = run_scenario(replace(BASE, n_symbols=300, fnr=5.0, pn=20.0), keep_symbols=True)
        assert np.array_equal(a.sent, b.sent)

    def test_retirement_is_invisible(self, monkeypatch):
        cfg = replace(BASE, fnr=20.0, n_symbols=800, distance=1.0, flow_ratio=10.0)
        with_retire = run_scenario(cfg, keep_symbols=True)
        monkeypatch.setattr(simulation, "RETIRE_MASS", 0.0)
        monkeypatch.setattr(simulation, "RETIRE_RELATIVE", 0.0)
        without = run_scenario(cfg, keep_symbols=True)
        assert np.array_equal(with_retire.decoded, without.decoded)


class TestAbsorbAndFilter:
    def test_matches_event_simulation(self, monkeypatch):
        # the reference keeps every puff forever
        monkeypatch.setattr(simulation, "RETIRE_MASS", 0.0)
        cfg = replace(BASE, fnr=(5.0, 5.0, 5.0), distance=0.05, flow_ratio=2.0)
        timing = cfg.timing()
        T_a, T_s = timing.T_a, timing.T_s
        flow, geom, diff = cfg.flow_model, cfg.geometry, cfg.diffusion
        rng = np.random.default_rng(8)
        n = 40
        sent = rng.integers(-1, 8, size=n)
        # an exactly noise-free axis would skip y and z; give every axis some spread
        u = np.asarray(flow.mean) + np.array([0.02, 0.01, 0.01]) * rng.standard_normal((n, 3))
        chosen, greatest = absorb_and_filter(sent, u, T_a, T_s, cfg.M, geom, diff, 8, replace(flow, sigma=(0.02, 0.01, 0.01)), 1.0)

        puffs = []
        for k in range(n):
            if sent[k] >= 0:
                puffs.append(ReleaseEvent(int(sent[k]), cfg.M, k + 1))
            at_absorb = [advance_drift(p, tuple(u[k]), T_a) for p in puffs]
            res = absorbed_mass(at_absorb, geom, diff, k + 1)
            if res.greatest() > 0:
                best = max(sorted(res.per_odor_mass), key=lambda o: res.per_odor_mass[o])
                assert chosen[k] == best
                assert greatest[k] == pytest.approx(res.per_odor_mass[best], rel=1e-9)
            else:
                # nothing reached the cube, or it underflowed: a silent interval
                assert chosen[k] == -1
            puffs = [advance_drift(p, tuple(u[k]), T_s) for p in puffs]


class TestAnalytic:
    def test_limits(self):
        bank = generate_odor_bank(BitAllocation(1, 1, 1), 1.0, 1.0)
        assert ser_type2_analytic(bank, 0.0) == 0.0
        assert ser_type2_analytic(bank, 1e-3) == pytest.approx(0.0, abs=1e-12)
        # a huge spread sends half of every boundary odor's draws to the far side
        assert ser_type2_analytic(bank, 1e9) == pytest.approx(1 - 0.5**3, abs=1e-6)
        bank2 = generate_odor_bank(BitAllocation(2, 0, 0), 1.0, 1.0)
        assert ser_type2_analytic(bank2, 1e9) == pytest.approx(1 - 0.5 * 0.5, abs=1e-6)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ser_type2_analytic(generate_odor_bank(BitAllocation(1, 1, 1), 1.0, 1.0), -1.0)

    def test_convergence(self):
        a = BitAllocation(1, 1, 1)
        for n in (1_000, 10_000, 100_000):
            cfg = ScenarioConfig(distance=0.1, allocation=a, pn=5.0, n_symbols=n, seed=n)
            r = run_scenario(cfg)
            exact = ser_type2_analytic(scenario_bank(cfg), 5.0)
            assert r.type1_errors == 0
            assert abs(r.ser - exact) <= 3 * binomial_se(exact, n)

    def test_bank_is_the_run_bank(self):
        cfg = replace(BASE, quality=0.4, seed=5)
        b1 = scenario_bank(cfg)
        b2 = generate_odor_bank(cfg.allocation, 0.4, cfg.n_symbols * cfg.M, streams(5)[3])
        assert [o.vector for o in b1.odors()] == [o.vector for o in b2.odors()]


class TestSweep:
    def grid(self):
        return [replace(BASE, n_symbols=300, pn=p) for p in (1.0, 10.0)]

    def test_rows(self):
        rows = sweep(self.grid(), "type2")
        assert [r["pn"] for r in rows] == [1.0, 10.0]
        assert list(rows[0])[:2] == ["pn", "ser"]
        assert "ser_analytic" in rows[0]

    def test_threads_do_not_change_results(self):
        assert sweep(self.grid(), "type2", threads=1) == sweep(self.grid(), "type2", threads=2)

    def test_mode_conflicts(self):
        with pytest.raises(ValueError):
            sweep(self.grid(), "type1")
        with pytest.raises(ValueError):
            sweep([replace(BASE, fnr=f) for f in (10.0, 20.0)], "type2")
        with pytest.raises(ValueError):
            sweep(self.grid(), "bogus")
        with pytest.raises(ValueError):
            sweep([], "rate")

    def test_modes_silence_the_other_noise(self):
        cfg = replace(BASE, n_symbols=500, fnr=2.0, pn=30.0, distance=1.0, flow_ratio=10.0, edge_ratio=0.01)
        t1 = sweep([cfg], "type1")[0]
        t2 = sweep([cfg], "type2")[0]
        assert t1["type2_errors"] == 0
        assert t2["type1_errors"] == 0

    def test_mass_ratio_monotone_in_edge(self):
        rows = sweep([replace(BASE, edge_ratio=e) for e in (0.001, 0.01, 0.05, 0.1)], "mass_ratio")
        vals = [r["mass_ratio"] for r in rows]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestRate:
    def test_definition(self):
        cfg = replace(BASE, m_ratio=3.0)
        assert symbol_rate(cfg) == 1.0 / (3.0 * cfg.timing().T_a)

    def test_scaling(self):
        c1 = ScenarioConfig(distance=1.0, flow_ratio=1.0)
        c2 = ScenarioConfig(distance=1.0, flow_ratio=2.0)
        assert symbol_rate(c2) == pytest.approx(2 * symbol_rate(c1), rel=0.1)
        rates = [symbol_rate(ScenarioConfig(distance=d, flow_ratio=1.0)) for d in (0.5, 1.0, 10.0, 100.0)]
        assert max(rates) / min(rates) <= 1.1

    def test_expected_mass_ratio(self):
        cfg = BASE
        assert expected_mass_ratio(cfg) == mass_ratio(cfg.geometry, cfg.flow_model.mean, cfg.diffusion, cfg.timing().T_a)


class TestAdaptiveAnalysis:
    def test_uniform_vs_skewed(self):
        a = BitAllocation(1, 1, 1)
        dists = random_distributions(a.n_classes, 3, seed=4)
        res = adaptive_extension_analysis(a, dists, UpdatePolicy(N=50), bank_mass=2000 * 2.4e-9)
        assert res[0].extension_percent <= 5.0
        assert all(r.extension_percent > res[0].extension_percent for r in res[1:])
        assert all(r.final_allocation.K >= 1 for r in res)

    def test_concentrated_follows_argmax(self):
        a = BitAllocation(2, 1, 1)
        dist = np.full(a.n_classes, 0.01)
        dist[5] = 1.0
        (res,) = adaptive_extension_analysis(a, [dist], UpdatePolicy(N=50), bank_mass=500 * 2.4e-9)
        first = res.updates[0]
        best = max(first.extensions, key=lambda ce: ce[1])
        assert first.new == best[0]
        assert [c for c, _ in first.extensions] == candidate_allocations(a)

    def test_distributions(self):
        d = random_distributions(8, 4, seed=1)
        assert len(d) == 4
        assert np.allclose(d[0], 1 / 8)
        assert all(x.sum() == pytest.approx(1.0) for x in d)
        assert np.array_equal(random_distributions(8, 4, seed=1)[2], d[2])

    def test_bad_distribution(self):
        with pytest.raises(ValueError):
            adaptive_extension_analysis(BitAllocation(1, 1, 1), [[1.0, 2.0]], UpdatePolicy(), 1e-6)


class TestAdaptiveLink:
    @pytest.mark.parametrize("alloc", [BitAllocation(1, 1, 1), BitAllocation(2, 2, 1), BitAllocation(3, 1, 1)])
    def test_noise_free_payload_survives_updates(self, alloc):
        cfg = ScenarioConfig(distance=0.1, allocation=alloc, seed=2)
        res = simulate_adaptive_link(cfg, UpdatePolicy(N=50), n_bits=4000, capsule_mass=150 * cfg.M, p_one=0.8)
        assert len(res.tx_allocations) >= 2
        assert res.rx_allocations == res.tx_allocations
        assert res.payload_intact
        assert len(res.bits_sent) > 0


def test_larger_cube_cuts_type1_errors():
    # at (0.1 m, ratio 1) both edges give zero errors, so use a point with ISI
    base = ScenarioConfig(distance=1.0, flow_ratio=10.0, fnr=20, n_symbols=2000)
    small = run_scenario(replace(base, edge_ratio=0.001)).ser
    large = run_scenario(replace(base, edge_ratio=0.1)).ser
    assert large < small
