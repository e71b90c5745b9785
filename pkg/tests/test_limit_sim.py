import logging
import math

import numpy as np
import pytest
from scipy import stats

from vacqueue import heuristics as H
from vacqueue.estimators import aggregate, estimate_pow_limit, estimate_sd, time_average
from vacqueue.limit_sim import (LimitState, ModelParams, NumericalFailure, SimConfig, run_replications, simulate,
                                simulate_hw, simulate_near_hw, simulate_nds, simulate_reference_rbm)
from vacqueue.stochastic import RngStream, clock_stream_id

TABLE1 = ModelParams(-2.0, 1.0, 3.0, 2.0, 0.1)
TABLE2 = ModelParams(-6.0, 2.0, 3.0, 5.0, 3.0)


class TestParams:
    @pytest.mark.parametrize("kw", [dict(mu=0.0), dict(sigma=-1.0), dict(beta=-0.1), dict(gamma=0.0)])
    def test_invalid(self, kw):
        base = dict(b=-1.0, mu=1.0, sigma=1.0)
        with pytest.raises(ValueError):
            ModelParams(**{**base, **kw})

    def test_rate_matrix_checks(self):
        with pytest.raises(ValueError):
            ModelParams(-1, 1, 1, [1, 1], [1, 1], [[-1, 1], [1, -0.5]])
        with pytest.raises(ValueError):
            ModelParams(-1, 1, 1, [1, 1], [1, 1], [[1, -1], [0, 0]])
        p = ModelParams(-1, 1, 1, [1, 0], [1, 2], [[-1, 1], [0.5, -0.5]])
        assert p.m == 2

    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(steps=0), dict(burn_in=1.0), dict(regime="x"),
                                    dict(replications=0), dict(scheme="euler")])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            SimConfig(**kw)

    def test_scale_changes_only_steps(self):
        c = SimConfig(delta=1e-4, steps=1000, seed=4, regime="nds")
        s = c.scaled(0.1)
        assert s.steps == 100 and (s.delta, s.seed, s.regime) == (c.delta, c.seed, c.regime)


class TestHW:
    def test_deterministic_no_vacation(self):
        tr = simulate_hw(ModelParams(-1, 1, 0.0), LimitState(), SimConfig(delta=1e-3, steps=30_000))
        assert tr.x[-1] == pytest.approx(-1.0, abs=1e-9)
        assert not tr.v.any()

    def test_fixed_point(self):
        tr = simulate_hw(ModelParams(-2, 1, 0.0, 2, 0.1), LimitState(), SimConfig(delta=1e-2, steps=50_000))
        y, v = H.steady_averages_hw(-2, 1, 2, 0.1)
        assert tr.x[-1] == pytest.approx(-2.0, abs=1e-4)
        assert tr.v[-1] == pytest.approx(v, abs=1e-4)

    def test_invariants(self):
        tr = simulate_hw(TABLE1, LimitState(), SimConfig(delta=1e-3, steps=100_000, seed=1))
        assert np.all(tr.v >= 0) and not tr.l.any()
        assert len({tr.t.size, tr.x.size, tr.u.shape[0], tr.l.size}) == 1

    def test_clamp_recorded(self, caplog):
        # gamma * delta > 1 drives explicit Euler negative; the clamp keeps V >= 0
        p = ModelParams(-1, 1, 1, 1.0, 50.0)
        with caplog.at_level(logging.WARNING):
            tr = simulate_hw(p, LimitState(0.0, 1.0), SimConfig(delta=0.05, steps=2000, seed=2))
        assert tr.diagnostics["clamp_events"] > 0
        assert np.all(tr.v >= 0)

    def test_numerical_failure_reports_step(self):
        with pytest.raises(NumericalFailure) as e:
            simulate_hw(ModelParams(-1, 1, 1), LimitState(), SimConfig(delta=1e300, steps=10))
        assert e.value.step >= 0

    def test_multi_stage_mass_nonincreasing_without_beta(self):
        p = ModelParams(-1, 1, 0.0, [0, 0], [0.5, 1.0], [[-2, 2], [0.3, -0.3]])
        tr = simulate_hw(p, LimitState(0.0, [3.0, 1.0]), SimConfig(delta=1e-3, steps=5000))
        mass = tr.u.sum(axis=1)
        assert np.all(np.diff(mass) <= 1e-12) and np.all(tr.u >= 0)
        # stage 1 drains into stage 2 at rate r_12 = 2 on top of its own ending rate
        np.testing.assert_allclose(tr.u[1] - tr.u[0], 1e-3 * np.array([-2.5 * 3 + 0.3, 2 * 3 - 1.3 * 1]),
                                   atol=1e-12)


class TestNearHW:
    def test_decoupled_ode(self):
        p = ModelParams(-1, 1, 0.0, 0.0, 0.7)
        tr = simulate_near_hw(p, LimitState(0.0, 2.0), SimConfig(delta=1e-3, steps=3000, regime="near-hw"))
        np.testing.assert_allclose(tr.v, 2.0 * np.exp(-0.7 * tr.t), atol=5e-3 * 2.0)

    def test_reflected_drift(self):
        tr = simulate_near_hw(ModelParams(-2, 1, 0.0), LimitState(), SimConfig(delta=1e-3, steps=1000,
                                                                            regime="near-hw"))
        assert not tr.x.any()
        np.testing.assert_allclose(tr.l, 2 * tr.t, rtol=1e-12, atol=1e-12)

    def test_rejects_negative_x(self):
        with pytest.raises(ValueError):
            simulate_near_hw(TABLE1, LimitState(-0.1), SimConfig(regime="near-hw"))

    def test_balance_and_complementarity(self):
        cfg = SimConfig(delta=1e-3, steps=10_000_000, regime="near-hw", seed=5, stride=100)
        tr = simulate_near_hw(TABLE1, LimitState(), cfg)
        s = tr.summary
        assert tr.diagnostics["complementarity"] == 0.0
        assert np.all(tr.x >= 0) and np.all(np.diff(tr.l) >= 0)
        resid = TABLE1.b + TABLE1.mu * s.v_mean + s.l_rate
        assert abs(resid) <= 0.02 * abs(TABLE1.b)

    def test_matches_rbm_in_distribution_when_beta_zero(self):
        p = ModelParams(-1, 1, 1, 0.0, 0.7)
        a = [simulate_near_hw(p, LimitState(), SimConfig(delta=1e-2, steps=200, regime="near-hw", stride=200,
                                                           seed=1), r).x[-1] for r in range(10_000)]
        b = [simulate_reference_rbm(p, LimitState(), SimConfig(delta=1e-2, steps=200, regime="near-hw",
                                                                 stride=200, seed=2), r).x[-1] for r in range(10_000)]
        assert stats.ks_2samp(a, b).statistic <= 0.02


class TestNDS:
    def test_no_vacation_input(self):
        tr = simulate_nds(ModelParams(-3, 1, 0.0, 0.0, 1.0), LimitState(), SimConfig(delta=1e-3, steps=2000,
                                                                                   regime="nds"))
        assert not tr.v.any() and not tr.x.any()
        np.testing.assert_allclose(tr.l, 3 * tr.t, rtol=1e-12, atol=1e-12)

    def test_rejects_fractional_v(self):
        with pytest.raises(ValueError):
            simulate_nds(TABLE2, LimitState(0.0, 0.5), SimConfig(regime="nds"))

    def test_short_vacations(self):
        p = ModelParams(-3, 2, 1.0, 5.0, 1e3)
        tr = simulate_nds(p, LimitState(), SimConfig(delta=1e-4, steps=2_000_000, regime="nds", seed=3, stride=100))
        assert tr.summary.v_mean <= 0.01 * 3 / 2

    @pytest.mark.parametrize("scheme", ["threshold", "bernoulli"])
    def test_balance_table2_point(self, scheme):
        # both balance equations hold pathwise for the scheme up to O(1/T) terms, so a coarse
        # step with a long horizon is the right trade
        cfg = SimConfig(delta=1e-3, steps=20_000_000, regime="nds", seed=7, scheme=scheme, stride=1000)
        tr = simulate_nds(TABLE2, LimitState(), cfg)
        v, l = H.steady_averages_nds(-6, 2, 5, 3)
        s = tr.summary
        assert s.v_mean == pytest.approx(v, rel=0.05)
        assert s.l_rate == pytest.approx(l, rel=0.05)
        assert abs(-6 + 2 * s.v_mean + s.l_rate) <= 0.02 * 6
        assert abs(-3 * s.v_mean + 5 * s.l_rate / 2) <= 0.02 * 3 * v
        assert tr.diagnostics["complementarity"] == 0.0

    def test_integer_unit_jumps_and_causality_on_full_grid(self):
        cfg = SimConfig(delta=1e-3, steps=200_000, regime="nds", seed=11)
        tr = simulate_nds(ModelParams(-3, 2, 3, 2, 0.1), LimitState(), cfg)
        assert np.all(tr.v == np.round(tr.v)) and np.all(tr.v >= 0)
        dv = np.diff(tr.v)
        # several down-jumps may fire inside one Euler step; each jump is still a unit jump
        assert tr.diagnostics["up_jumps"] + tr.diagnostics["down_jumps"] >= np.abs(dv).sum()
        assert tr.v[-1] == tr.diagnostics["up_jumps"] - tr.diagnostics["down_jumps"]
        up = np.nonzero(dv > 0)[0]
        assert up.size > 0
        assert np.all(tr.x[up + 1] == 0) and np.all(np.diff(tr.l)[up] > 0)

    def test_up_jumps_equal_clock_count(self):
        """Up-jump count equals the begin clock's jumps at argument beta/mu * L(T)."""
        p = ModelParams(-3, 2, 3, 2, 0.1)
        cfg = SimConfig(delta=1e-3, steps=200_000, regime="nds", seed=12, stride=1000)
        tr = simulate_nds(p, LimitState(), cfg)
        g = RngStream(12, clock_stream_id(1, 0), 0).generator
        arg = 2 / 2 * tr.diagnostics["l_end"]
        thr, count = g.standard_exponential(), 0
        while thr <= arg:
            count += 1
            thr += g.standard_exponential()
        assert tr.diagnostics["up_jumps"] == count > 0

    def test_multi_stage(self):
        p = ModelParams(-3, 2, 2, [1.5, 0.5], [0.3, 1.0], [[-1, 1], [0.2, -0.2]])
        tr = simulate_nds(p, LimitState(), SimConfig(delta=1e-3, steps=300_000, regime="nds", seed=2, stride=1))
        assert np.all(tr.u >= 0) and np.all(tr.u == np.round(tr.u))
        assert tr.diagnostics["stage_moves"] > 0

    def test_multi_stage_mass_nonincreasing_without_beta(self):
        p = ModelParams(-3, 2, 2, [0, 0], [0.3, 1.0], [[-1, 1], [0.2, -0.2]])
        tr = simulate_nds(p, LimitState(0.0, [20, 5]), SimConfig(delta=1e-3, steps=20_000, regime="nds", stride=1))
        assert np.all(np.diff(tr.v) <= 0) and tr.v[-1] < 25

    def test_bernoulli_clip_warning(self, caplog):
        p = ModelParams(-3, 2, 1, 2, 50.0)
        with caplog.at_level(logging.WARNING):
            tr = simulate_nds(p, LimitState(0.0, 3), SimConfig(delta=0.05, steps=2000, regime="nds",
                                                               scheme="bernoulli"))
        assert tr.diagnostics["clipped"] > 0
        assert "clipped" in caplog.text


class TestReference:
    @pytest.mark.slow
    def test_rbm_mean(self):
        # projection puts an O(sqrt(delta)) bias on E X; at delta = 1e-4 it is about -2.5%
        rep = aggregate([estimate_sd(t) - 1 for t in run_replications(
            TABLE2, LimitState(), SimConfig(delta=1e-5, steps=200_000_000, regime="nds", replications=2, seed=1,
                                    stride=1_000_000),
            reference=True)])
        assert rep.estimate == pytest.approx(0.75, rel=0.02)

    def test_zero_noise(self):
        tr = simulate_reference_rbm(ModelParams(-6, 2, 0.0), LimitState(), SimConfig(steps=1000, regime="nds"))
        assert not tr.x.any() and not tr.v.any()

    def test_hw_reference_has_no_vacations(self):
        cfg = SimConfig(delta=1e-3, steps=100_000, seed=1)
        tr = simulate_reference_rbm(TABLE1, LimitState(0.0, 5.0), cfg)
        assert not tr.v.any()
        same = simulate_hw(TABLE1, LimitState(), SimConfig(delta=1e-3, steps=100_000, seed=1, reference_only=True))
        np.testing.assert_array_equal(tr.x, same.x)


class TestReproducibility:
    @pytest.mark.parametrize("regime", ["hw", "near-hw", "nds"])
    def test_bit_identical(self, regime):
        cfg = SimConfig(delta=1e-3, steps=20_000, regime=regime, seed=42)
        a, b = simulate(TABLE1, LimitState(), cfg), simulate(TABLE1, LimitState(), cfg)
        for f in ("x", "u", "l"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        c = simulate(TABLE1, LimitState(), cfg, replication=1)
        assert not np.array_equal(a.x, c.x)

    def test_stride_thins_same_path(self):
        full = simulate(TABLE1, LimitState(), SimConfig(delta=1e-3, steps=10_000, seed=3))
        thin = simulate(TABLE1, LimitState(), SimConfig(delta=1e-3, steps=10_000, seed=3, stride=100))
        np.testing.assert_array_equal(full.x[::100], thin.x)
        assert full.summary == thin.summary

    def test_workers_match_serial(self):
        cfg = SimConfig(delta=1e-3, steps=20_000, regime="nds", seed=5, replications=3, stride=20_000)
        a = run_replications(TABLE2, LimitState(), cfg)
        b = run_replications(TABLE2, LimitState(), cfg, workers=2)
        assert [t.summary for t in a] == [t.summary for t in b]


@pytest.mark.slow
def test_euler_halving_within_ci():
    est = {}
    for delta in (1e-3, 5e-4):
        cfg = SimConfig(delta=delta, steps=int(round(4000 / delta)), seed=8, replications=8, reference_only=True,
                        stride=1000)
        est[delta] = aggregate([estimate_pow_limit(t) for t in run_replications(TABLE1, LimitState(), cfg)])
    ci = max(r.ci_halfwidth for r in est.values())
    assert abs(est[1e-3].estimate - est[5e-4].estimate) < ci


@pytest.mark.slow
def test_burn_in_sensitivity_within_ci():
    for p, regime, fn in ((TABLE1, "hw", estimate_pow_limit), (TABLE2, "nds", estimate_sd)):
        delta = 1e-3 if regime == "hw" else 1e-4
        res = []
        for burn in (0.2, 0.4):
            cfg = SimConfig(delta=delta, steps=5_000_000, burn_in=burn, seed=9, replications=4, regime=regime,
                            stride=1000)
            res.append(aggregate([fn(t) for t in run_replications(p, LimitState(), cfg, reference=True)]))
        assert abs(res[0].estimate - res[1].estimate) < res[0].ci_halfwidth


def test_time_average_of_v_matches_left_rule_on_full_grid():
    tr = simulate(TABLE1, LimitState(), SimConfig(delta=1e-3, steps=50_000, seed=1))
    assert time_average(tr, "v") == pytest.approx(tr.summary.v_mean, rel=1e-9)
    assert math.isfinite(tr.summary.x_mean)
