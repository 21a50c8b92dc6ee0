import csv
import json

import numpy as np
import pytest

from kinofab.behaviors import ATTRACTOR, BehaviorSpec
from kinofab.model import ChainModel, GeneralizedState
from kinofab.scenarios import attractor_scenario, limit_stress_scenario, reactivity_scenario
from kinofab.sim import DivergenceError, Obstacle, Scenario, benchmark, integrate_step, launch, obstacle_step, run_scenario


class TestIntegrate:
    def test_rest(self):
        s = integrate_step(GeneralizedState(np.array([0.3]), np.zeros(1)), np.zeros(1), 0.01)
        assert s.q[0] == 0.3 and s.dq[0] == 0.0

    def test_one_step(self):
        s = integrate_step(GeneralizedState(np.zeros(1), np.zeros(1)), np.ones(1), 0.1)
        assert s.dq[0] == pytest.approx(0.1) and s.q[0] == pytest.approx(0.01)

    def test_uniform_acceleration(self):
        a, dt, k = 2.0, 1e-3, 1000
        s = GeneralizedState(np.zeros(1), np.array([0.5]))
        for _ in range(k):
            s = integrate_step(s, np.array([a]), dt)
        T = k * dt
        assert s.dq[0] == pytest.approx(0.5 + a * T, abs=1e-12)
        # semi-implicit Euler overshoots by a*T*dt/2
        assert abs(s.q[0] - (0.5 * T + 0.5 * a * T**2)) < a * T * dt

    def test_errors(self):
        s = GeneralizedState(np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            integrate_step(s, np.zeros(1), 0.0)
        with pytest.raises(ValueError):
            integrate_step(s, np.array([np.inf]), 0.1)


class TestObstacle:
    def test_static(self):
        o = obstacle_step(Obstacle(position=[1.0, 2.0]), 0.1)
        np.testing.assert_array_equal(o.position, [1.0, 2.0])

    def test_constant_velocity(self):
        o = obstacle_step(Obstacle(position=[3.0, 0.0], velocity=[-1.0, 0.0]), 0.5)
        np.testing.assert_allclose(o.position, [2.5, 0.0])

    def test_parabola(self):
        o = Obstacle(position=[0.0, 0.0], velocity=[2.0, 3.0], gravity=True)
        dt = 1e-3
        for _ in range(500):
            o = obstacle_step(o, dt)
        t = 0.5
        np.testing.assert_allclose(o.position, [2 * t, 3 * t - 0.5 * 9.81 * t**2], atol=1e-9)

    def test_waits_for_launch(self, unit2):
        o = Obstacle(position=[3.0, 0.0], launch_speed=2.0, aim_point="ee", launch_time=0.5)
        assert not o.launched
        np.testing.assert_array_equal(obstacle_step(o, 0.1).position, [3.0, 0.0])
        o = launch(o, unit2, [0.0, 0.0])
        np.testing.assert_allclose(o.velocity, [-2.0, 0.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            Obstacle(position=[0, 0], radius=0.0)
        with pytest.raises(ValueError):
            Obstacle(position=[0, 0], launch_speed=1.0)


class TestRun:
    def test_from_goal(self):
        q = np.array([0.2, -0.1, 0.3])
        log = run_scenario(attractor_scenario(q, q, duration=0.2))
        assert log.summary["final_tracking_error"] == 0.0
        assert log.summary["max_limit_violation"] == 0.0
        assert log.summary["min_distance"] is None and log.summary["hit"] is None

    def test_record_count_and_time(self):
        sc = attractor_scenario([0.1, 0.0, 0.0], [0.0, 0.0, 0.0], duration=0.1005)
        log = run_scenario(sc)
        assert len(log) == sc.steps == 101
        assert np.all(np.diff(log.t) > 0)

    def test_deterministic(self):
        a = run_scenario(reactivity_scenario(4.0))
        b = run_scenario(reactivity_scenario(4.0))
        for name in ("t", "q", "dq", "ddq", "tau", "ee", "obs", "min_dist", "viol"):
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
        sa = {k: v for k, v in a.summary.items() if not k.startswith("iter")}
        sb = {k: v for k, v in b.summary.items() if not k.startswith("iter")}
        assert sa == sb

    def test_hit_without_repeller(self):
        s = run_scenario(reactivity_scenario(5.0, repeller=False)).summary
        assert s["hit"] and s["min_distance"] == 0.0

    def test_paired_dominance(self):
        on = run_scenario(reactivity_scenario(3.0, repeller=True)).summary["min_distance"]
        off = run_scenario(reactivity_scenario(3.0, repeller=False)).summary["min_distance"]
        assert on > off

    def test_limit_stress(self):
        s = run_scenario(limit_stress_scenario()).summary
        assert s["max_limit_violation"] <= 1e-3

    def test_divergence(self):
        m = ChainModel.uniform(2)
        b = BehaviorSpec(name="a", kind=ATTRACTOR, target=[0.0, 0.0], damping=0.0, gains={"lambda_e": 1e4})
        sc = Scenario(model=m, behaviors=[b], q0=[1.0, 1.0], duration=1.0, divergence_bound=5.0)
        with pytest.raises(DivergenceError) as exc:
            run_scenario(sc)
        assert exc.value.log is not None and "exceeds bound" in str(exc.value)

    def test_outputs(self, tmp_path):
        log = run_scenario(reactivity_scenario(6.0))
        log.write_csv(tmp_path / "log.csv")
        log.write_summary(tmp_path / "s.json")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "q0", "q1", "q2", "q3", "dq0", "dq1", "dq2", "dq3",
                           "ee_x", "ee_y", "obs_x", "obs_y", "min_dist", "iter_us", "viol"]
        assert len(rows) == len(log) + 1
        assert float(rows[5][0]) == log.t[4]
        summary = json.loads((tmp_path / "s.json").read_text())
        assert set(summary) >= {"iter_ms_mean", "iter_ms_std", "min_distance", "max_limit_violation",
                                "final_tracking_error"}

    def test_bad_scenarios(self, unit2):
        b = BehaviorSpec(name="a", kind=ATTRACTOR)
        with pytest.raises(ValueError):
            Scenario(model=unit2, behaviors=[b], q0=[0.0])
        with pytest.raises(ValueError):
            Scenario(model=unit2, behaviors=[b], q0=[0.0, 0.0], dt=0.0)
        with pytest.raises(KeyError):
            Scenario(model=unit2, behaviors=[b], q0=[0.0, 0.0], monitor_points=["nope"])


class TestBenchmark:
    def test_summary(self):
        r = benchmark(attractor_scenario([0.1, 0.0], [0.0, 0.0]), 100)
        assert r["iterations"] == 90
        assert 0 < r["median_ms"] <= r["p99_ms"]

    def test_trivial_regression_bound(self):
        r = benchmark(attractor_scenario([0.1, 0.0], [0.0, 0.0]), 500)
        # loose guard against order-of-magnitude regressions; typical is ~0.15 ms
        assert r["median_ms"] < 1.0

    def test_minimum_iterations(self):
        with pytest.raises(ValueError):
            benchmark(attractor_scenario([0.1], [0.0]), 99)
