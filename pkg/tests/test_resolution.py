import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinofab.behaviors import ATTRACTOR, LIMIT_LOWER, LIMIT_UPPER, REPELLER, BehaviorSpec, BehaviorTree, World
from kinofab.fabrics import STRICT, FabricEval
from kinofab.model import GeneralizedState, gravity_vector, inverse_dynamics
from kinofab.resolution import (
    ControlOptions, ResolutionError, control_step, evaluate_fabrics, moore_penrose_pinv, resolve,
)
from kinofab.scenarios import benchmark_scenario
from kinofab.sim import Obstacle


def fe(M, pi, J, Jd=None):
    J = np.atleast_2d(np.asarray(J, float))
    return FabricEval(M=np.atleast_2d(np.asarray(M, float)), pi=np.atleast_1d(np.asarray(pi, float)),
                      J_star=J, J_star_dot=np.zeros_like(J) if Jd is None else np.asarray(Jd, float))


def random_psd(rng, n):
    """Random-basis PSD matrix with spectrum in [1e-2, 1e2] plus exact zeros."""
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = 10.0 ** rng.uniform(-2, 2, n)
    lam[rng.random(n) < 0.3] = 0.0
    return (Q * lam) @ Q.T


def penrose_residuals(A, P):
    return (np.abs(A @ P @ A - A).max(), np.abs(P @ A @ P - P).max(),
            np.abs(A @ P - (A @ P).T).max(), np.abs(P @ A - (P @ A).T).max())


class TestPinv:
    def test_identity(self):
        np.testing.assert_array_equal(moore_penrose_pinv(np.eye(3)), np.eye(3))

    def test_zero(self):
        np.testing.assert_array_equal(moore_penrose_pinv(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_rank_deficient_diag(self):
        np.testing.assert_allclose(moore_penrose_pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]), atol=1e-15)

    def test_matches_numpy(self, rng):
        B = rng.normal(size=(5, 3))
        A = B @ B.T
        np.testing.assert_allclose(moore_penrose_pinv(A), np.linalg.pinv(A, hermitian=True), atol=1e-10)

    def test_nonfinite(self):
        with pytest.raises(ResolutionError):
            moore_penrose_pinv(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    def test_penrose_conditions(self, seed, n):
        rng = np.random.default_rng(seed)
        A = random_psd(rng, n)
        assert max(penrose_residuals(A, moore_penrose_pinv(A))) < 1e-8


class TestResolve:
    def test_identity_pullback(self):
        pi = np.array([0.3, -2.0])
        np.testing.assert_allclose(resolve([fe(np.eye(2), pi, np.eye(2))], np.ones(2)).ddq, pi)

    def test_cancellation(self):
        pi = np.array([1.0, 2.0])
        r = resolve([fe(np.eye(2), pi, np.eye(2)), fe(np.eye(2), -pi, np.eye(2))], np.zeros(2))
        np.testing.assert_allclose(r.ddq, 0, atol=1e-15)

    def test_partial_task(self):
        r = resolve([fe([[2.0]], [4.0], [[1.0, 0.0]])], np.array([0.7, -3.1]))
        np.testing.assert_allclose(r.ddq, [4.0, 0.0], atol=1e-14)
        assert r.metric_rank == 1
        # dense evaluation of the same sum
        A = np.array([[1.0], [0.0]]) @ [[2.0]] @ [[1.0, 0.0]]
        f = np.array([[1.0], [0.0]]) @ [[2.0]] @ [4.0]
        np.testing.assert_allclose(r.ddq, np.linalg.pinv(A) @ f, atol=1e-14)

    def test_jdot_term(self):
        Jd = np.array([[1.0, 0.0]])
        r = resolve([fe([[1.0]], [0.0], [[1.0, 0.0]], Jd)], np.array([2.0, 5.0]))
        np.testing.assert_allclose(r.ddq, [-2.0, 0.0], atol=1e-14)

    def test_zero_metric_skipped(self):
        base = fe(np.eye(2), [1.0, 1.0], np.eye(2))
        off = fe([[0.0]], [1e6], [[1.0, 1.0]])
        a = resolve([base], np.zeros(2)).ddq
        b = resolve([base, off], np.zeros(2)).ddq
        assert np.array_equal(a, b)

    def test_errors(self):
        with pytest.raises(ResolutionError, match="empty"):
            resolve([], np.zeros(2))
        with pytest.raises(ResolutionError):
            resolve([fe([[1.0]], [np.nan], [[1.0, 0.0]])], np.zeros(2))
        with pytest.raises(ResolutionError, match="columns"):
            resolve([fe([[1.0]], [1.0], [[1.0, 0.0, 0.0]])], np.zeros(2))

    def test_weight_invariance(self, chain4, rng):
        for _ in range(20):
            q, dq = rng.normal(size=4), rng.normal(size=4)
            s = GeneralizedState(q, dq)
            ref = None
            for w in (1.0, 0.01, 7.5, 1e3):
                b = BehaviorSpec(name="a", kind=ATTRACTOR, attachment="ee", target=[0.3, 0.8], weight=w)
                evals, _, _ = evaluate_fabrics(chain4, s, [b])
                ddq = resolve(evals, dq).ddq
                if ref is None:
                    ref = ddq
                np.testing.assert_allclose(ddq, ref, rtol=1e-9, atol=1e-9)

    def test_deterministic(self, chain4, rng):
        specs = [BehaviorSpec(name="a", kind=ATTRACTOR, attachment="ee", target=[0.3, 0.8], priority=1),
                 BehaviorSpec(name="p", kind=ATTRACTOR, target=np.zeros(4)),
                 BehaviorSpec(name="u", kind=LIMIT_UPPER), BehaviorSpec(name="l", kind=LIMIT_LOWER)]
        s = GeneralizedState(rng.normal(size=4), rng.normal(size=4))
        a = resolve(evaluate_fabrics(chain4, s, specs)[0], s.dq).ddq
        b = resolve(evaluate_fabrics(chain4, s, specs)[0], s.dq).ddq
        assert a.tobytes() == b.tobytes()


class TestJdot:
    def test_pipeline_differences(self, chain4, rng):
        """Multi-level Jdot* against an independent difference of J*."""
        from kinofab.prioritization import PrioritizedStack, prioritized_jacobians
        from kinofab.behaviors import task_map
        from kinofab.model import mass_matrix
        specs = [BehaviorSpec(name="a", kind=ATTRACTOR, attachment="ee", target=[0.3, 0.8], priority=1),
                 BehaviorSpec(name="m", kind=ATTRACTOR, attachment="mid", target=[0.1, 0.4])]
        q, dq = rng.normal(size=4), rng.normal(size=4)
        evals, _, _ = evaluate_fabrics(chain4, GeneralizedState(q, dq), specs)

        def jstar(qq):
            return prioritized_jacobians(PrioritizedStack([1, 2]), [task_map(s, chain4, qq).J for s in specs],
                                         mass_matrix(chain4, qq))
        h = 1e-5
        ref = [(a - b) / (2 * h) for a, b in zip(jstar(q + h * dq), jstar(q - h * dq))]
        for ev, r in zip(evals, ref):
            np.testing.assert_allclose(ev.J_star_dot, r, atol=1e-5)


class TestControlStep:
    def test_equilibrium(self, chain4):
        q = np.array([0.1, -0.2, 0.3, 0.4])
        b = BehaviorSpec(name="post", kind=ATTRACTOR, target=q)
        res, tau = control_step(chain4, GeneralizedState(q, np.zeros(4)), [b], options=ControlOptions(STRICT))
        assert np.all(res.ddq == 0)
        np.testing.assert_allclose(tau, gravity_vector(chain4, q), atol=1e-12)
        assert res.wall_us > 0

    def test_gated_equilibrium(self, chain4):
        q = np.array([0.1, -0.2, 0.3, 0.4])
        b = BehaviorSpec(name="post", kind=ATTRACTOR, target=q)
        res, _ = control_step(chain4, GeneralizedState(q, np.zeros(4)), [b])
        assert np.all(res.ddq == 0)

    def test_zero_metric_repeller_removal(self, chain4, rng):
        q = rng.normal(size=4)
        post = BehaviorSpec(name="post", kind=ATTRACTOR, target=np.zeros(4))
        # obstacle receding from the tip: s = 0, metric exactly zero
        from kinofab.model import forward_kinematics
        ee = forward_kinematics(chain4, q, "ee")
        rep = BehaviorSpec(name="rep", kind=REPELLER, attachment="ee", target=ee + [0.3, 0.0],
                           target_velocity=[2.0, 0.0])
        s = GeneralizedState(q, np.zeros(4))
        a, _ = control_step(chain4, s, [post, rep])
        b, _ = control_step(chain4, s, [post])
        assert a.diagnostics[1]["metric_norm"] == 0.0
        assert np.abs(a.ddq - b.ddq).max() < 1e-12

    def test_no_active(self, chain4):
        b = BehaviorSpec(name="post", kind=ATTRACTOR, active=False)
        q = np.zeros(4)
        res, tau = control_step(chain4, GeneralizedState(q, np.zeros(4)), [b])
        assert np.all(res.ddq == 0) and res.diagnostics == []
        np.testing.assert_allclose(tau, gravity_vector(chain4, q))

    def test_full_set_smoke(self):
        sc = benchmark_scenario("PO+EA+BL+RE")
        tree = BehaviorTree(sc.behaviors, sc.nodes)
        world = World(obstacles=[Obstacle(position=[0.4, 0.9], velocity=[-1.0, 0.0])])
        s = GeneralizedState(sc.q0, np.full(7, 0.1))
        res, tau = control_step(sc.model, s, tree, world, 0.0)
        assert res.ddq.shape == (7,) and np.all(np.isfinite(res.ddq)) and np.all(np.isfinite(tau))
        assert {d["name"] for d in res.diagnostics} >= {"posture", "reach", "repel_ee"}
        np.testing.assert_allclose(tau, inverse_dynamics(sc.model, s.q, s.dq, res.ddq))
        for d in res.diagnostics:
            assert d["x"].shape == d["dx"].shape == d["pi"].shape
        assert res.wall_us > 0
