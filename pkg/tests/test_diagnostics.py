import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaypd import (ConfigurationError, NoDelay, OracleError, PrimalDualPoint, RateCertificate,
                     SaddleMetricP, SolverConfig, envelope_check, fejer_track, kkt_residual,
                     make_schedule, rate_constants_deterministic, reference_solution, run,
                     stepsizes_partial)
from delaypd.experiments import build_formation, random_quadratic_problem

from conftest import scalar_problem


class TestKkt:
    def test_at_oracle(self, total_suite, partial_suite):
        for pr, _, zs in (total_suite, partial_suite):
            assert kkt_residual(pr, zs).combined <= 1e-9

    def test_closed_form_unconstrained(self):
        # f = 1/2 x'Hx - c'x, g = mu/2 ||x||^2, h = 1/(2 nu) ||y - d||^2:
        # (H + mu I + L' L / nu) x = c + L' d / nu, u = (Lx - d) / nu
        pr = random_quadratic_problem(3, 2, 2, "total", 1.5, 0.5, seed=11)
        H, c = pr.f.quadratic_form()
        c = -c
        Ld = pr.L.dense
        d = np.concatenate([-h.h.quadratic_form()[1] / h.h.quadratic_form()[0][0, 0]
                            for h in pr.h])
        q = np.concatenate([g.quadratic_form()[1] for g in pr.g])
        nu = 0.5
        x = np.linalg.solve(H + 1.5 * np.eye(pr.dims.n) + Ld.T @ Ld / nu, c - q + Ld.T @ d / nu)
        u = (Ld @ x - d) / nu
        assert kkt_residual(pr, (x, u)).combined <= 1e-12

    def test_perturbation_continuity(self, total_suite, rng):
        pr, _, zs = total_suite
        for _ in range(20):
            dx = rng.standard_normal(pr.dims.n)
            du = rng.standard_normal(pr.dims.r)
            scale = 1e-4 / np.sqrt(dx @ dx + du @ du)
            res = kkt_residual(pr, (zs.x.data + scale * dx, zs.u.data + scale * du)).combined
            assert res <= 10 * 1e-4

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_probe_independence(self, g, s):
        pr = random_quadratic_problem(4, 3, 2, "total", 1.0, 1.0, seed=1)
        zs = reference_solution(pr)
        assert kkt_residual(pr, zs, g, s).combined <= 1e-9

    def test_detects_non_solution(self, total_suite):
        pr, _, zs = total_suite
        assert kkt_residual(pr, PrimalDualPoint.zeros(pr.dims)).combined > 1e-3

    def test_report_text(self, total_suite):
        pr, _, zs = total_suite
        rep = kkt_residual(pr, zs, 0.5, 2.0)
        back = json.loads(rep.to_text())
        assert back["probe_gamma"] == 0.5 and back["combined"] == rep.combined


class TestOracle:
    def test_scalar_by_hand(self):
        # min 1/2 x^2 + 1/2 x^2: x* = 0 and u* = grad h(L x*) = 0
        zs = reference_solution(scalar_problem())
        assert abs(zs.x.data[0]) <= 1e-12 and abs(zs.u.data[0]) <= 1e-12

    def test_scalar_shifted_by_hand(self):
        # g = 1/2 x^2 - x, h = 1/2 (y - 2)^2, L = 1: 2x - 1 - 2 = 0, x* = 3/2, u* = x* - 2
        from delaypd import BlockDims, BlockLinearMap, ProblemSpec, Quadratic, SmoothOracle
        dims = BlockDims([1], [1])
        pr = ProblemSpec(dims, SmoothOracle.zero(dims), [Quadratic([1.0], [-1.0])],
                         [Quadratic([1.0], [-2.0])], BlockLinearMap.from_dense(dims, np.eye(1)))
        for mode in ("exact_quadratic", "synchronous_polish"):
            zs = reference_solution(pr, mode)
            assert abs(zs.x.data[0] - 1.5) <= 1e-12 and abs(zs.u.data[0] + 0.5) <= 1e-12

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("coupling", ["partial", "total"])
    def test_cross_oracle(self, seed, coupling):
        pr = random_quadratic_problem(3, 2, 2, coupling, 1.0, 1.0, seed=seed)
        a = reference_solution(pr, "exact_quadratic")
        b = reference_solution(pr, "synchronous_polish")
        assert np.max(np.abs(a.stack() - b.stack())) <= 1e-9

    def test_formation_feasibility(self):
        pr = build_formation({"m": 5})
        zs = reference_solution(pr, "synchronous_polish")
        fm = pr.meta["formation"]
        for i in range(pr.m):
            w = zs.x.block(i)
            assert np.linalg.norm(fm["E"][i] @ w - fm["b"][i]) <= 1e-9
            assert np.all(w >= fm["lo"][i] - 1e-12) and np.all(w <= fm["hi"][i] + 1e-12)
        assert kkt_residual(pr, zs).combined <= 1e-9

    def test_polish_failure(self, partial_suite):
        with pytest.raises(OracleError):
            reference_solution(partial_suite[0], "synchronous_polish", max_iter=10)

    def test_exact_needs_quadratic(self):
        from delaypd.experiments import build_logistic
        with pytest.raises(ConfigurationError):
            reference_solution(build_logistic({"m": 2, "lam": 0.1}), "exact_quadratic")

    def test_unknown_mode(self, total_suite):
        with pytest.raises(ConfigurationError):
            reference_solution(total_suite[0], "magic")


class TestFejer:
    def test_synchronous_run_is_fejer(self, partial_suite):
        pr, c, zs = partial_suite
        plan = stepsizes_partial(c, B=0)
        log = run(pr, SolverConfig("vu_condat_delayed", plan, NoDelay(), 500, z_star=zs))
        rep = fejer_track(log, metric="P")
        assert np.all(rep.excess <= 1e-12 * rep.distances[0])
        assert rep.total <= 1e-10 * rep.distances[0]

    def test_delayed_tail(self, partial_suite):
        pr, c, zs = partial_suite
        plan = stepsizes_partial(c, B=3)
        log = run(pr, SolverConfig("vu_condat_delayed", plan, make_schedule("uniform_random", 3, seed=2),
                                   20_000, z_star=zs, stop=("dist_tol", 1e-9)))
        rep = fejer_track(log, metric="P")
        assert np.isfinite(rep.total)
        assert rep.tail(len(rep.excess) - len(rep.excess) // 4) < 1e-8

    def test_constant_trajectory(self):
        rep = fejer_track(np.full(10, 2.5))
        assert np.all(rep.excess == 0) and rep.total == 0

    def test_recomputed_from_iterates(self, partial_suite):
        pr, c, zs = partial_suite
        plan = stepsizes_partial(c, B=1)
        log = run(pr, SolverConfig("vu_condat_delayed", plan, make_schedule("fixed", 1), 50,
                                   z_star=zs, store_iterates=True))
        P = SaddleMetricP(plan.gamma, plan.sigma, pr.L)
        a = fejer_track(log, zs, P)
        b = fejer_track(log, metric="P")
        assert np.allclose(a.distances, b.distances, rtol=1e-12, atol=0)
        with pytest.raises(ConfigurationError):
            fejer_track(log, None, P)

    def test_partial_sums_and_tails(self):
        rep = fejer_track(np.array([1.0, 2.0, 1.5, 3.0, 0.0]))
        assert np.allclose(rep.excess, [1.0, 0.0, 1.5, 0.0])
        assert np.allclose(rep.partial_sums, [0, 1.0, 1.0, 2.5, 2.5])
        assert rep.tails([0, 2, 3]) == {0: 2.5, 2: 1.5, 3: 0.0}


class TestEnvelope:
    def _deterministic_run(self, suite, B, sched, iters=2000, c_scale=1.0):
        pr, c, zs = suite
        cert, plan = rate_constants_deterministic(c, B)
        log = run(pr, SolverConfig("ahu_delayed", plan, sched, iters, z_star=zs))
        if c_scale != 1.0:
            cc = cert.c * c_scale
            cert = RateCertificate(cc, 1 / (1 + cc), "D", B)
        return log, cert

    def test_k0_ratio_one(self, total_suite):
        log, cert = self._deterministic_run(total_suite, 1, make_schedule("fixed", 1), iters=5)
        rep = envelope_check(log, cert)
        assert rep.ratio[0] == 1.0

    @pytest.mark.parametrize("B", [1, 3])
    def test_deterministic_envelope_holds(self, total_suite, B):
        log, cert = self._deterministic_run(total_suite, B, make_schedule("adversarial_max", B))
        rep = envelope_check(log, cert, tol=1e-8)
        assert rep.holds and rep.first_violation is None and rep.k.size == 2001

    def test_doubled_c_detected(self, total_suite):
        # a much faster claimed rate must fail at some iteration
        log, cert = self._deterministic_run(total_suite, 1, make_schedule("fixed", 1), c_scale=2.0)
        rep = envelope_check(log, cert, tol=1e-8)
        assert not rep.holds and rep.first_violation is not None

    def test_metric_mismatch(self, partial_suite):
        pr, c, zs = partial_suite
        plan = stepsizes_partial(c, B=0)
        log = run(pr, SolverConfig("vu_condat_delayed", plan, NoDelay(), 5, z_star=zs))
        log.dist.pop("M", None)
        with pytest.raises(ConfigurationError):
            envelope_check(log, RateCertificate(0.1, 0.9, "M", 0))

    def test_checkpoints_and_ensemble(self, total_suite):
        logs = [self._deterministic_run(total_suite, 1, make_schedule("uniform_random", 1, seed=s), 100)[0]
                for s in range(3)]
        cert = self._deterministic_run(total_suite, 1, NoDelay(), 1)[1]
        rep = envelope_check(logs, cert, checkpoints=[0, 10, 50, 500])
        assert list(rep.k) == [0, 10, 50]
        mean = np.mean([lg.distances("D") for lg in logs], axis=0)
        assert np.allclose(rep.measured, mean[[0, 10, 50]], rtol=1e-15)
        text = json.loads(rep.to_text())
        assert text["holds"] is True and text["k"] == [0, 10, 50]
