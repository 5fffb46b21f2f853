"""Acceptance criteria, one test each.

Every test records a ``criterion N: PASS|FAIL`` line (printed in the
terminal summary) and then asserts, so a failing criterion fails honestly.
"""

import contextlib
import io
import time

import numpy as np

from delaypd import (NoDelay, ProblemConstants, SaddleMetricP, SolverConfig, compute_constants,
                     envelope_check, fejer_track, make_schedule, moreau_conjugate_prox, partial_gamma_bound, random_bounds,
                     rate_constants_deterministic, rate_constants_random, reference_solution,
                     run, run_dual_decomposition, staleness_bound, stepsizes_partial,
                     stepsizes_random, stepsizes_total, deterministic_c2, deterministic_c_max, random_rate_feasible,
                     total_bounds)
from delaypd.experiments import build_formation, random_quadratic_problem

import conftest
from conftest import raw_instance, straight_line
from test_functions import library

SCHEDULES = ("fixed", "uniform_random", "adversarial_max")


@contextlib.contextmanager
def criterion(number, title, time_limit=None):
    """Record one PASS/FAIL line; ``info`` collects the measured quantities."""
    info = {}
    t0 = time.perf_counter()
    status, err = "FAIL", None
    try:
        yield info
        status = "PASS"
    except AssertionError as exc:
        err = str(exc).splitlines()[0] if str(exc) else "assertion failed"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        if status == "PASS" and time_limit is not None and elapsed >= time_limit:
            status, err = "FAIL", f"runtime {elapsed:.1f} s >= {time_limit} s"
        details = ", ".join(f"{k} {v}" for k, v in info.items())
        line = f"criterion {number}: {status}  {title} ({details}; {elapsed:.1f} s)"
        if err:
            line += f" [{err}]"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
    assert time_limit is None or elapsed < time_limit, f"runtime {elapsed:.1f} s"


def suite(coupling):
    pr = random_quadratic_problem(4, 3, 2, coupling, 1.0, 1.0, seed=1 if coupling == "total" else 2)
    return pr, compute_constants(pr), reference_solution(pr)


def test_criterion_1_fixed_point_invariance():
    with criterion(1, "fixed-point invariance", time_limit=5.0) as info:
        partial, total = suite("partial"), suite("total")
        p = np.array([0.3, 0.7, 0.3, 0.7])
        worst, count = 0.0, 0
        cases = [(None, 0)] + [(kind, B) for kind in SCHEDULES for B in (1, 3, 5)]
        for alg in ("vu_condat_delayed", "ahu_delayed", "ahu_randomized"):
            pr, c, zs = partial if alg == "vu_condat_delayed" else total
            for kind, B in cases:
                sched = NoDelay() if kind is None else make_schedule(kind, B, seed=B)
                if alg == "vu_condat_delayed":
                    plan = stepsizes_partial(c, B=B)
                elif alg == "ahu_delayed":
                    plan = stepsizes_total(c, B=B)
                else:
                    plan = stepsizes_random(c, B, p)
                log = run(pr, SolverConfig(alg, plan, sched, 500, activation_probs=p if
                                           alg == "ahu_randomized" else None,
                                           seed=B, store_iterates=True), z0=zs)
                for x, u in log.iterates:
                    worst = max(worst, np.sqrt(np.sum((x - zs.x.data) ** 2)
                                               + np.sum((u - zs.u.data) ** 2)))
                count += 1
        info["runs"] = count
        info["max deviation"] = f"{worst:.2e}"
        assert worst <= 1e-10


def test_criterion_2_synchronous_equivalence():
    with criterion(2, "synchronous equivalence with straight-line iterations") as info:
        worst = 0.0
        for seed in range(5):
            for coupling, alg, variant in (("partial", "vu_condat_delayed", "vc"),
                                           ("total", "ahu_delayed", "ahu")):
                spec, raw = raw_instance(100 + seed, coupling)
                c = compute_constants(spec)
                plan = stepsizes_partial(c) if variant == "vc" else stepsizes_total(c)
                log = run(spec, SolverConfig(alg, plan, NoDelay(), 200, store_iterates=True))
                ref = straight_line(raw, plan.gamma, plan.sigma, 200, variant)
                for (x, u), (xr, ur) in zip(log.iterates[1:], ref):
                    worst = max(worst, np.max(np.abs(x - xr)), np.max(np.abs(u - ur)))
        info["max difference"] = f"{worst:.2e}"
        assert worst <= 1e-14


def test_criterion_3_theorem_3_envelope():
    with criterion(3, "deterministic linear-rate envelope", time_limit=10.0) as info:
        pr, c, zs = suite("total")
        worst = 0.0
        for B in (1, 3):
            cert, plan = rate_constants_deterministic(c, B)
            for kind in ("uniform_random", "adversarial_max"):
                log = run(pr, SolverConfig("ahu_delayed", plan, make_schedule(kind, B, seed=7),
                                           2000, z_star=zs, certificate=cert))
                rep = envelope_check(log, cert, tol=1e-8)
                worst = max(worst, float(rep.ratio.max()))
                assert rep.holds, f"B={B} {kind}: first violation at k={rep.first_violation}"
        info["max ratio"] = f"{worst:.6f}"


def test_criterion_4_theorem_5_envelope():
    with criterion(4, "randomized linear-rate envelope in expectation", time_limit=60.0) as info:
        from delaypd import run_ensemble
        pr, c, zs = suite("total")
        p = np.array([0.3, 0.7, 0.3, 0.7])
        checkpoints = [10, 50, 100, 250, 500]
        worst = 0.0
        for B in (1, 3):
            cert, plan = rate_constants_random(c, B, p)
            cfg = SolverConfig("ahu_randomized", plan, make_schedule("uniform_random", B, seed=0),
                               500, activation_probs=p, z_star=zs)
            logs = run_ensemble(pr, cfg, range(200))
            rep = envelope_check(logs, cert, checkpoints=checkpoints)
            ratios = rep.measured / rep.bound
            worst = max(worst, float(ratios.max()))
            info[f"B={B} ratios"] = "/".join(f"{r:.3f}" for r in ratios)
            assert np.all(ratios <= 1.05), f"B={B}: ratios {ratios}"
        info["max ratio"] = f"{worst:.3f}"


def test_criterion_5_theorem_1_behaviour():
    with criterion(5, "quasi-Fejer behaviour and convergence with delays") as info:
        pr, c, zs = suite("partial")
        for B in (1, 3, 5):
            plan = stepsizes_partial(c, B=B)
            P = SaddleMetricP(plan.gamma, plan.sigma, pr.L)
            assert P.is_positive_definite()
            # stop once the Euclidean distance guarantees a P-distance below 1e-6
            G = np.repeat(1 / plan.gamma, pr.dims.primal_dims)
            S = np.repeat(1 / plan.sigma, pr.dims.dual_dims)
            Ld = pr.L.dense
            Pm = np.block([[np.diag(G), -Ld.T], [-Ld, np.diag(S)]])
            eps = 1e-6 / np.sqrt(np.linalg.eigvalsh(Pm)[-1])
            log = run(pr, SolverConfig("vu_condat_delayed", plan,
                                       make_schedule("uniform_random", B, seed=B), 50_000,
                                       z_star=zs, stop=("dist_tol", eps)))
            d = log.distances("P")
            hit = np.flatnonzero(np.sqrt(np.maximum(d, 0)) <= 1e-6)
            assert hit.size, f"B={B}: P-distance {np.sqrt(d.min()):.2e} after 50000 iterations"
            stop = int(hit[0])
            rep = fejer_track(d[:stop + 1])
            tail = rep.tail(stop - stop // 4)
            info[f"B={B}"] = f"stop {stop}, excess {rep.total:.2e}, tail {tail:.1e}"
            assert np.isfinite(rep.total) and tail < 1e-8


def test_criterion_6_formation_replication():
    with criterion(6, "formation control ordering against dual decomposition",
                   time_limit=30.0) as info:
        pr = build_formation({"m": 5, "horizon": 3, "dt": 1.0})
        zs = reference_solution(pr, "synchronous_polish")
        plan = stepsizes_partial(compute_constants(pr), B=1)
        sched = make_schedule("uniform_random", 1, seed=0)
        a1 = run(pr, SolverConfig("vu_condat_delayed", plan, sched, 100_000, z_star=zs,
                                  stop=("dist_tol", 1e-6)))
        err1 = np.array(a1.primal_err)
        budget = a1.iterations
        info["Vu-Condat iterations"] = budget
        info["Vu-Condat final error"] = f"{err1[-1]:.2e}"
        assert err1[-1] <= 1e-6
        dd = run_dual_decomposition(pr, None, SolverConfig(
            "dual_decomposition", plan, make_schedule("uniform_random", 1, seed=0), budget,
            z_star=zs))
        best = float(np.min(dd.primal_err))
        info["baseline best error"] = f"{best:.2e}"
        assert best > 1e-4


def _constants(beta=0.0, bb=0.0, mu_g=1.0, mu_h=1.0, nd=1.0, R_s=None, C_s=None,
               coupling="total"):
    return ProblemConstants.from_values(
        beta=beta, beta_bar=np.array([bb]), mu_g=np.array([mu_g]), mu_h=np.array([mu_h]),
        norm_L_diag=np.array([nd]), R_s=R_s, C_s=C_s, coupling=coupling)


def test_criterion_7_stepsize_formulas():
    with criterion(7, "stepsize and rate formulas") as info:
        close = lambda a, b: abs(a - b) <= 1e-12
        checks = {
            "partial B=0": close(partial_gamma_bound(
                _constants(beta=1.0, coupling="partial"), [1.0], 0)[0], 0.5),
            "partial B=2": close(partial_gamma_bound(
                _constants(beta=1.0, bb=1.0, coupling="partial"), [1.0], 2)[0], 0.25),
            "total sigma": close(total_bounds(_constants(R_s=2.0, C_s=2.0), 0)[0][0], 0.5),
            "total gamma": close(total_bounds(_constants(R_s=2.0, C_s=2.0), 0)[1][0], 1.0),
            "random sigma": close(random_bounds(_constants(R_s=1.0, C_s=1.0), 2, [0.5])[0][0],
                                  1 / 6),
            "deterministic c2": close(deterministic_c2(_constants(R_s=1.0, C_s=1.0), 0), 0.5),
            "deterministic c_max": close(deterministic_c_max(_constants(R_s=1.0, C_s=1.0), 0), 0.5),
        }
        cc = _constants(beta=0.5, bb=0.3, R_s=1.2, C_s=0.8)
        cert, _ = rate_constants_random(cc, 2, [0.4])
        checks["random c bracket"] = (random_rate_feasible(cert.c, cc, 2, [0.4])
                                  and not random_rate_feasible(cert.c * (1 + 1e-6), cc, 2, [0.4]))
        failed = [k for k, ok in checks.items() if not ok]
        info["formula checks"] = f"{len(checks) - len(failed)}/{len(checks)}"

        rng = np.random.default_rng(0)
        violations = 0
        for _ in range(2000):
            beta, bb, R, C = rng.uniform(0.01, 10, 4)
            B = int(rng.integers(0, 10))
            p = rng.uniform(0.05, 0.95)
            base = _constants(beta, bb, R_s=R, C_s=C, coupling="partial")
            more_beta = _constants(2 * beta, bb, R_s=R, C_s=C, coupling="partial")
            more_bb = _constants(beta, 2 * bb, R_s=R, C_s=C, coupling="partial")
            for fn in (lambda k, b: partial_gamma_bound(k, [1.0], b)[0],
                       lambda k, b: total_bounds(k, b)[1][0],
                       lambda k, b: random_bounds(k, b, [p])[1][0],
                       lambda k, b: deterministic_c_max(k, b)):
                v = fn(base, B)
                violations += fn(base, B + 1) > v
                violations += fn(more_beta, B) > v
                violations += fn(more_bb, B + 1) > fn(base, B + 1)
            violations += total_bounds(base, B + 1)[0][0] > total_bounds(base, B)[0][0]
            sb, gb = random_bounds(base, B, [p])
            sb2, gb2 = random_bounds(base, B, [min(1.0, 1.5 * p)])
            violations += (sb2[0] > sb[0]) + (gb2[0] > gb[0])
        info["monotonicity violations"] = violations
        assert not failed, failed
        assert violations == 0


def test_criterion_8_function_library():
    with criterion(8, "function library certification") as info:
        rng = np.random.default_rng(8)
        moreau = 0.0
        for name, h in library(rng):
            for _ in range(200):
                v = 2 * rng.standard_normal(4)
                s = rng.uniform(0.05, 20)
                res = moreau_conjugate_prox(h, s, v) + s * h.prox(1 / s, v / s) - v
                moreau = max(moreau, np.linalg.norm(res) / (1 + np.linalg.norm(v)))
        info["Moreau residual"] = f"{moreau:.1e}"

        # prox characterization: q(r) - q(w) >= <v - w, r - w>/rho + mu/2 ||r - w||^2
        char_viol = 0
        for name, q in library(rng):
            for _ in range(1000):
                v = 3 * rng.standard_normal(4)
                rho = 10 ** rng.uniform(-2, 1)
                w = q.prox(rho, v)
                r = w + rng.standard_normal(4)
                if name == "box":
                    r = np.clip(r, -1, 1)
                elif name == "point":
                    r = q.b.copy()
                elif name == "separable":
                    r[:2] = 1.0
                    r[2:] = np.clip(r[2:], -1, 1)
                lhs = q.value(r) - q.value(w)
                rhs = (v - w) @ (r - w) / rho + 0.5 * q.mu * (r - w) @ (r - w)
                char_viol += lhs < rhs - 1e-9 * (1 + abs(lhs) + abs(rhs))
        info["characterization violations"] = char_viol

        fd_worst = 0.0
        for coupling in ("partial", "total"):
            pr = random_quadratic_problem(4, 3, 2, coupling, seed=3)
            f = pr.f
            for _ in range(20):
                x = rng.standard_normal(pr.dims.n)
                g = f.grad(x)
                fd = np.array([(f.value(x + e) - f.value(x - e)) / 2e-6
                               for e in 1e-6 * np.eye(pr.dims.n)])
                fd_worst = max(fd_worst, np.linalg.norm(fd - g) / max(1.0, np.linalg.norm(g)))
        info["gradient FD error"] = f"{fd_worst:.1e}"

        # staleness bound on solver trajectories: rebuild each agent's outdated copy
        pr, c, zs = suite("total")
        lemma = 0.0
        for t in range(100):
            B = 1 + t % 5
            kind = ("uniform_random", "adversarial_max", "fixed")[t % 3]
            sched = make_schedule(kind, B, seed=t)
            log = run(pr, SolverConfig("ahu_delayed", stepsizes_total(c, B=B), sched, 40,
                                       store_iterates=True))
            xs = [x for x, _ in log.iterates]
            owner = pr.dims.primal_owner
            for k in range(len(xs) - 1):
                ages = sched.ages(k, "primal", pr.m)
                for i in range(pr.m):
                    view = np.array([xs[max(k - ages[i, owner[q]], 0)][q]
                                     for q in range(pr.dims.n)])
                    lhs = np.linalg.norm(xs[k] - view)
                    rhs = staleness_bound(xs, k, B)
                    lemma = max(lemma, (lhs - rhs) / max(rhs, 1e-300))
        info["staleness relative violation"] = f"{max(lemma, 0.0):.1e}"
        assert moreau <= 1e-13
        assert char_viol == 0
        assert fd_worst <= 1e-6
        assert lemma <= 1e-10


def test_criterion_9_determinism(tmp_path):
    with criterion(9, "byte-identical reruns") as info:
        partial, total = suite("partial"), suite("total")
        p = np.array([0.3, 0.7, 0.3, 0.7])
        same = 0
        for alg, (pr, c, zs) in (("vu_condat_delayed", partial), ("ahu_delayed", total),
                                 ("ahu_randomized", total)):
            texts = []
            for _ in range(2):
                plan = (stepsizes_partial(c, B=2) if alg == "vu_condat_delayed"
                        else stepsizes_total(c, B=2))
                log = run(pr, SolverConfig(alg, plan, make_schedule("uniform_random", 2, seed=5),
                                           300, activation_probs=p if alg == "ahu_randomized"
                                           else None, seed=11, z_star=zs, kkt_every=7))
                buf = io.StringIO()
                log.to_csv(buf)
                texts.append(buf.getvalue().encode())
            same += texts[0] == texts[1]
        pr = build_formation({"m": 5})
        plan = stepsizes_partial(compute_constants(pr), B=1)
        texts = []
        for _ in range(2):
            log = run_dual_decomposition(pr, None, SolverConfig(
                "dual_decomposition", plan, make_schedule("uniform_random", 1, seed=3), 50))
            buf = io.StringIO()
            log.to_csv(buf)
            texts.append(buf.getvalue().encode())
        same += texts[0] == texts[1]
        info["identical pairs"] = f"{same}/4"
        assert same == 4
