import numpy as np
import pytest

from delaypd import (BlockDims, BlockLinearMap, Box, ConfigurationError, Point, ProblemConstants,
                     ProblemSpec, Quadratic, SmoothOracle, StructuralError,
                     Zero, classify_coupling, compute_constants, derive_coupling_sets,
                     quadratic_coupling_smooth)
from delaypd.experiments import build_formation, build_logistic


def simple(m=2, L=None, f=None, h=None, g=None):
    dims = BlockDims([1] * m, [1] * m)
    L = BlockLinearMap.from_dense(dims, np.eye(m) if L is None else L)
    f = SmoothOracle.zero(dims) if f is None else f
    g = g or [Quadratic([1.0]) for _ in range(m)]
    h = h or [Quadratic([1.0]) for _ in range(m)]
    return ProblemSpec(dims, f, g, h, L)


class TestSpec:
    def test_requires_strong_convexity(self):
        with pytest.raises(ConfigurationError):
            simple(g=[Quadratic([1.0]), Zero(1)])

    def test_counts(self):
        with pytest.raises(StructuralError):
            simple(g=[Quadratic([1.0])])

    def test_objective(self):
        pr = simple()
        # f = 0, g = x^2/2, h(Lx) = x^2/2 per agent
        assert pr.objective(np.array([1.0, 2.0])) == pytest.approx(0.5 + 0.5 + 2 + 2)


class TestCoupling:
    def test_separable_diagonal(self):
        cs = derive_coupling_sets(simple(3))
        for sets in (cs.n_in, cs.n_out, cs.m_p, cs.m_d):
            assert all(len(s) == 0 for s in sets)

    def test_formation_direction(self):
        dims = BlockDims([1, 1], [1, 1])
        f = quadratic_coupling_smooth(dims, [(0, 1, 1.0, 0.0)], np.eye(1))
        pr = ProblemSpec(dims, f, [Quadratic([1.0])] * 2, [Quadratic([1.0])] * 2,
                         BlockLinearMap.from_dense(dims, np.eye(2)), f_dependency=[{1}, set()])
        cs = derive_coupling_sets(pr)
        assert cs.n_in[0] == {1} and 0 in cs.n_out[1] and cs.n_in[1] == set()

    def test_brute_force_scan(self, rng):
        for _ in range(20):
            m = 5
            pat = rng.random((m, m)) < 0.4
            np.fill_diagonal(pat, True)
            Ld = rng.standard_normal((m, m)) * pat
            pr = simple(m, L=Ld)
            cs = derive_coupling_sets(pr)
            for i in range(m):
                assert cs.m_p[i] == {j for j in range(m) if j != i and Ld[j, i] != 0}
                assert cs.m_d[i] == {j for j in range(m) if j != i and Ld[i, j] != 0}
                for j in cs.n_in[i]:
                    assert i in cs.n_out[j]

    def test_classify(self):
        assert classify_coupling(simple(2)) == "partial"
        assert classify_coupling(simple(2, L=np.array([[1.0, 0.5], [0.0, 1.0]]))) == "total"
        lg = build_logistic({"kind": "logistic", "m": 3, "samples": 10, "dim": 6,
                             "lam": 0.1, "seed": 7})
        assert classify_coupling(lg) == "total"

    def test_bad_dependency(self):
        with pytest.raises(StructuralError):
            derive_coupling_sets(simple(2), [{5}, set()])


class TestConstants:
    def test_unit(self):
        c = compute_constants(simple(2))
        assert c.beta == 0 and np.all(c.beta_bar == 0)
        assert c.R_s == pytest.approx(2, rel=1e-5) and c.C_s == pytest.approx(2, rel=1e-5)

    def test_beta_bar_weighted(self):
        dims = BlockDims([1, 1], [1, 1])
        f = quadratic_coupling_smooth(dims, [(0, 1, 1.0, 0.0)], np.eye(1))
        pr = ProblemSpec(dims, f, [Quadratic([2.0])] * 2, [Quadratic([1.0])] * 2,
                         BlockLinearMap.from_dense(dims, np.eye(2)))
        assert compute_constants(pr).beta_bar_weighted == pytest.approx(1.0, rel=1e-9)

    def test_indicator_sentinel(self):
        pr = simple(2, h=[Point([0.0]), Box([-1.0], [1.0])])
        c = compute_constants(pr)
        assert c.R_s == np.inf and c.nonsmooth_agents == [0, 1]

    def test_deterministic(self, total_suite):
        pr = total_suite[0]
        a, b = compute_constants(pr), compute_constants(pr)
        for field in ("beta", "R_s", "C_s"):
            assert getattr(a, field) == getattr(b, field)
        assert np.array_equal(a.norm_L_row, b.norm_L_row)

    def test_block_diagonal_norms(self, partial_suite):
        c = partial_suite[1]
        assert np.allclose(c.norm_L_row, c.norm_L_diag, rtol=0, atol=2e-10 * 10)
        assert np.allclose(c.norm_L_col, c.norm_L_diag, rtol=0, atol=2e-10 * 10)

    def test_norms_against_svd(self, total_suite):
        pr, c = total_suite[0], total_suite[1]
        for i in range(pr.m):
            s = np.linalg.svd(pr.L.row(i), compute_uv=False)[0]
            # inflated by a relative 1e-6 so that bounds built on them stay safe
            assert s <= c.norm_L_row[i] <= s * (1 + 2e-6)
        assert c.R_s == pytest.approx(np.sum(c.norm_L_row ** 2 / c.mu_h))

    def test_from_values(self):
        c = ProblemConstants.from_values(mu_g=[1, 1], mu_h=[2, 0], norm_L_row=[1, 1],
                                         norm_L_col=[1, 1])
        assert c.R_s == np.inf and c.C_s == 2.0

    def test_formation_dependency_sound(self, rng):
        pr = build_formation({"m": 5})
        f = pr.f
        for i in range(pr.m):
            x = rng.standard_normal(pr.dims.n)
            for j in range(pr.m):
                if j == i or j in pr.f_dependency[i]:
                    continue
                x2 = x.copy()
                x2[pr.dims.primal_slice(j)] += rng.standard_normal(pr.dims.primal_dims[j])
                assert np.max(np.abs(f.grad_block(i, x) - f.grad_block(i, x2))) <= 1e-12
