import numpy as np
import pytest

from delaypd import (BlockDims, BlockLinearMap, ProblemSpec, Quadratic, QuadraticSmooth,
                     SmoothOracle, compute_constants, reference_solution)
from delaypd.experiments import random_quadratic_problem


def scalar_problem():
    """g = h = 1/2 (.)^2, L = 1, f = 0."""
    dims = BlockDims([1], [1])
    return ProblemSpec(dims, SmoothOracle.zero(dims), [Quadratic([1.0])], [Quadratic([1.0])],
                       BlockLinearMap.from_dense(dims, np.eye(1)))


def bisect(fun, lo, hi, tol=1e-15, max_iter=400):
    """Root of an increasing scalar function on [lo, hi]."""
    flo = fun(lo)
    assert flo <= 0 <= fun(hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if fun(mid) <= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def raw_instance(seed, coupling):
    """Quadratic instance as plain arrays plus the equivalent ProblemSpec.

    g_i = mu_i/2 ||x_i||^2 + q_i'x_i, h_i = 1/(2 nu_i) ||y - d_i||^2 and
    f = 1/2 x'Hx - c'x.
    """
    rng = np.random.default_rng(seed)
    m, ni, ri = 3, 2, 2
    dims = BlockDims([ni] * m, [ri] * m)
    n, r = dims.n, dims.r
    if coupling == "partial":
        Ld = np.zeros((r, n))
        for i in range(m):
            Ld[i * ri:(i + 1) * ri, i * ni:(i + 1) * ni] = rng.standard_normal((ri, ni))
    else:
        Ld = rng.standard_normal((r, n))
    A = rng.standard_normal((n, n)) * 0.3
    H = A @ A.T
    c = rng.standard_normal(n)
    mu = rng.uniform(0.5, 2, m)
    nu = rng.uniform(0.5, 2, m)
    q = rng.standard_normal(n)
    d = rng.standard_normal(r)
    g = [Quadratic(np.full(ni, mu[i]), q[i * ni:(i + 1) * ni]) for i in range(m)]
    h = [Quadratic(np.full(ri, 1 / nu[i]), -d[i * ri:(i + 1) * ri] / nu[i]) for i in range(m)]
    spec = ProblemSpec(dims, QuadraticSmooth(dims, H, c), g, h, BlockLinearMap.from_dense(dims, Ld))
    raw = dict(L=Ld, H=H, c=c, mu=np.repeat(mu, ni), nu=np.repeat(nu, ri), q=q, d=d,
               ni=ni, ri=ri)
    return spec, raw


def straight_line(raw, gamma, sigma, iters, variant):
    """Synchronous iterations on the arrays of ``raw_instance`` with closed-form proxes.

    ``variant='vc'`` feeds ``2 x^{k+1} - x^k`` to the dual step, ``'ahu'`` feeds ``x^k``.
    """
    G = np.repeat(gamma, raw["ni"])
    S = np.repeat(sigma, raw["ri"])
    L, H, c = raw["L"], raw["H"], raw["c"]
    x, u = np.zeros(L.shape[1]), np.zeros(L.shape[0])
    out = []
    for _ in range(iters):
        v = x - G * (H @ x - c + L.T @ u)
        xn = (v - G * raw["q"]) / (1 + G * raw["mu"])
        w = u + S * (L @ (2 * xn - x) if variant == "vc" else L @ x)
        # h*(u) = nu/2 ||u||^2 + d'u in closed form
        u = (w - S * raw["d"]) / (1 + S * raw["nu"])
        x = xn
        out.append((x.copy(), u.copy()))
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def total_suite():
    pr = random_quadratic_problem(4, 3, 2, "total", 1.0, 1.0, seed=1)
    return pr, compute_constants(pr), reference_solution(pr)


@pytest.fixture(scope="session")
def partial_suite():
    pr = random_quadratic_problem(4, 3, 2, "partial", 1.0, 1.0, seed=2)
    return pr, compute_constants(pr), reference_solution(pr)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
