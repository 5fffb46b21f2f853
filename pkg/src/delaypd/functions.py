"""
Proximal and gradient oracles.

Every nonsmooth term is a small class exposing ``prox(rho, v)`` together with
its strong-convexity modulus ``mu``. Terms that are also used as ``h_i``
carry ``conj_mu``, the modulus of the conjugate (the reciprocal of the
Lipschitz constant of the gradient, zero for nonsmooth terms).
"""

import numpy as np
from scipy.special import expit

from .block_core import operator_norm
from .errors import ConfigurationError, NumericalError, StructuralError

__all__ = [
    "ProxOracle", "Zero", "Quadratic", "ElasticNet", "Box", "Point",
    "LogisticLoss", "SquaredLoss", "Separable", "ConjugateProxOracle",
    "SmoothOracle", "QuadraticSmooth",
    "moreau_conjugate_prox", "prox_separable_quadratic", "project_box",
    "project_point", "prox_logistic_loss", "prox_squared_loss",
    "prox_elastic_net", "quadratic_coupling_smooth",
]


def _check_rho(rho):
    if not rho > 0:
        raise ConfigurationError(f"prox parameter must be positive, got {rho}")


# -- standalone prox maps ----------------------------------------------------

def moreau_conjugate_prox(h, sigma, v):
    """``prox_{sigma h*}(v)`` through the Moreau identity.

    Only the prox of ``h`` itself is evaluated:
    ``v - sigma * prox_{h/sigma}(v / sigma)``.
    """
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    v = np.asarray(v, dtype=float)
    return v - sigma * h.prox(1.0 / sigma, v / sigma)


def prox_separable_quadratic(Q, rho, v):
    """``(I + rho Q)^{-1} v`` for a PSD ``Q`` given as a diagonal or a matrix."""
    _check_rho(rho)
    Q = np.asarray(Q, dtype=float)
    v = np.asarray(v, dtype=float)
    if Q.ndim <= 1:
        return v / (1.0 + rho * Q)
    if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise ConfigurationError("quadratic prox needs a symmetric matrix")
    return np.linalg.solve(np.eye(Q.shape[0]) + rho * Q, v)


def project_box(lo, hi, v):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ConfigurationError("box with lo > hi")
    return np.clip(v, lo, hi)


def project_point(b, v):
    return np.array(b, dtype=float) + 0.0 * np.asarray(v, dtype=float)


def prox_squared_loss(d, rho, v):
    """Prox of ``1/2 ||. - d||^2``."""
    _check_rho(rho)
    return (np.asarray(v, dtype=float) + rho * np.asarray(d, dtype=float)) / (1.0 + rho)


def prox_elastic_net(lambda1, lambda2, rho, v):
    """Prox of ``lambda1 ||.||_1 + lambda2 ||.||^2``: soft-threshold, then shrink."""
    _check_rho(rho)
    v = np.asarray(v, dtype=float)
    soft = np.sign(v) * np.maximum(np.abs(v) - rho * lambda1, 0.0)
    return soft / (1.0 + 2.0 * rho * lambda2)


def prox_logistic_loss(y, rho, v, tol=1e-12, max_iter=100):
    """Prox of ``sum_j log(1 + exp(-y_j w_j))``, coordinatewise.

    Solves ``w - rho * y / (1 + exp(y w)) = v`` with Newton steps kept inside
    the bracket ``[v - rho, v + rho]``; a step leaving the bracket, or one
    taken after the residual failed to halve, is replaced by bisection. The residual tolerance is relative to
    ``1 + |w| + |v|``, the rounding floor of the residual itself.
    """
    _check_rho(rho)
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(y) != 1):
        raise ConfigurationError("logistic labels must be +1 or -1")
    lo, hi = v - rho, v + rho
    w = v.copy()
    last = np.full(v.shape, np.inf)
    for _ in range(max_iter + 1):
        s = expit(-y * w)
        res = w - rho * y * s - v
        done = np.abs(res) <= tol * (1.0 + np.abs(w) + np.abs(v))
        if np.all(done):
            return w
        # res is increasing in w
        hi = np.where(res > 0, w, hi)
        lo = np.where(res < 0, w, lo)
        step = w - res / (1.0 + rho * s * (1.0 - s))
        newton = (step > lo) & (step < hi) & (np.abs(res) <= 0.5 * last)
        last = np.abs(res)
        w = np.where(done, w, np.where(newton, step, 0.5 * (lo + hi)))
    raise NumericalError("logistic prox did not converge")


# -- oracle classes ------------------------------------------------------------

class ProxOracle:
    """Base class: a proper closed convex function with an easy prox."""

    mu = 0.0
    conj_mu = 0.0

    def prox(self, rho, v):
        raise NotImplementedError

    def value(self, v):
        raise NotImplementedError

    def quadratic_form(self):
        """``(Q, q)`` if the function is ``1/2 v'Qv + q'v``, else ``None``."""
        return None

    def point(self):
        """``b`` if the function is the indicator of ``{b}``, else ``None``."""
        return None


class Zero(ProxOracle):
    def __init__(self, size):
        self.size = int(size)

    def prox(self, rho, v):
        _check_rho(rho)
        return np.array(v, dtype=float)

    def value(self, v):
        return 0.0

    def quadratic_form(self):
        return np.zeros((self.size, self.size)), np.zeros(self.size)


class Quadratic(ProxOracle):
    """``1/2 v'Qv + q'v`` with ``Q`` symmetric positive semidefinite.

    ``Q`` may be a vector (diagonal) or a square matrix.
    """

    def __init__(self, Q, q=None):
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 0:
            raise ConfigurationError("Q must be a vector or a matrix")
        if Q.ndim == 2:
            if Q.shape[0] != Q.shape[1]:
                raise ConfigurationError("Q must be square")
            scale = max(1.0, np.abs(Q).max()) if Q.size else 1.0
            if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * scale):
                raise ConfigurationError("Q must be symmetric")
            eig = np.linalg.eigvalsh(Q)
        else:
            eig = np.sort(Q)
        if eig.size and eig[0] < -1e-12 * max(1.0, abs(eig[-1])):
            raise ConfigurationError("Q must be positive semidefinite")
        self.Q = Q
        self.size = Q.shape[0]
        self.q = np.zeros(self.size) if q is None else np.asarray(q, dtype=float)
        if self.q.shape != (self.size,):
            raise StructuralError("linear term does not match Q")
        self.mu = float(max(eig[0], 0.0))
        self.lipschitz = float(eig[-1])
        self.conj_mu = 1.0 / self.lipschitz if self.lipschitz > 0 else 0.0
        if Q.ndim == 2:
            self._diag = np.diag(Q) if np.count_nonzero(Q - np.diag(np.diag(Q))) == 0 else None
        else:
            self._diag = Q
        self._cache = {}

    def prox(self, rho, v):
        # solvers call with one or two fixed parameters: keep the factors per rho
        hit = self._cache.get(rho)
        if hit is None:
            _check_rho(rho)
            if self._diag is not None:
                factor = 1.0 + rho * self._diag
            else:
                factor = np.linalg.inv(np.eye(self.size) + rho * self.Q)
            if len(self._cache) >= 8:
                self._cache.clear()
            hit = self._cache[rho] = (factor, rho * self.q)
        factor, rq = hit
        rhs = np.asarray(v, dtype=float) - rq
        if self._diag is not None:
            return rhs / factor
        return factor @ rhs

    def value(self, v):
        v = np.asarray(v, dtype=float)
        Qv = self.Q * v if self.Q.ndim == 1 else self.Q @ v
        return 0.5 * float(v @ Qv) + float(self.q @ v)

    def quadratic_form(self):
        Q = np.diag(self.Q) if self.Q.ndim == 1 else self.Q
        return Q, self.q


class ElasticNet(ProxOracle):
    """``lambda1 ||v||_1 + lambda2 ||v||^2``; strongly convex with ``2 lambda2``."""

    def __init__(self, lambda1, lambda2, size=None):
        if lambda1 < 0:
            raise ConfigurationError("lambda1 must be nonnegative")
        if not lambda2 > 0:
            raise ConfigurationError("elastic net needs lambda2 > 0 for strong convexity")
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.size = size
        self.mu = 2.0 * self.lambda2

    def prox(self, rho, v):
        return prox_elastic_net(self.lambda1, self.lambda2, rho, v)

    def value(self, v):
        v = np.asarray(v, dtype=float)
        return self.lambda1 * float(np.abs(v).sum()) + self.lambda2 * float(v @ v)

    def quadratic_form(self):
        if self.lambda1 != 0 or self.size is None:
            return None
        return 2.0 * self.lambda2 * np.eye(self.size), np.zeros(self.size)


class Box(ProxOracle):
    """Indicator of ``[lo, hi]``."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ConfigurationError("box with lo > hi")

    def prox(self, rho, v):
        _check_rho(rho)
        return np.clip(v, self.lo, self.hi)

    def value(self, v):
        v = np.asarray(v, dtype=float)
        return 0.0 if np.all((v >= self.lo) & (v <= self.hi)) else np.inf


class Point(ProxOracle):
    """Indicator of the single point ``b``."""

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))

    def prox(self, rho, v):
        _check_rho(rho)
        return self.b.copy()

    def value(self, v):
        return 0.0 if np.array_equal(np.asarray(v, dtype=float), self.b) else np.inf

    def point(self):
        return self.b


class LogisticLoss(ProxOracle):
    """``sum_j log(1 + exp(-y_j v_j))``.

    The gradient is coordinatewise 1/4-Lipschitz, hence ``conj_mu = 4``.
    """

    conj_mu = 4.0

    def __init__(self, labels):
        self.y = np.asarray(labels, dtype=float)
        if np.any(np.abs(self.y) != 1):
            raise ConfigurationError("logistic labels must be +1 or -1")

    def prox(self, rho, v):
        return prox_logistic_loss(self.y, rho, v)

    def value(self, v):
        return float(np.logaddexp(0.0, -self.y * np.asarray(v, dtype=float)).sum())


class SquaredLoss(ProxOracle):
    """``1/2 ||v - d||^2``."""

    conj_mu = 1.0

    def __init__(self, targets):
        self.d = np.asarray(targets, dtype=float)

    def prox(self, rho, v):
        return prox_squared_loss(self.d, rho, v)

    def value(self, v):
        e = np.asarray(v, dtype=float) - self.d
        return 0.5 * float(e @ e)

    def quadratic_form(self):
        return np.eye(self.d.size), -self.d


class Separable(ProxOracle):
    """Direct sum of oracles acting on consecutive slices of the argument."""

    def __init__(self, parts):
        self.parts = [(int(size), oracle) for size, oracle in parts]
        self.offsets = np.concatenate(([0], np.cumsum([s for s, _ in self.parts]))).astype(int)
        self.mu = min(o.mu for _, o in self.parts)
        self.conj_mu = min(o.conj_mu for _, o in self.parts)

    def _slices(self):
        for k, (_, oracle) in enumerate(self.parts):
            yield slice(self.offsets[k], self.offsets[k + 1]), oracle

    def prox(self, rho, v):
        v = np.asarray(v, dtype=float)
        out = np.empty_like(v)
        for sl, oracle in self._slices():
            out[sl] = oracle.prox(rho, v[sl])
        return out

    def value(self, v):
        v = np.asarray(v, dtype=float)
        return float(sum(oracle.value(v[sl]) for sl, oracle in self._slices()))


class ConjugateProxOracle:
    """Access to ``prox_{sigma h*}`` without forming ``h*``.

    ``mu`` is the strong-convexity modulus of ``h*``.
    """

    def __init__(self, h, mu=None):
        if isinstance(h, ConjugateProxOracle):
            h = h.h
        self.h = h
        self.mu = float(h.conj_mu if mu is None else mu)

    def prox(self, sigma, v):
        return moreau_conjugate_prox(self.h, sigma, v)


# -- smooth coupling term -------------------------------------------------------

class SmoothOracle:
    """A convex function with Lipschitz gradient, addressed block by block.

    Parameters
    ----------
    dims : BlockDims
    value : callable
        ``x -> f(x)`` on the flat primal vector.
    grad_block : callable
        ``(i, x) -> grad_i f(x)``.
    beta : float
        Lipschitz constant of the full gradient.
    beta_bar : array_like
        Block coupling constants; must be supplied by the user for
        non-quadratic ``f``.
    dependency : list of set, optional
        ``dependency[i]`` lists the blocks ``grad_i f`` reads (self included
        or not). Defaults to "every block" when ``beta_bar[i] > 0``.
    """

    def __init__(self, dims, value, grad_block, beta, beta_bar, dependency=None):
        self.dims = dims
        self._value = value
        self._grad_block = grad_block
        self.beta = float(beta)
        self.beta_bar = np.asarray(beta_bar, dtype=float)
        if self.beta_bar.shape != (dims.m,):
            raise StructuralError("beta_bar needs one entry per agent")
        if dependency is None:
            dependency = [set(range(dims.m)) - {i} if self.beta_bar[i] > 0 else set()
                          for i in range(dims.m)]
        self.dependency = [set(d) for d in dependency]

    def value(self, x):
        return self._value(x)

    def grad_block(self, i, x):
        return self._grad_block(i, x)

    def grad(self, x):
        return np.concatenate([self.grad_block(i, x) for i in range(self.dims.m)])

    @classmethod
    def zero(cls, dims):
        return QuadraticSmooth(dims, np.zeros((dims.n, dims.n)))


class QuadraticSmooth(SmoothOracle):
    """``f(x) = 1/2 x'Hx - c'x + const`` with exact constants.

    ``beta`` is the spectral norm of ``H``; ``beta_bar[i]`` that of the block
    row of ``H`` with its diagonal block removed.
    """

    def __init__(self, dims, H, c=None, const=0.0, norm_tol=1e-10):
        H = np.asarray(H, dtype=float)
        if H.shape != (dims.n, dims.n):
            raise StructuralError("Hessian does not match the primal dimension")
        self.H = H
        self.c = np.zeros(dims.n) if c is None else np.asarray(c, dtype=float)
        self.const = float(const)
        self._crow = [self.c[dims.primal_slice(i)] for i in range(dims.m)]
        beta_bar = np.zeros(dims.m)
        dependency = []
        # grad_i f only touches the columns of blocks it depends on
        self._cols, self._rows = [], []
        for i in range(dims.m):
            row = H[dims.primal_slice(i), :]
            off = row.copy()
            off[:, dims.primal_slice(i)] = 0.0
            beta_bar[i] = operator_norm(off, tol=norm_tol)
            deps = {j for j in range(dims.m)
                    if j != i and np.any(off[:, dims.primal_slice(j)] != 0)}
            dependency.append(deps)
            if len(deps) == dims.m - 1:
                self._cols.append(slice(None))
                self._rows.append(row)
            else:
                cols = np.flatnonzero(np.isin(dims.primal_owner, sorted(deps | {i})))
                self._cols.append(cols)
                self._rows.append(row[:, cols])
        super().__init__(dims, self._eval, self._grad, operator_norm(H, tol=norm_tol),
                         beta_bar, dependency)

    def _eval(self, x):
        return 0.5 * float(x @ (self.H @ x)) - float(self.c @ x) + self.const

    def _grad(self, i, x):
        return self._rows[i] @ x[self._cols[i]] - self._crow[i]

    def grad(self, x):
        return self.H @ x - self.c

    def quadratic_form(self):
        return self.H, -self.c


def quadratic_coupling_smooth(dims, pairs, C_hat):
    """Relative-position coupling ``sum lam/2 ||C(w_i - w_j) - d_ij||^2``.

    Parameters
    ----------
    dims : BlockDims
    pairs : iterable of (i, j, lam, d)
    C_hat : ndarray
        Common extraction matrix applied to every block (all ``n_i`` equal).
    """
    C_hat = np.atleast_2d(np.asarray(C_hat, dtype=float))
    H = np.zeros((dims.n, dims.n))
    c = np.zeros(dims.n)
    const = 0.0
    for i, j, lam, d in pairs:
        dims.check_agent(i)
        dims.check_agent(j)
        if C_hat.shape[1] != dims.primal_dims[i] or C_hat.shape[1] != dims.primal_dims[j]:
            raise StructuralError("C_hat does not match the block sizes of the pair")
        d = np.broadcast_to(np.asarray(d, dtype=float), (C_hat.shape[0],))
        Dm = np.zeros((C_hat.shape[0], dims.n))
        Dm[:, dims.primal_slice(i)] += C_hat
        Dm[:, dims.primal_slice(j)] -= C_hat
        H += lam * Dm.T @ Dm
        c += lam * Dm.T @ d
        const += 0.5 * lam * float(d @ d)
    return QuadraticSmooth(dims, H, c, const)

