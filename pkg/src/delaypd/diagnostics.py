"""
Certificates for computed points and checks of the convergence theory.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .block_core import PrimalDualPoint, SaddleMetricP
from .errors import ConfigurationError, OracleError

__all__ = [
    "KktReport", "EnvelopeReport", "FejerReport",
    "kkt_residual", "reference_solution", "fejer_track", "envelope_check",
]


def _xu(z):
    if isinstance(z, PrimalDualPoint):
        return z.x.data, z.u.data
    x, u = z
    return np.asarray(x, dtype=float), np.asarray(u, dtype=float)


def _prox_g(problem, gamma, v):
    out = np.empty_like(v)
    for i in range(problem.m):
        sl = problem.dims.primal_slice(i)
        out[sl] = problem.g[i].prox(gamma[i], v[sl])
    return out


def _prox_hconj(problem, sigma, v):
    out = np.empty_like(v)
    for i in range(problem.m):
        sl = problem.dims.dual_slice(i)
        out[sl] = problem.h[i].prox(sigma[i], v[sl])
    return out


def _plain(v):
    if isinstance(v, np.ndarray):
        return [_plain(a) for a in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(a) for a in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


class _Serializable:
    """Reports render to JSON text (non-finite floats as strings)."""

    def as_dict(self):
        out = {k: _plain(v) for k, v in asdict(self).items()}
        out.update({k: _plain(getattr(self, k)) for k in self._derived})
        return out

    def to_text(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def _per_agent(value, m):
    return np.broadcast_to(np.asarray(value, dtype=float), (m,))


@dataclass
class KktReport(_Serializable):
    """Prox fixed-point residuals of the optimality system."""

    _derived = ("combined",)

    primal: float
    dual: float
    probe_gamma: float
    probe_sigma: float

    @property
    def combined(self):
        return float(np.hypot(self.primal, self.dual))


def kkt_residual(problem, z, probe_gamma=1.0, probe_sigma=1.0):
    """Residuals ``||x - prox_g(x - g(grad f(x) + L'u))||`` and
    ``||u - prox_{h*}(u + s Lx)||``; both vanish exactly at primal-dual
    solutions, whatever the (positive) probe stepsizes."""
    x, u = _xu(z)
    Ld = problem.L.dense
    m = problem.m
    gam = _per_agent(probe_gamma, m)
    sig = _per_agent(probe_sigma, m)
    gx = np.repeat(gam, problem.dims.primal_dims)
    su = np.repeat(sig, problem.dims.dual_dims)
    xp = _prox_g(problem, gam, x - gx * (problem.f.grad(x) + Ld.T @ u))
    up = _prox_hconj(problem, sig, u + su * (Ld @ x))
    return KktReport(float(np.linalg.norm(x - xp)), float(np.linalg.norm(u - up)),
                     probe_gamma, probe_sigma)


def _exact_quadratic(problem):
    dims = problem.dims
    n, r = dims.n, dims.r
    fq = getattr(problem.f, "quadratic_form", None)
    if fq is None:
        raise ConfigurationError("exact_quadratic needs a quadratic f")
    H, lin_f = fq()
    K = np.zeros((n + r, n + r))
    rhs = np.zeros(n + r)
    K[:n, :n] = H
    rhs[:n] = -lin_f
    for i in range(dims.m):
        form = problem.g[i].quadratic_form()
        if form is None:
            raise ConfigurationError(f"exact_quadratic needs a quadratic g_{i}")
        sl = dims.primal_slice(i)
        K[sl, sl] += form[0]
        rhs[sl] -= form[1]
    Ld = problem.L.dense
    K[:n, n:] = Ld.T
    for i in range(dims.m):
        rows = slice(n + dims.dual_offsets[i], n + dims.dual_offsets[i + 1])
        hi = problem.h[i].h
        b = hi.point()
        form = hi.quadratic_form()
        if b is not None:
            K[rows, :n] = problem.L.row(i)
            rhs[rows] = b
        elif form is not None:
            R, q = form
            K[rows, :n] = -R @ problem.L.row(i)
            K[rows, rows] = np.eye(dims.dual_dims[i])
            rhs[rows] = q
        else:
            raise ConfigurationError(
                f"exact_quadratic needs h_{i} quadratic or the indicator of a point")
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _polish(problem, tol, max_iter, z0=None, check_every=50):
    dims = problem.dims
    Ld = problem.L.dense
    normL = float(np.linalg.norm(Ld, 2)) if Ld.size else 0.0
    beta = float(problem.f.beta)
    sigma = 1.0 / normL if normL > 0 else 1.0
    den = sigma * normL ** 2 + beta
    gamma = 0.99 / den if den > 0 else 1.0
    gam = np.full(dims.m, gamma)
    sig = np.full(dims.m, sigma)
    if z0 is None:
        x, u = np.zeros(dims.n), np.zeros(dims.r)
    else:
        x, u = (a.copy() for a in _xu(z0))
    for it in range(max_iter):
        xn = _prox_g(problem, gam, x - gamma * (problem.f.grad(x) + Ld.T @ u))
        u = _prox_hconj(problem, sig, u + sigma * (Ld @ (2 * xn - x)))
        x = xn
        if (it + 1) % check_every == 0:
            if kkt_residual(problem, (x, u)).combined <= tol:
                return x, u
    raise OracleError(f"synchronous polish did not reach KKT residual {tol} "
                      f"within {max_iter} iterations")


def reference_solution(problem, mode="exact_quadratic", tol=1e-12, max_iter=10 ** 6, z0=None):
    """High-accuracy primal-dual solution used as ``z*`` by the theory checks.

    ``'exact_quadratic'`` solves the KKT linear system; ``'synchronous_polish'``
    runs the undelayed Vu-Condat iteration until the KKT residual is below
    ``tol``.
    """
    if mode == "exact_quadratic":
        x, u = _exact_quadratic(problem)
        res = kkt_residual(problem, (x, u)).combined
        if not res <= 1e-9 * max(1.0, np.linalg.norm(x), np.linalg.norm(u)):
            raise OracleError(f"KKT system solution has residual {res:.3e}")
    elif mode == "synchronous_polish":
        x, u = _polish(problem, tol, max_iter, z0)
    else:
        raise ConfigurationError(f"unknown oracle mode {mode!r}")
    return PrimalDualPoint.from_arrays(problem.dims, x, u)


@dataclass
class FejerReport(_Serializable):
    """Excess ``eps^k = [d^{k+1} - d^k]_+`` of a squared-distance sequence."""

    _derived = ("total",)

    distances: np.ndarray
    excess: np.ndarray

    @property
    def partial_sums(self):
        return np.concatenate(([0.0], np.cumsum(self.excess)))

    @property
    def total(self):
        return float(self.excess.sum())

    def tail(self, k):
        """Excess accumulated from iteration ``k`` on."""
        return float(self.excess[k:].sum())

    def tails(self, checkpoints):
        return {int(k): self.tail(k) for k in checkpoints}


def fejer_track(log, z_star=None, metric="P"):
    """Quasi-Fejér excess of a run.

    ``metric`` is either the name of a distance recorded in the log
    (``'P'``, ``'D'``, ``'M'``) or a metric object, in which case the
    distances are recomputed from the stored iterates and ``z_star``.
    A plain array of squared distances is accepted in place of a log.
    """
    if isinstance(log, np.ndarray) or isinstance(log, (list, tuple)):
        d = np.asarray(log, dtype=float)
    elif isinstance(metric, str):
        d = log.distances(metric)
    else:
        if z_star is None or not log.iterates:
            raise ConfigurationError("recomputing distances needs z_star and stored iterates")
        xs, us = _xu(z_star)
        if isinstance(metric, SaddleMetricP):
            d = np.array([metric.norm_sq_flat(x - xs, u - us) for x, u in log.iterates])
        else:
            w = metric.coordinate_weights()
            d = np.array([float(w @ np.concatenate((x - xs, u - us)) ** 2)
                          for x, u in log.iterates])
    return FejerReport(d, np.maximum(np.diff(d), 0.0))


@dataclass
class EnvelopeReport(_Serializable):
    """Measured squared distances against ``factor^k * d0`` at checkpoints ``k``."""

    _derived = ("holds", "first_violation")

    k: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    tol: float

    @property
    def holds(self):
        return bool(np.all(self.ratio <= 1.0 + self.tol))

    @property
    def first_violation(self):
        bad = np.flatnonzero(self.ratio > 1.0 + self.tol)
        return int(self.k[bad[0]]) if bad.size else None


def envelope_check(logs, certificate, tol=1e-8, checkpoints=None):
    """Compare measured squared distances with ``factor^k * d0``.

    With several logs (an ensemble for the randomized certificate) the
    distances are averaged over the logs first.
    """
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    try:
        d = np.mean([lg.distances(certificate.metric) for lg in logs], axis=0)
    except KeyError:
        raise ConfigurationError(
            f"logs carry no distances in the certificate's metric {certificate.metric!r}") from None
    ks = np.arange(d.size) if checkpoints is None else np.asarray(
        [k for k in checkpoints if k < d.size], dtype=int)
    measured = d[ks]
    bound = certificate.bound(ks, d[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, measured / bound, np.where(measured > 0, np.inf, 1.0))
    return EnvelopeReport(ks, measured, bound, ratio, tol)
