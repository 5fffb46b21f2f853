"""
Iteration engines.

All three primal-dual methods run on an iteration-synchronous driver: at
iteration ``k`` every (active) agent reads history up to ``k`` through its
delayed view, the new blocks are written into ``z^{k+1}``, and ``z^{k+1}``
enters the history so that later views may see it.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .block_core import DiagonalBlockMetric, PrimalDualPoint, SaddleMetricP
from .delay_net import HistoryBuffer, NoDelay, check_ages, populated_blocks
from .diagnostics import kkt_residual
from .errors import ConfigurationError, DivergenceError, InapplicableError, ProtocolError
from .problem import derive_coupling_sets

__all__ = [
    "ALGORITHMS", "SolverConfig", "IterateLog", "step_vu_condat", "step_ahu",
    "run", "run_ensemble", "run_dual_decomposition", "default_dual_step", "CSV_COLUMNS",
]

ALGORITHMS = ("vu_condat_delayed", "ahu_delayed", "ahu_randomized", "dual_decomposition")
CSV_COLUMNS = ("k", "step_norm", "dist_P_sq", "dist_D_sq", "dist_M_sq", "kkt",
               "envelope_bound", "active_mask")


@dataclass
class SolverConfig:
    """Everything a run needs besides the problem.

    ``stop`` is ``None`` (iteration budget only), ``('kkt_tol', eps)`` or
    ``('dist_tol', eps)``; the latter measures ``||z^k - z_star||``.
    ``strict_views`` fills view blocks an agent never receives with NaN so
    that any read of them poisons the iterate. ``agent_order`` permutes the
    order in which agents are processed within an iteration (results do not
    depend on it).
    """

    algorithm: str
    plan: object
    schedule: object = field(default_factory=NoDelay)
    max_iters: int = 1000
    activation_probs: object = None
    seed: int = 0
    stop: tuple = None
    z_star: PrimalDualPoint = None
    certificate: object = None
    kkt_every: int = 0
    store_iterates: bool = False
    strict_views: bool = False
    agent_order: tuple = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm == "ahu_randomized":
            if self.activation_probs is None:
                raise ConfigurationError("the randomized algorithm needs activation probabilities")
        if self.activation_probs is not None:
            p = np.atleast_1d(np.asarray(self.activation_probs, dtype=float))
            if np.any(~(p > 0)) or np.any(p > 1):
                raise ConfigurationError("activation probabilities must lie in (0, 1]")
            self.activation_probs = p
        if self.agent_order is not None:
            self.agent_order = tuple(int(i) for i in self.agent_order)
        if self.stop is not None and self.stop != "iters_only":
            kind = self.stop[0]
            if kind not in ("kkt_tol", "dist_tol"):
                raise ConfigurationError(f"unknown stop rule {kind!r}")
            if kind == "dist_tol" and self.z_star is None:
                raise ConfigurationError("dist_tol stopping needs z_star")


class IterateLog:
    """Per-iteration record of a run (iteration 0 included)."""

    def __init__(self, algorithm, m):
        self.algorithm = algorithm
        self.m = m
        self.k = []
        self.step_norm = []
        self.dist = {}
        self.kkt = []
        self.envelope = []
        self.active = []
        self.activations = []
        self.primal_err = []
        self.iterates = []
        self.x = None
        self.u = None

    def __len__(self):
        return len(self.k)

    @property
    def iterations(self):
        return len(self.k) - 1

    def distances(self, metric):
        """Squared distances to ``z_star`` in ``metric`` as an array."""
        return np.asarray(self.dist[metric], dtype=float)

    @property
    def final(self):
        return self.x, self.u

    def rows(self):
        """CSV rows as lists of strings, columns as in ``CSV_COLUMNS``."""
        out = []
        for n, k in enumerate(self.k):
            mask = self.active[n]
            out.append([
                str(k),
                _fmt(self.step_norm[n]),
                _fmt(self.dist.get("P", [None] * len(self.k))[n]),
                _fmt(self.dist.get("D", [None] * len(self.k))[n]),
                _fmt(self.dist.get("M", [None] * len(self.k))[n]),
                _fmt(self.kkt[n]),
                _fmt(self.envelope[n]),
                "" if mask is None else "".join("1" if a else "0" for a in mask),
            ])
        return out

    def to_csv(self, fh):
        """Write the trace; ``fh`` is a path or a text stream."""
        if isinstance(fh, (str, os.PathLike)):
            with open(fh, "w", newline="") as f:
                return self.to_csv(f)
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in self.rows():
            fh.write(",".join(row) + "\n")


def _fmt(v):
    if v is None or not np.isfinite(v):
        return ""
    return repr(float(v))


class _Agent:
    """Precomputed per-agent data for the update kernels."""

    def __init__(self, problem, i, gamma, sigma, coupling):
        dims = problem.dims
        L = problem.L
        self.i = i
        self.sx = dims.primal_slice(i)
        self.su = dims.dual_slice(i)
        self.gamma = float(gamma)
        self.sigma = float(sigma)
        self.g = problem.g[i]
        self.h = problem.h[i]
        self.f = problem.f
        self.Lii = L.diag(i)
        self.LiiT = self.Lii.T
        # restrict the row/column products to the blocks actually present
        xneed = sorted({i} | coupling.m_d[i])
        uneed = sorted({i} | coupling.m_p[i])
        self.xcols = self._index(dims.primal_owner, xneed, dims.m)
        self.urows = self._index(dims.dual_owner, uneed, dims.m)
        self.Lrow = L.dense[self.su][:, self.xcols]
        self.LcolT = np.ascontiguousarray(L.dense[self.urows][:, self.sx].T)
        self.reads_x = frozenset({i} | coupling.n_in[i] | coupling.m_d[i])
        self.reads_u = frozenset(uneed)

    @staticmethod
    def _index(owner, need, m):
        if len(need) == m:
            return slice(None)
        return np.flatnonzero(np.isin(owner, need))

    def grad(self, xv):
        return self.f.grad_block(self.i, xv)

    def vu_condat(self, xi, ui, xv):
        gam, sig = self.gamma, self.sigma
        xn = self.g.prox(gam, xi - gam * (self.LiiT @ ui) - gam * self.grad(xv))
        un = self.h.prox(sig, ui + sig * (self.Lii @ (2.0 * xn - xi)))
        return xn, un

    def ahu(self, xi, ui, xv, uv):
        gam, sig = self.gamma, self.sigma
        xn = self.g.prox(gam, xi - gam * (self.LcolT @ uv[self.urows]) - gam * self.grad(xv))
        un = self.h.prox(sig, ui + sig * (self.Lrow @ xv[self.xcols]))
        return xn, un


def _check_view(agent, view):
    missing_x = agent.reads_x - view.populated
    missing_u = agent.reads_u - view.populated
    if missing_x or missing_u:
        raise ProtocolError(
            f"agent {agent.i} needs blocks {sorted(missing_x | missing_u)} absent from its view")


def step_vu_condat(problem, i, z, view, plan):
    """One delayed Vu-Condat update of agent ``i``.

    Only ``grad_i f`` uses the outdated primal view; ``x_i`` and ``u_i`` are
    the agent's own current blocks.

    Returns
    -------
    (ndarray, ndarray)
        ``x_i^{k+1}`` and ``u_i^{k+1}``.
    """
    if not problem.L.is_block_diagonal():
        raise InapplicableError("the Vu-Condat update with delays needs partial coupling")
    agent = _Agent(problem, i, plan.gamma[i], plan.sigma[i], derive_coupling_sets(problem))
    _check_view(agent, view)
    return agent.vu_condat(z.x.data[agent.sx], z.u.data[agent.su], view.x.data)


def step_ahu(problem, i, z, view, plan):
    """One delayed AHU-type update of agent ``i`` (primal and dual views may
    carry different ages)."""
    agent = _Agent(problem, i, plan.gamma[i], plan.sigma[i], derive_coupling_sets(problem))
    _check_view(agent, view)
    return agent.ahu(z.x.data[agent.sx], z.u.data[agent.su], view.x.data, view.u.data)


class _Recorder:
    """Computes and appends the log entries for one iterate."""

    def __init__(self, problem, config, log):
        self.problem = problem
        self.config = config
        self.log = log
        self.metrics = {}
        zs = config.z_star
        plan = config.plan
        dims = problem.dims
        if zs is not None:
            self.xs, self.us = zs.x.data, zs.u.data
            P = SaddleMetricP(plan.gamma, plan.sigma, problem.L)
            if P.is_positive_definite():
                self.metrics["P"] = P
            self.metrics["D"] = DiagonalBlockMetric.D(dims, plan.gamma, plan.sigma)
            if np.all(problem.mu_h > 0):
                self.metrics["M"] = DiagonalBlockMetric.M(dims, problem.mu_g, problem.mu_h)
            self.weights = {name: met.coordinate_weights() for name, met in self.metrics.items()
                            if name != "P"}
            for name in self.metrics:
                log.dist[name] = []
        self.cert = config.certificate
        if self.cert is not None and self.cert.metric not in self.metrics:
            raise ConfigurationError(
                f"certificate metric {self.cert.metric!r} unavailable for this run")
        self.count = 0

    def __call__(self, k, x, u, prev, active):
        log = self.log
        log.k.append(k)
        if prev is None:
            log.step_norm.append(None)
        else:
            dx, du = x - prev[0], u - prev[1]
            log.step_norm.append(float(np.sqrt(dx @ dx + du @ du)))
        if self.metrics:
            ex, eu = x - self.xs, u - self.us
            e = np.concatenate((ex, eu))
            e2 = e * e
            for name, met in self.metrics.items():
                if name == "P":
                    log.dist[name].append(met.norm_sq_flat(ex, eu))
                else:
                    log.dist[name].append(float(self.weights[name] @ e2))
            log.primal_err.append(float(np.sqrt(ex @ ex)))
        kkt = None
        every = self.config.kkt_every
        if every and k % every == 0:
            kkt = kkt_residual(self.problem, (x, u)).combined
        log.kkt.append(kkt)
        if self.cert is not None:
            d0 = log.dist[self.cert.metric][0]
            log.envelope.append(float(self.cert.factor ** k * d0))
        else:
            log.envelope.append(None)
        log.active.append(active)
        if k > 0:
            self.count += self.problem.m if active is None else int(np.count_nonzero(active))
        log.activations.append(self.count)
        if self.config.store_iterates:
            log.iterates.append((x.copy(), u.copy()))


def _stop_reached(config, problem, log, x, u):
    stop = config.stop
    if stop is None or stop == "iters_only":
        return False
    kind, tol = stop
    if kind == "kkt_tol":
        val = log.kkt[-1]
        if val is None:
            val = kkt_residual(problem, (x, u)).combined
        return val <= tol
    zs = config.z_star
    return np.sqrt(np.sum((x - zs.x.data) ** 2) + np.sum((u - zs.u.data) ** 2)) <= tol


def run(problem, config, z0=None):
    """Run one of the delayed primal-dual methods.

    Parameters
    ----------
    problem : ProblemSpec
    config : SolverConfig
    z0 : PrimalDualPoint, optional
        Initial iterate (zeros by default); it fills the whole history.

    Returns
    -------
    IterateLog
    """
    alg = config.algorithm
    if alg == "dual_decomposition":
        raise ConfigurationError("use run_dual_decomposition for the baseline")
    if alg == "vu_condat_delayed" and not problem.L.is_block_diagonal():
        raise InapplicableError(
            "vu_condat_delayed refuses total coupling: its updates only use L_ii")
    dims = problem.dims
    m = dims.m
    plan = config.plan
    if plan.gamma.shape != (m,):
        raise ConfigurationError("stepsize plan does not match the number of agents")
    coupling = derive_coupling_sets(problem)
    agents = [_Agent(problem, i, plan.gamma[i], plan.sigma[i], coupling) for i in range(m)]
    sched = config.schedule
    B = sched.B
    delayed = B > 0
    buf = HistoryBuffer(dims, B)
    fill = np.nan if config.strict_views else 0.0
    masks = None
    if delayed:
        masks = []
        for i in range(m):
            pop = sorted(populated_blocks(coupling, i))
            if len(pop) < m:
                masks.append((~np.isin(dims.primal_owner, pop), ~np.isin(dims.dual_owner, pop)))
            else:
                masks.append(None)

    if z0 is None:
        x, u = np.zeros(dims.n), np.zeros(dims.r)
    else:
        x, u = z0.x.data.astype(float).copy(), z0.u.data.astype(float).copy()
    buf.record(x, u)
    log = IterateLog(alg, m)
    rec = _Recorder(problem, config, log)
    randomized = alg == "ahu_randomized"
    p = None
    if randomized:
        p = np.broadcast_to(config.activation_probs, (m,))
        rng = np.random.default_rng(config.seed)
    rec(0, x, u, None, np.ones(m, dtype=bool) if randomized else None)

    everyone = list(range(m)) if config.agent_order is None else list(config.agent_order)
    if sorted(everyone) != list(range(m)):
        raise ConfigurationError("agent_order must be a permutation of the agents")
    # overflow is reported as divergence below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(config.max_iters):
            if delayed:
                ax = sched.ages(k, "primal", m)
                au = sched.ages(k, "dual", m)
                check_ages(ax, B, k, "primal")
                check_ages(au, B, k, "dual")
                Xv, Uv = buf.views(ax, au)
                for i, mk in enumerate(masks):
                    if mk is not None:
                        Xv[i, mk[0]] = fill
                        Uv[i, mk[1]] = fill
            if randomized:
                active = rng.random(m) < p
                idx = [i for i in everyone if active[i]]
            else:
                active = None
                idx = everyone
            xn = x.copy()
            un = u.copy()
            for i in idx:
                ag = agents[i]
                xv = Xv[i] if delayed else x
                if alg == "vu_condat_delayed":
                    xi, ui = ag.vu_condat(x[ag.sx], u[ag.su], xv)
                else:
                    xi, ui = ag.ahu(x[ag.sx], u[ag.su], xv, Uv[i] if delayed else u)
                xn[ag.sx] = xi
                un[ag.su] = ui
            # a single reduction catches NaN and Inf (and overflow, which is divergence too)
            if not np.isfinite(xn.sum() + un.sum()):
                if config.strict_views and delayed:
                    raise ProtocolError(
                        f"non-finite update at iteration {k}: an agent read a block outside "
                        "its coupling sets (or the iteration diverged)")
                raise DivergenceError(f"iterate became non-finite at iteration {k + 1}", k + 1)
            prev = (x, u)
            x, u = xn, un
            buf.record(x, u)
            rec(k + 1, x, u, prev, active)
            if _stop_reached(config, problem, log, x, u):
                break
    log.x, log.u = x, u
    return log


def _threads():
    try:
        return max(1, int(os.environ.get("DELAYPD_THREADS", "1")))
    except ValueError:
        raise ConfigurationError("DELAYPD_THREADS must be an integer") from None


def run_ensemble(problem, config, seeds, z0=None, threads=None):
    """Repeat a run over seeds (activation draws and delay schedule).

    The thread count defaults to the ``DELAYPD_THREADS`` environment variable.
    Results are returned in seed order and do not depend on the thread count.
    """
    from .delay_net import MonotoneSchedule, UniformRandomDelay

    def one(seed):
        sched = config.schedule
        base = sched.base if isinstance(sched, MonotoneSchedule) else sched
        if isinstance(base, UniformRandomDelay):
            base = UniformRandomDelay(base.B, seed)
            sched = MonotoneSchedule(base) if isinstance(sched, MonotoneSchedule) else base
        elif isinstance(sched, MonotoneSchedule):
            sched = MonotoneSchedule(base)
        return run(problem, replace(config, seed=seed, schedule=sched), z0)

    threads = _threads() if threads is None else threads
    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, seeds))


# -- dual decomposition baseline ------------------------------------------------------

def _box_qp(A, b, lo, hi, w0, tol=1e-10, max_sweeps=10_000):
    """``min 1/2 w'Aw + b'w`` over a box, by projected coordinate descent."""
    w = np.linalg.solve(A, -b)
    if np.all(w >= lo) and np.all(w <= hi):
        return w
    w = np.clip(w0, lo, hi)
    diag = np.diag(A)
    g = A @ w + b
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(w.size):
            new = min(max(w[j] - g[j] / diag[j], lo[j]), hi[j])
            step = new - w[j]
            if step != 0.0:
                g += step * A[:, j]
                w[j] = new
                delta = max(delta, abs(step))
        if delta <= tol:
            break
    return w


def _formation_locals(problem):
    form = problem.meta.get("formation")
    if form is None:
        raise ConfigurationError("dual decomposition is only available for formation problems")
    if not hasattr(problem.f, "H"):
        raise ConfigurationError("dual decomposition needs a quadratic coupling term")
    dims = problem.dims
    H = problem.f.H
    rho = float(problem.f.beta)
    local = []
    for i in range(dims.m):
        sl = dims.primal_slice(i)
        A = form["Q"][i] + H[sl, sl] + rho * np.eye(dims.primal_dims[i])
        off = H[sl, :].copy()
        off[:, sl] = 0.0
        local.append((sl, A, off, form["E"][i], form["b"][i], form["lo"][i], form["hi"][i]))
    return form, rho, local


def default_dual_step(problem):
    """``1 / max_i ||E_i||^2 / lambda_min(A_i)``: the reciprocal Lipschitz
    constant of the gradient of the local dual functions (``A_i`` is the
    Hessian of agent ``i``'s regularized subproblem)."""
    _, _, local = _formation_locals(problem)
    Ld = max(np.linalg.norm(E, 2) ** 2 / np.linalg.eigvalsh(A)[0]
             for _, A, _, E, _, _, _ in local)
    return 1.0 / Ld


def run_dual_decomposition(problem, alpha, config, z0=None):
    """Dual subgradient baseline for the formation problem.

    Each agent minimizes its local cost, the coupling term with neighbours'
    (delayed) positions frozen, a proximal term ``rho/2 ||w_i - w_i^k||^2``
    (``rho = beta``) and the Lagrangian term of its dynamics constraint over
    its box; the multipliers of ``E_i w_i = b_i`` then take a subgradient
    step of length ``alpha / sqrt(k + 1)``; ``alpha=None`` uses
    :func:`default_dual_step`.

    ``z0`` is an initial ``w`` or a pair ``(w, y)``. The returned log stores
    ``w`` as ``x`` and the multipliers as ``u``;
    ``primal_err`` holds ``||w^k - w*||`` when ``config.z_star`` is given.
    """
    form, rho, local = _formation_locals(problem)
    if alpha is None:
        alpha = default_dual_step(problem)
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    dims = problem.dims
    m = dims.m
    c = problem.f.c
    sched = config.schedule
    B = sched.B
    buf = HistoryBuffer(dims, B)
    ydims = [E.shape[0] for E in form["E"]]
    yoff = np.concatenate(([0], np.cumsum(ydims))).astype(int)
    w, y = np.zeros(dims.n), np.zeros(yoff[-1])
    if isinstance(z0, tuple):
        w, y = np.array(z0[0], dtype=float), np.array(z0[1], dtype=float)
    elif z0 is not None:
        w = np.array(z0, dtype=float)
    if w.shape != (dims.n,) or y.shape != (yoff[-1],):
        raise ConfigurationError("initial point does not match the problem")
    buf.record(w, np.zeros(dims.r))
    log = IterateLog("dual_decomposition", m)
    xs = config.z_star.x.data if config.z_star is not None else None

    def record(k, prev):
        log.k.append(k)
        log.step_norm.append(None if prev is None else float(np.linalg.norm(w - prev)))
        log.kkt.append(None)
        log.envelope.append(None)
        log.active.append(None)
        log.activations.append(k * m)
        if xs is not None:
            log.primal_err.append(float(np.linalg.norm(w - xs)))
        if config.store_iterates:
            log.iterates.append((w.copy(), y.copy()))

    record(0, None)
    for k in range(config.max_iters):
        if B > 0:
            ax = sched.ages(k, "primal", m)
            check_ages(ax, B, k, "primal")
            Xv, _ = buf.views(ax, np.zeros_like(ax))
        step = alpha / np.sqrt(k + 1.0)
        wn = w.copy()
        yn = y.copy()
        for i in range(m):
            sl, A, off, E, b, lo, hi = local[i]
            yi = y[yoff[i]:yoff[i + 1]]
            wv = Xv[i] if B > 0 else w
            lin = off @ wv - c[sl] - rho * w[sl] + E.T @ yi
            wi = _box_qp(A, lin, lo, hi, w[sl])
            wn[sl] = wi
            yn[yoff[i]:yoff[i + 1]] = yi + step * (E @ wi - b)
        if not (np.all(np.isfinite(wn)) and np.all(np.isfinite(yn))):
            raise DivergenceError(f"iterate became non-finite at iteration {k + 1}", k + 1)
        prev = w
        w, y = wn, yn
        buf.record(w, np.zeros(dims.r))
        record(k + 1, prev)
        if config.stop is not None and config.stop != "iters_only" and config.stop[0] == "dist_tol":
            if log.primal_err and log.primal_err[-1] <= config.stop[1]:
                break
    log.x, log.u = w, y
    return log
