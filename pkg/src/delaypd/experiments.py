"""
Problem builders and the experiment configuration.

A configuration is a JSON document validated against ``CONFIG_SCHEMA``
before anything is computed; unknown keys are rejected.
"""

import copy
import json

import jsonschema
import numpy as np

from .block_core import BlockDims, BlockLinearMap
from .delay_net import load_schedule_table, make_schedule
from .errors import ConfigurationError
from .functions import (Box, ElasticNet, LogisticLoss, Point, Quadratic, QuadraticSmooth,
                        Separable, SmoothOracle, SquaredLoss, quadratic_coupling_smooth)
from .problem import ProblemSpec, compute_constants
from .tuning import (StepsizePlan, rate_constants_deterministic, rate_constants_random,
                     stepsizes_partial, stepsizes_random, stepsizes_total)

__all__ = [
    "CONFIG_SCHEMA", "validate_config", "load_config", "dump_config",
    "random_quadratic_problem", "double_integrator", "formation_dynamics",
    "build_formation", "build_logistic", "build_elastic_net", "build_custom",
    "build_problem", "build_schedule", "build_plan", "load_matrix",
    "ARROW_TARGETS", "TREE_NEIGHBORS",
]

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_matrix = {"oneOf": [{"type": "string"},
                     {"type": "array", "items": {"type": "array", "items": _num}}]}
_vector = {"oneOf": [{"type": "string"}, {"type": "array", "items": _num}]}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_scalar_or_list = {"oneOf": [_num, {"type": "array", "items": _num}]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_PROBLEMS = [
    _obj({
        "kind": {"const": "formation"},
        "m": {"type": "integer", "minimum": 2},
        "horizon": _pos_int,
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "lam": _scalar_or_list,
        "neighbors": {"type": "array", "items": {"type": "array", "items": _nonneg_int}},
        "targets": {"type": "array", "items": _pair},
        "d": {"type": "object", "additionalProperties": _pair},
        "radius": _num,
        "starts": {"type": "array", "items": _pair},
        "Q_scale": {"type": "number", "exclusiveMinimum": 0},
        "state_box": _pair,
        "input_box": _pair,
    }, ["kind", "m"]),
    _obj({
        "kind": {"const": "logistic"},
        "m": _pos_int,
        "samples": _pos_int,
        "dim": _pos_int,
        "lam": {"type": "number", "exclusiveMinimum": 0},
        "seed": _int,
        "data_file": {"type": "string"},
    }, ["kind", "m", "lam"]),
    _obj({
        "kind": {"const": "elastic_net"},
        "m": _pos_int,
        "samples": _pos_int,
        "dim": _pos_int,
        "lambda1": {"type": "number", "minimum": 0},
        "lambda2": _num,
        "seed": _int,
        "data_file": {"type": "string"},
    }, ["kind", "m", "lambda2"]),
    _obj({
        "kind": {"const": "quadratic"},
        "m": _pos_int,
        "n_i": _pos_int,
        "r_i": _pos_int,
        "coupling": {"enum": ["partial", "total"]},
        "mu_g": {"type": "number", "exclusiveMinimum": 0},
        "mu_h": {"type": "number", "exclusiveMinimum": 0},
        "coupling_weight": {"type": "number", "minimum": 0},
        "seed": _int,
    }, ["kind", "m"]),
    _obj({
        "kind": {"const": "custom"},
        "primal_dims": {"type": "array", "items": _pos_int, "minItems": 1},
        "dual_dims": {"type": "array", "items": _pos_int, "minItems": 1},
        "L": _matrix,
        "H": _matrix,
        "c": _vector,
        "mu_g": _scalar_or_list,
        "h": {"enum": ["squared", "point"]},
        "mu_h": {"type": "number", "exclusiveMinimum": 0},
        "d": _vector,
    }, ["kind", "primal_dims", "dual_dims", "L"]),
]

CONFIG_SCHEMA = _obj({
    "problem": {"oneOf": _PROBLEMS},
    "algorithm": {"enum": ["vu_condat_delayed", "ahu_delayed", "ahu_randomized",
                           "dual_decomposition"]},
    "schedule": _obj({
        "kind": {"enum": ["none", "fixed", "uniform_random", "adversarial_max", "custom"]},
        "B": _nonneg_int,
        "a": _nonneg_int,
        "seed": _int,
        "table_file": {"type": "string"},
        "monotone": {"type": "boolean"},
    }, ["kind"]),
    "stepsize": _obj({
        "mode": {"enum": ["auto", "rate", "manual"]},
        "gamma": _scalar_or_list,
        "sigma": _scalar_or_list,
        "margin": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
    }, ["mode"]),
    "activation_probs": _scalar_or_list,
    "iters": _pos_int,
    "seeds": {"type": "array", "items": _int, "minItems": 1},
    "stop": _obj({
        "kind": {"enum": ["iters_only", "kkt_tol", "dist_tol"]},
        "tol": {"type": "number", "exclusiveMinimum": 0},
    }, ["kind"]),
    "kkt_every": _nonneg_int,
    "reference": _obj({
        "mode": {"enum": ["exact_quadratic", "synchronous_polish"]},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "file": {"type": "string"},
    }),
    "output": {"type": "string"},
}, ["problem", "algorithm"])


def validate_config(cfg):
    """Raise :class:`ConfigurationError` unless ``cfg`` matches the schema."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"invalid configuration at {where}: {exc.message}") from None
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from None
    return validate_config(cfg)


def dump_config(cfg, fh=None):
    """Serialize a configuration (sorted keys, so the text is canonical)."""
    text = json.dumps(cfg, indent=2, sort_keys=True) + "\n"
    if fh is not None:
        fh.write(text)
    return text


def load_matrix(spec, ndim=2):
    """Inline nested list or path to a whitespace-delimited text file."""
    if isinstance(spec, str):
        try:
            arr = np.loadtxt(spec, ndmin=ndim, comments="#")
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read matrix file {spec}: {exc}") from None
        return arr if ndim == 2 else arr.ravel()
    return np.array(spec, dtype=float, ndmin=ndim)


# -- random quadratic suite ------------------------------------------------------------

def random_quadratic_problem(m=4, n_i=3, r_i=2, coupling="total", mu_g=1.0, mu_h=1.0,
                             seed=0, coupling_weight=0.5):
    """Strongly convex quadratic instance with a closed-form solution.

    ``g_i = mu_g/2 ||x_i||^2 + q_i'x_i``, ``h_i = 1/(2 mu_h) ||y - d_i||^2``
    (so ``h_i*`` is ``mu_h``-strongly convex), a ring of relative-position
    terms in ``f`` and a random ``L`` that is block diagonal for
    ``coupling='partial'`` and dense otherwise.
    """
    if coupling not in ("partial", "total"):
        raise ConfigurationError("coupling must be 'partial' or 'total'")
    rng = np.random.default_rng(seed)
    dims = BlockDims([n_i] * m, [r_i] * m)
    if coupling == "partial":
        L = BlockLinearMap.block_diagonal(dims, [rng.standard_normal((r_i, n_i)) / np.sqrt(n_i)
                                                 for _ in range(m)])
    else:
        L = BlockLinearMap.from_dense(dims, rng.standard_normal((dims.r, dims.n))
                                      / np.sqrt(dims.n))
    g = [Quadratic(np.full(n_i, float(mu_g)), rng.standard_normal(n_i)) for _ in range(m)]
    h = []
    for _ in range(m):
        d = rng.standard_normal(r_i)
        h.append(Quadratic(np.full(r_i, 1.0 / mu_h), -d / mu_h))
    if m > 1 and coupling_weight > 0:
        pairs = [(i, (i + 1) % m, coupling_weight, rng.standard_normal(n_i))
                 for i in range(m if m > 2 else 1)]
        f = quadratic_coupling_smooth(dims, pairs, np.eye(n_i))
    else:
        f = QuadraticSmooth(dims, np.zeros((dims.n, dims.n)))
    return ProblemSpec(dims, f, g, h, L, meta={"kind": "quadratic", "seed": seed})


# -- formation control -------------------------------------------------------------------

#: arrow formation (tip first) used with the tree of ``TREE_NEIGHBORS``
ARROW_TARGETS = [(0.0, 0.0), (-3.0, 3.0), (-3.0, -3.0), (-6.0, 6.0), (-6.0, -6.0)]
TREE_NEIGHBORS = [[1, 2], [3], [4], [], []]


def double_integrator(dt):
    """Exact discretization of a planar double integrator.

    State ``(position, velocity)`` in R^4, input acceleration in R^2.
    """
    I2 = np.eye(2)
    A = np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    Bm = np.vstack((0.5 * dt ** 2 * I2, dt * I2))
    return A, Bm


def formation_dynamics(s0, horizon, dt):
    """``E w = b`` for ``w = (xi_1..xi_N, v_0..v_{N-1})`` started at ``s0``."""
    A, Bm = double_integrator(dt)
    N = horizon
    nx, nu = 4, 2
    E = np.zeros((N * nx, N * nx + N * nu))
    b = np.zeros(N * nx)
    for t in range(N):
        rows = slice(t * nx, (t + 1) * nx)
        E[rows, t * nx:(t + 1) * nx] = np.eye(nx)
        E[rows, N * nx + t * nu:N * nx + (t + 1) * nu] = -Bm
        if t == 0:
            b[rows] = A @ s0
        else:
            E[rows, (t - 1) * nx:t * nx] = -A
    return E, b


def _formation_defaults(m):
    if m == 5:
        return [list(a) for a in ARROW_TARGETS], [list(n) for n in TREE_NEIGHBORS]
    # a line for other sizes: agent i follows agent i-1
    targets = [[-3.0 * i, 0.0] for i in range(m)]
    return targets, [[i + 1] if i + 1 < m else [] for i in range(m)]


def build_formation(config):
    """Formation control over a horizon for ``m`` planar double integrators.

    ``w_i`` stacks the states ``xi_1..xi_N`` and the inputs ``v_0..v_{N-1}``;
    ``g_i = 1/2 w'Q w``, ``h_i`` is the indicator of ``{b_i}`` times the box
    ``W_i`` and ``L_ii w_i = (E_i w_i, w_i)``. ``f`` penalizes the relative
    positions of neighbours over the horizon.
    """
    cfg = dict(config)
    m = int(cfg.get("m", 5))
    if m < 2:
        raise ConfigurationError("formation needs at least two agents")
    N = int(cfg.get("horizon", 3))
    dt = float(cfg.get("dt", 1.0))
    dflt_targets, dflt_nb = _formation_defaults(m)
    neighbors = cfg.get("neighbors", dflt_nb)
    if len(neighbors) != m or any(not 0 <= j < m or j == i
                                   for i, nb in enumerate(neighbors) for j in nb):
        raise ConfigurationError("neighbors needs one list per agent of other agents' indices")
    lam = np.broadcast_to(np.asarray(cfg.get("lam", 1.0), dtype=float), (m,))
    targets = np.asarray(cfg.get("targets", dflt_targets), dtype=float)
    dmap = cfg.get("d", {})
    radius = float(cfg.get("radius", 10.0))
    if "starts" in cfg:
        starts = np.asarray(cfg["starts"], dtype=float)
    else:
        ang = np.pi / 2 + 2 * np.pi * np.arange(m) / m
        starts = radius * np.column_stack((np.cos(ang), np.sin(ang)))
    if starts.shape != (m, 2) or ("targets" in cfg and targets.shape != (m, 2)):
        raise ConfigurationError("starts and targets need one planar point per agent")
    qs = float(cfg.get("Q_scale", 1.0))
    if not qs > 0:
        raise ConfigurationError("Q must be positive definite (g_i strongly convex)")
    slo, shi = cfg.get("state_box", (-100.0, 100.0))
    ilo, ihi = cfg.get("input_box", (-5.0, 5.0))
    if not (slo < shi and ilo < ihi):
        raise ConfigurationError("empty box")
    nx, nu = 4, 2
    ni = N * (nx + nu)
    dims = BlockDims([ni] * m, [N * nx + ni] * m)
    lo = np.concatenate((np.full(N * nx, slo), np.full(N * nu, ilo)))
    hi = np.concatenate((np.full(N * nx, shi), np.full(N * nu, ihi)))
    C_hat = np.zeros((2 * N, ni))
    for t in range(N):
        C_hat[2 * t:2 * t + 2, t * nx:t * nx + 2] = np.eye(2)
    pairs = []
    for i, nb in enumerate(neighbors):
        for j in nb:
            key = f"{i},{j}"
            dij = np.asarray(dmap[key], dtype=float) if key in dmap else targets[i] - targets[j]
            pairs.append((i, j, float(lam[i]), np.tile(dij, N)))
    f = quadratic_coupling_smooth(dims, pairs, C_hat)
    g, h, Ldiag, Es, bs, Qs = [], [], [], [], [], []
    for i in range(m):
        s0 = np.concatenate((starts[i], np.zeros(2)))
        E, b = formation_dynamics(s0, N, dt)
        Q = qs * np.eye(ni)
        g.append(Quadratic(Q))
        h.append(Separable([(N * nx, Point(b)), (ni, Box(lo, hi))]))
        Ldiag.append(np.vstack((E, np.eye(ni))))
        Es.append(E)
        bs.append(b)
        Qs.append(Q)
    L = BlockLinearMap.block_diagonal(dims, Ldiag)
    # grad_i f reads the blocks of every pair agent i belongs to
    dependency = [set(neighbors[i]) | {j for j in range(m) if i in neighbors[j]}
                  for i in range(m)]
    meta = {"kind": "formation", "formation": {
        "Q": Qs, "E": Es, "b": bs, "lo": [lo] * m, "hi": [hi] * m,
        "C_hat": C_hat, "neighbors": neighbors, "starts": starts, "horizon": N, "dt": dt}}
    return ProblemSpec(dims, f, g, h, L, f_dependency=dependency, meta=meta)


# -- regression problems ----------------------------------------------------------------

def _split(total, m):
    if total < m:
        raise ConfigurationError(f"cannot split {total} features over {m} agents")
    base, extra = divmod(total, m)
    return [base + (1 if i < extra else 0) for i in range(m)]


def _load_rows(path, m):
    """Rows ``agent target x_1 ... x_d`` grouped by agent."""
    data = load_matrix(path)
    if data.shape[1] < 3:
        raise ConfigurationError(f"{path}: data rows are 'agent target x_1 ... x_d'")
    owner = data[:, 0].astype(int)
    if owner.min(initial=0) < 0 or owner.max(initial=0) >= m:
        raise ConfigurationError("sample owner out of range")
    rows = [data[owner == i, 2:] for i in range(m)]
    targets = [data[owner == i, 1] for i in range(m)]
    return rows, targets, data.shape[1] - 2


def _require_rows(rows):
    bad = [i for i, Xi in enumerate(rows) if Xi.shape[0] == 0]
    if bad:
        raise ConfigurationError(f"agents {bad} own no data rows")


def build_logistic(config):
    """Distributed regularized logistic regression.

    Agent ``i`` owns a slice ``w_i`` of the weights and a set of samples;
    ``g_i = lam ||w_i||^2`` and ``h_i`` is the logistic loss of its samples,
    whose rows span every slice of ``w`` (total coupling).
    """
    cfg = dict(config)
    m = int(cfg["m"])
    lam = float(cfg["lam"])
    if not lam > 0:
        raise ConfigurationError("lam must be positive")
    if "data_file" in cfg:
        rows, labs, dim = _load_rows(cfg["data_file"], m)
    else:
        rng = np.random.default_rng(cfg.get("seed", 0))
        s = int(cfg.get("samples", 10))
        dim = int(cfg.get("dim", 2 * m))
        w_true = rng.standard_normal(dim)
        rows, labs = [], []
        for _ in range(m):
            Xi = rng.standard_normal((s, dim))
            p = 1.0 / (1.0 + np.exp(-Xi @ w_true))
            labs.append(np.where(rng.random(s) < p, 1.0, -1.0))
            rows.append(Xi)
    _require_rows(rows)
    dims = BlockDims(_split(dim, m), [Xi.shape[0] for Xi in rows])
    L = BlockLinearMap.from_dense(dims, np.vstack(rows))
    g = [ElasticNet(0.0, lam, n) for n in dims.primal_dims]
    h = [LogisticLoss(y) for y in labs]
    return ProblemSpec(dims, SmoothOracle.zero(dims), g, h, L, meta={"kind": "logistic"})


def build_elastic_net(config):
    """Distributed elastic net: squared loss per agent, elastic-net ``g_i``."""
    cfg = dict(config)
    m = int(cfg["m"])
    l1 = float(cfg.get("lambda1", 0.0))
    l2 = float(cfg["lambda2"])
    if not l2 > 0:
        raise ConfigurationError("lambda2 must be positive (strong convexity)")
    if "data_file" in cfg:
        rows, ys, dim = _load_rows(cfg["data_file"], m)
    else:
        rng = np.random.default_rng(cfg.get("seed", 0))
        s = int(cfg.get("samples", 10))
        dim = int(cfg.get("dim", 2 * m))
        w_true = rng.standard_normal(dim) * (rng.random(dim) < 0.5)
        rows, ys = [], []
        for _ in range(m):
            Xi = rng.standard_normal((s, dim))
            rows.append(Xi)
            ys.append(Xi @ w_true + 0.1 * rng.standard_normal(s))
    _require_rows(rows)
    dims = BlockDims(_split(dim, m), [Xi.shape[0] for Xi in rows])
    L = BlockLinearMap.from_dense(dims, np.vstack(rows))
    g = [ElasticNet(l1, l2, n) for n in dims.primal_dims]
    h = [SquaredLoss(y) for y in ys]
    return ProblemSpec(dims, SmoothOracle.zero(dims), g, h, L, meta={"kind": "elastic_net"})


def build_custom(config):
    """Problem given by matrices: ``f = 1/2 x'Hx - c'x``, ``g_i = mu_g/2 ||x_i||^2``
    and ``h_i`` either ``1/(2 mu_h) ||y - d_i||^2`` or the indicator of ``{d_i}``."""
    cfg = dict(config)
    dims = BlockDims(cfg["primal_dims"], cfg["dual_dims"])
    Ld = load_matrix(cfg["L"])
    if Ld.shape != (dims.r, dims.n):
        raise ConfigurationError(f"L has shape {Ld.shape}, expected {(dims.r, dims.n)}")
    L = BlockLinearMap.from_dense(dims, Ld)
    H = load_matrix(cfg["H"]) if "H" in cfg else np.zeros((dims.n, dims.n))
    c = load_matrix(cfg["c"], 1) if "c" in cfg else np.zeros(dims.n)
    if H.shape != (dims.n, dims.n) or c.shape != (dims.n,):
        raise ConfigurationError("H or c does not match the primal dimension")
    if not np.allclose(H, H.T) or np.linalg.eigvalsh(0.5 * (H + H.T)).min() < -1e-12:
        raise ConfigurationError("H must be symmetric positive semidefinite")
    f = QuadraticSmooth(dims, 0.5 * (H + H.T), c)
    mu_g = np.broadcast_to(np.asarray(cfg.get("mu_g", 1.0), dtype=float), (dims.m,))
    g = [Quadratic(np.full(n, mu)) for n, mu in zip(dims.primal_dims, mu_g)]
    d = load_matrix(cfg["d"], 1) if "d" in cfg else np.zeros(dims.r)
    if d.shape != (dims.r,):
        raise ConfigurationError("d does not match the dual dimension")
    kind = cfg.get("h", "squared")
    mu_h = float(cfg.get("mu_h", 1.0))
    h = []
    for i in range(dims.m):
        di = d[dims.dual_slice(i)]
        if kind == "point":
            h.append(Point(di))
        else:
            h.append(Quadratic(np.full(di.size, 1.0 / mu_h), -di / mu_h))
    return ProblemSpec(dims, f, g, h, L, meta={"kind": "custom"})


def build_problem(problem_cfg):
    kind = problem_cfg["kind"]
    if kind == "formation":
        return build_formation(problem_cfg)
    if kind == "logistic":
        return build_logistic(problem_cfg)
    if kind == "elastic_net":
        return build_elastic_net(problem_cfg)
    if kind == "quadratic":
        args = {k: v for k, v in problem_cfg.items() if k != "kind"}
        return random_quadratic_problem(**args)
    if kind == "custom":
        return build_custom(problem_cfg)
    raise ConfigurationError(f"unknown problem kind {kind!r}")


def build_schedule(sched_cfg, seed=None):
    """Delay schedule from its configuration; ``seed`` overrides the file's."""
    cfg = {"kind": "none"} if sched_cfg is None else dict(sched_cfg)
    kind = cfg["kind"]
    B = int(cfg.get("B", 0))
    if kind == "custom":
        if "table_file" not in cfg:
            raise ConfigurationError("custom schedule needs table_file")
        sched = load_schedule_table(cfg["table_file"], B if "B" in cfg else None)
        if cfg.get("monotone"):
            from .delay_net import MonotoneSchedule
            sched = MonotoneSchedule(sched)
        return sched
    return make_schedule(kind, B, cfg.get("seed", 0) if seed is None else seed,
                         a=cfg.get("a"), monotone=bool(cfg.get("monotone", False)))


def build_plan(problem, cfg, constants=None):
    """Stepsizes (and the rate certificate, if any) the configuration asks for.

    ``auto`` picks the convergence bound matching the algorithm; ``rate``
    the linear-rate stepsizes; ``manual`` takes ``gamma``/``sigma`` as given.

    Returns
    -------
    (StepsizePlan, RateCertificate or None)
    """
    step = dict(cfg.get("stepsize", {"mode": "auto"}))
    alg = cfg["algorithm"]
    mode = step["mode"]
    m = problem.m
    B = int(cfg.get("schedule", {}).get("B", 0))
    if cfg.get("schedule", {}).get("kind", "none") == "none":
        B = 0
    margin = float(step.get("margin", 0.99))
    if mode == "manual":
        if "gamma" not in step or "sigma" not in step:
            raise ConfigurationError("manual stepsizes need gamma and sigma")
        return StepsizePlan.manual(step["gamma"], step["sigma"], m), None
    c = compute_constants(problem) if constants is None else constants
    p = cfg.get("activation_probs")
    if mode == "auto":
        if alg in ("vu_condat_delayed", "dual_decomposition"):
            return stepsizes_partial(c, B=B, margin=margin), None
        if alg == "ahu_delayed":
            return stepsizes_total(c, B=B, margin=margin), None
        if p is None:
            raise ConfigurationError("ahu_randomized needs activation_probs")
        return stepsizes_random(c, B, p, margin=margin), None
    if alg == "ahu_randomized":
        if p is None:
            raise ConfigurationError("ahu_randomized needs activation_probs")
        cert, plan = rate_constants_random(c, B, p)
    elif alg == "ahu_delayed":
        cert, plan = rate_constants_deterministic(c, B, margin=margin)
    else:
        raise ConfigurationError(f"no rate certificate for {alg}")
    return plan, cert


def canonical(cfg):
    """Deep copy through the serializer (what a reparse would return)."""
    return json.loads(dump_config(copy.deepcopy(cfg)))
