"""
Problem instances ``f(x) + sum_i g_i(x_i) + h_i(L_i. x)`` and their constants.
"""

from dataclasses import dataclass, field

import numpy as np

from .block_core import BlockLinearMap, operator_norm
from .errors import ConfigurationError, StructuralError
from .functions import ConjugateProxOracle, SmoothOracle

__all__ = [
    "ProblemSpec", "CouplingSets", "ProblemConstants",
    "derive_coupling_sets", "compute_constants", "classify_coupling",
]


@dataclass
class ProblemSpec:
    """A validated multi-agent problem.

    Parameters
    ----------
    dims : BlockDims
    f : SmoothOracle
    g : list of ProxOracle
        One strongly convex term per agent.
    h : list of ProxOracle or ConjugateProxOracle
        Wrapped into :class:`ConjugateProxOracle` on construction.
    L : BlockLinearMap
    f_dependency : list of set, optional
        Blocks read by ``grad_i f``; taken from ``f.dependency`` by default.
    meta : dict
        Builder-specific data (e.g. the formation dynamics).
    """

    dims: object
    f: SmoothOracle
    g: list
    h: list
    L: BlockLinearMap
    f_dependency: list = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.dims.m
        if len(self.g) != m or len(self.h) != m:
            raise StructuralError(f"need {m} g_i and {m} h_i, got {len(self.g)} and {len(self.h)}")
        if self.L.dims != self.dims or self.f.dims != self.dims:
            raise StructuralError("L and f must share the problem's BlockDims")
        self.h = [hh if isinstance(hh, ConjugateProxOracle) else ConjugateProxOracle(hh)
                  for hh in self.h]
        bad = [i for i, gi in enumerate(self.g) if not gi.mu > 0]
        if bad:
            raise ConfigurationError(
                f"g_i must be strongly convex (mu_g > 0); agents {bad} violate this")
        if self.f_dependency is None:
            self.f_dependency = self.f.dependency
        self.f_dependency = [set(d) for d in self.f_dependency]
        if len(self.f_dependency) != m:
            raise StructuralError("f_dependency needs one entry per agent")

    @property
    def m(self):
        return self.dims.m

    @property
    def mu_g(self):
        return np.array([gi.mu for gi in self.g])

    @property
    def mu_h(self):
        return np.array([hi.mu for hi in self.h])

    @property
    def coupling(self):
        return classify_coupling(self)

    def objective(self, x):
        """Primal objective value (may be ``inf`` outside the domain)."""
        x = np.asarray(x, dtype=float)
        total = self.f.value(x)
        for i in range(self.m):
            total += self.g[i].value(x[self.dims.primal_slice(i)])
            total += self.h[i].h.value(self.L.row(i) @ x)
        return total


@dataclass(frozen=True)
class CouplingSets:
    """Who talks to whom, per agent (self excluded everywhere)."""

    n_in: tuple
    n_out: tuple
    m_p: tuple
    m_d: tuple

    def primal_needs(self, i):
        """Blocks of ``x`` agent ``i`` reads (own block included)."""
        return {i} | self.n_in[i] | self.m_d[i]

    def dual_needs(self, i):
        return {i} | self.m_p[i]


def derive_coupling_sets(spec, f_dependency=None):
    """Communication sets from the declared dependency of ``grad f`` and the
    block sparsity of ``L``."""
    m = spec.dims.m
    deps = spec.f_dependency if f_dependency is None else f_dependency
    if len(deps) != m:
        raise StructuralError("f_dependency needs one entry per agent")
    n_in = []
    for i, d in enumerate(deps):
        d = set(int(j) for j in d)
        if any(not 0 <= j < m for j in d):
            raise StructuralError(f"f_dependency of agent {i} has an out-of-range index")
        n_in.append(frozenset(d - {i}))
    n_out = [frozenset(j for j in range(m) if i in n_in[j]) for i in range(m)]
    pat = spec.L.pattern
    m_p = [frozenset(j for j in range(m) if j != i and pat[j, i]) for i in range(m)]
    m_d = [frozenset(j for j in range(m) if j != i and pat[i, j]) for i in range(m)]
    return CouplingSets(tuple(n_in), tuple(n_out), tuple(m_p), tuple(m_d))


def classify_coupling(spec):
    """``'partial'`` when ``L`` is block diagonal, ``'total'`` otherwise."""
    return "partial" if spec.L.is_block_diagonal() else "total"


@dataclass(frozen=True)
class ProblemConstants:
    """Scalars entering every stepsize bound and rate.

    ``R_s`` is ``inf`` when some ``h_i`` is nonsmooth (``mu_h^i = 0``).
    """

    beta: float
    beta_bar: np.ndarray
    mu_g: np.ndarray
    mu_h: np.ndarray
    norm_L_diag: np.ndarray
    norm_L_row: np.ndarray
    norm_L_col: np.ndarray
    R_s: float
    C_s: float
    coupling: str = "total"

    @property
    def m(self):
        return len(self.mu_g)

    @property
    def beta_bar_weighted(self):
        """``||beta_bar||^2`` in the ``M_g^{-1}`` metric."""
        return float(np.sum(np.asarray(self.beta_bar) ** 2 / np.asarray(self.mu_g)))

    @property
    def nonsmooth_agents(self):
        return [i for i, mu in enumerate(self.mu_h) if not mu > 0]

    @classmethod
    def from_values(cls, *, beta=0.0, beta_bar=None, mu_g, mu_h, norm_L_diag=None,
                    norm_L_row=None, norm_L_col=None, R_s=None, C_s=None,
                    coupling="total"):
        """Build constants directly, filling ``R_s``/``C_s`` from the norms
        when not given."""
        mu_g = np.asarray(mu_g, dtype=float)
        mu_h = np.asarray(mu_h, dtype=float)
        m = mu_g.size
        beta_bar = np.zeros(m) if beta_bar is None else np.asarray(beta_bar, dtype=float)
        zeros = np.zeros(m)
        diag = zeros if norm_L_diag is None else np.asarray(norm_L_diag, dtype=float)
        row = diag if norm_L_row is None else np.asarray(norm_L_row, dtype=float)
        col = diag if norm_L_col is None else np.asarray(norm_L_col, dtype=float)
        if R_s is None:
            R_s = _weighted_sum(row, mu_h)
        if C_s is None:
            C_s = _weighted_sum(col, mu_g)
        return cls(float(beta), beta_bar, mu_g, mu_h, diag, row, col,
                   float(R_s), float(C_s), coupling)


def _weighted_sum(norms, mu):
    if np.any(~(mu > 0)):
        return np.inf
    return float(np.sum(norms ** 2 / mu))


def compute_constants(spec, norm_tol=1e-10, inflate=1e-6):
    """Derive every constant from the problem.

    Operator norms come from power iteration and are inflated by the relative
    factor ``inflate`` so that stepsize bounds built from them stay safe.
    """
    L = spec.L
    m = spec.dims.m
    scale = 1.0 + inflate
    diag = np.array([operator_norm(L.diag(i), tol=norm_tol) for i in range(m)]) * scale
    row = np.array([operator_norm(L.row(i), tol=norm_tol) for i in range(m)]) * scale
    col = np.array([operator_norm(L.col(i), tol=norm_tol) for i in range(m)]) * scale
    mu_g, mu_h = spec.mu_g, spec.mu_h
    return ProblemConstants(
        beta=float(spec.f.beta),
        beta_bar=np.array(spec.f.beta_bar, dtype=float),
        mu_g=mu_g,
        mu_h=mu_h,
        norm_L_diag=diag,
        norm_L_row=row,
        norm_L_col=col,
        R_s=_weighted_sum(row, mu_h),
        C_s=_weighted_sum(col, mu_g),
        coupling=classify_coupling(spec),
    )
