"""
Stepsize bounds and linear-rate certificates.

The bounds are strict inequalities; a plan uses ``margin`` times the bound.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InapplicableError, NumericalError

__all__ = [
    "StepsizePlan", "RateCertificate",
    "stepsizes_partial", "stepsizes_total", "stepsizes_random",
    "rate_constants_deterministic", "rate_constants_random",
    "partial_gamma_bound", "total_bounds", "random_bounds",
    "deterministic_c2", "deterministic_c_max", "random_rate_deltas", "random_rate_feasible",
]


@dataclass
class StepsizePlan:
    """Per-agent primal (``gamma``) and dual (``sigma``) stepsizes."""

    gamma: np.ndarray
    sigma: np.ndarray
    provenance: str = "manual"
    margin: float = 1.0
    B: int = 0
    p: np.ndarray = None
    c: float = None

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.gamma.shape != self.sigma.shape:
            raise ConfigurationError("gamma and sigma need one entry per agent")
        if np.any(~(self.gamma > 0)) or np.any(~(self.sigma > 0)) \
                or np.any(~np.isfinite(self.gamma)) or np.any(~np.isfinite(self.sigma)):
            raise ConfigurationError("stepsizes must be finite and strictly positive")
        if self.p is not None:
            self.p = np.asarray(self.p, dtype=float)

    @classmethod
    def manual(cls, gamma, sigma, m=None):
        if m is not None:
            gamma = np.broadcast_to(np.asarray(gamma, float), (m,)).copy()
            sigma = np.broadcast_to(np.asarray(sigma, float), (m,)).copy()
        return cls(gamma, sigma, "manual")

    def recheck(self, constants):
        """Plug the plan back into its own inequality (strictly)."""
        prov = self.provenance
        if prov == "manual":
            return True
        if prov == "partial_eq12":
            bound = partial_gamma_bound(constants, self.sigma, self.B)
            return bool(np.all(self.gamma < bound))
        if prov == "total_asm5":
            sb, gb = total_bounds(constants, self.B)
            return bool(np.all(self.sigma < sb) and np.all(self.gamma < gb))
        if prov == "random_asm6":
            sb, gb = random_bounds(constants, self.B, self.p)
            return bool(np.all(self.sigma < sb) and np.all(self.gamma < gb))
        if prov == "rate_thm3":
            ok = self.c <= deterministic_c_max(constants, self.B)
            return bool(ok and np.allclose(self.gamma, self.c / constants.mu_g, rtol=1e-14)
                        and np.allclose(self.sigma, self.c / constants.mu_h, rtol=1e-14))
        if prov == "rate_thm5":
            return bool(self.c < np.min(self.p)
                        and random_rate_feasible(self.c, constants, self.B, self.p))
        raise ConfigurationError(f"unknown provenance {prov!r}")


@dataclass
class RateCertificate:
    """Guaranteed per-iteration contraction of a squared distance.

    ``factor`` is ``1/(1+c)`` in the ``D`` metric (deterministic) or
    ``1-c`` in the ``M`` metric (randomized, in expectation).
    """

    c: float
    factor: float
    metric: str
    B: int
    constants: dict = field(default_factory=dict)

    def bound(self, k, d0):
        return self.factor ** np.asarray(k, dtype=float) * d0


def _margin(margin):
    if not 0 < margin <= 1:
        raise ConfigurationError("margin must lie in (0, 1]")
    return float(margin)


def _require_smooth_h(constants):
    bad = constants.nonsmooth_agents
    if bad or not np.isfinite(constants.R_s):
        raise InapplicableError(
            "h_i not smooth: total-coupling theory requires mu_h^i > 0 "
            f"(h_i continuously differentiable with Lipschitz gradient); offending agents: {bad}")


def _inv(den):
    with np.errstate(divide="ignore"):
        return np.where(np.asarray(den) > 0, 1.0 / np.asarray(den, dtype=float), np.inf)


# -- partial coupling -----------------------------------------------------------

def partial_gamma_bound(constants, sigma, B):
    den = (np.asarray(sigma, dtype=float) * constants.norm_L_diag ** 2 + constants.beta
           + 0.5 * B ** 2 * constants.beta_bar_weighted)
    return _inv(den)


def stepsizes_partial(constants, sigma=None, B=0, margin=0.99):
    """Primal stepsizes for the delayed Vu-Condat iteration.

    ``sigma`` is free; it defaults to ``1/||L_ii||`` (1 when ``L_ii = 0``).
    """
    margin = _margin(margin)
    if constants.coupling != "partial":
        raise InapplicableError("this stepsize rule needs a block-diagonal L (partial coupling)")
    if sigma is None:
        nd = constants.norm_L_diag
        sigma = np.where(nd > 0, 1.0 / np.where(nd > 0, nd, 1.0), 1.0)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (constants.m,)).copy()
    bound = partial_gamma_bound(constants, sigma, B)
    if np.any(~np.isfinite(bound)):
        raise ConfigurationError("unbounded stepsize, supply manual gamma")
    return StepsizePlan(margin * bound, sigma, "partial_eq12", margin, B)


# -- total coupling ---------------------------------------------------------------

def total_bounds(constants, B):
    sb = _inv(constants.C_s * (B + 1) ** 2)
    gb = _inv(constants.beta + 0.5 * constants.R_s * (B + 1) ** 2
              + B ** 2 * constants.beta_bar_weighted)
    return np.full(constants.m, sb), np.full(constants.m, gb)


def stepsizes_total(constants, B=0, margin=0.99):
    """Uniform stepsizes for the delayed AHU-type iteration."""
    margin = _margin(margin)
    _require_smooth_h(constants)
    sb, gb = total_bounds(constants, B)
    if np.any(~np.isfinite(sb)) or np.any(~np.isfinite(gb)):
        raise ConfigurationError("unbounded stepsize, supply manual gamma/sigma")
    return StepsizePlan(margin * gb, margin * sb, "total_asm5", margin, B)


def random_bounds(constants, B, p):
    p = np.asarray(p, dtype=float)
    bp = B ** 2 * p + 1.0
    sb = _inv(2.0 * constants.C_s * bp)
    gb = _inv(constants.beta + constants.R_s * bp + constants.beta_bar_weighted * B ** 2 * p)
    return sb, gb


def _check_p(p, m):
    p = np.broadcast_to(np.asarray(p, dtype=float), (m,)).copy()
    if np.any(~(p > 0)) or np.any(p > 1):
        raise ConfigurationError("activation probabilities must lie in (0, 1]")
    return p


def stepsizes_random(constants, B, p, margin=0.99):
    """Per-agent stepsizes for the randomized AHU-type iteration."""
    margin = _margin(margin)
    p = _check_p(p, constants.m)
    _require_smooth_h(constants)
    sb, gb = random_bounds(constants, B, p)
    if np.any(~np.isfinite(sb)) or np.any(~np.isfinite(gb)):
        raise ConfigurationError("unbounded stepsize, supply manual gamma/sigma")
    return StepsizePlan(margin * gb, margin * sb, "random_asm6", margin, B, p)


# -- linear rates -------------------------------------------------------------------

def deterministic_c2(constants, B):
    bw = constants.beta_bar_weighted
    t1 = np.min(constants.mu_g) * _inv(2 * B * bw + constants.R_s * (B + 1) + constants.beta)
    t2 = np.min(constants.mu_h) * _inv(2 * constants.C_s * (B + 1))
    return float(min(t1, t2))


def deterministic_c_max(constants, B):
    return float((1.0 + deterministic_c2(constants, B)) ** (1.0 / (B + 1)) - 1.0)


def rate_constants_deterministic(constants, B, margin=0.99):
    """Rate certificate in the ``D`` metric and the stepsizes it prescribes.

    Returns
    -------
    (RateCertificate, StepsizePlan)
    """
    margin = _margin(margin)
    _require_smooth_h(constants)
    c2 = deterministic_c2(constants, B)
    if not np.isfinite(c2):
        raise ConfigurationError("rate constant unbounded (L = 0 and f = 0); supply manual stepsizes")
    c = margin * ((1.0 + c2) ** (1.0 / (B + 1)) - 1.0)
    plan = StepsizePlan(c / constants.mu_g, c / constants.mu_h, "rate_thm3", margin, B, c=c)
    cert = RateCertificate(c, 1.0 / (1.0 + c), "D", B, {"c2": c2})
    return cert, plan


def random_rate_deltas(c, constants, B, p):
    p = np.asarray(p, dtype=float)
    bw = constants.beta_bar_weighted
    d1 = np.min((p - c) * constants.mu_g) * _inv(
        2 * B * bw + 2 * B * constants.R_s + 2 * constants.R_s + constants.beta)
    d2 = np.min((p - c) * constants.mu_h) * _inv(4 * constants.C_s * (1 + B))
    return float(d1), float(d2)


def random_rate_feasible(c, constants, B, p):
    """Whether ``(1-c)^{-B} + c <= 1 + min(delta1, delta2)`` at ``c``."""
    if not 0 < c < 1:
        return False
    d1, d2 = random_rate_deltas(c, constants, B, p)
    return (1.0 - c) ** (-B) + c <= 1.0 + min(d1, d2)


def rate_constants_random(constants, B, p, rtol=1e-10):
    """Largest feasible rate ``c < min p_i`` by bisection, plus its stepsizes.

    Returns
    -------
    (RateCertificate, StepsizePlan)
    """
    _require_smooth_h(constants)
    p = _check_p(p, constants.m)
    lo, hi = 0.0, float(np.min(p))
    if random_rate_feasible(hi, constants, B, p):  # cannot happen: deltas vanish at min p
        raise NumericalError("feasibility predicate did not bracket")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if random_rate_feasible(mid, constants, B, p):
            lo = mid
        else:
            hi = mid
    if lo <= 1e-14:
        raise NumericalError("no feasible rate constant above 1e-14")
    c = lo
    scale = p / c - 1.0
    plan = StepsizePlan(1.0 / (scale * constants.mu_g), 1.0 / (scale * constants.mu_h),
                        "rate_thm5", 1.0, B, p, c=c)
    d1, d2 = random_rate_deltas(c, constants, B, p)
    cert = RateCertificate(c, 1.0 - c, "M", B, {"delta1": d1, "delta2": d2})
    return cert, plan
