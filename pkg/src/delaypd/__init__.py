"""
delaypd: distributed primal-dual splitting with bounded communication delays.

Agents solve ``min f(x) + sum_i g_i(x_i) + h_i(L_i. x)`` using outdated copies
of their neighbours' variables. The package provides the delayed Vu-Condat
iteration (coupling through ``f`` only), a delayed AHU-type iteration for
coupling through ``L``, its randomized-activation variant, stepsize rules
with linear-rate certificates, and diagnostics that check runs against them.
"""

from .block_core import *  # noqa: F401,F403
from .delay_net import *  # noqa: F401,F403
from .diagnostics import *  # noqa: F401,F403
from .errors import *  # noqa: F401,F403
from .functions import *  # noqa: F401,F403
from .problem import *  # noqa: F401,F403
from .solvers import *  # noqa: F401,F403
from .tuning import *  # noqa: F401,F403
from .experiments import (build_elastic_net, build_formation, build_logistic,  # noqa: F401
                          random_quadratic_problem)

__version__ = "0.1.0"
