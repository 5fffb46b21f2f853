"""
Deterministic simulation of bounded communication delays.

A schedule assigns an *age* ``a in [0, B]`` to every (receiver ``i``,
sender ``j``, iteration ``k``, side) quadruple; agent ``i`` then reads block
``j`` of iterate ``max(k - a, 0)``. Ages of an agent's own blocks are always
zero. Ages are not required to be monotone; wrap a schedule with
:class:`MonotoneSchedule` to make every read at least as fresh as the
previous one.
"""

from dataclasses import dataclass

import numpy as np

from .block_core import BlockVector
from .errors import ConfigurationError, ProtocolError, StructuralError

__all__ = [
    "DelaySchedule", "NoDelay", "FixedDelay", "UniformRandomDelay",
    "AdversarialMaxDelay", "CustomDelay", "MonotoneSchedule",
    "make_schedule", "load_schedule_table", "HistoryBuffer", "LocalView",
    "local_view", "record_iterate", "staleness_bound",
]

SIDES = ("primal", "dual")


def _side_index(side):
    if side in (0, 1):
        return int(side)
    try:
        return SIDES.index(side)
    except ValueError:
        raise ConfigurationError(f"side must be 'primal' or 'dual', got {side!r}") from None


class DelaySchedule:
    """Base class; subclasses implement :meth:`_raw_ages`."""

    kind = "base"

    def __init__(self, B):
        B = int(B)
        if B < 0:
            raise ConfigurationError("delay bound B must be >= 0")
        self.B = B

    def _raw_ages(self, k, side, m):
        raise NotImplementedError

    def ages(self, k, side, m):
        """``m x m`` integer table of ages at iteration ``k`` (row = receiver)."""
        a = np.array(self._raw_ages(int(k), _side_index(side), int(m)), dtype=np.int64)
        np.fill_diagonal(a, 0)
        return a

    def tau(self, i, j, k, side, m):
        """Iteration index ``tau_j^i(k)`` read by agent ``i``."""
        return max(k - int(self.ages(k, side, m)[i, j]), 0)

    def describe(self):
        return {"kind": self.kind, "B": self.B}


class NoDelay(DelaySchedule):
    kind = "none"

    def __init__(self):
        super().__init__(0)

    def _raw_ages(self, k, side, m):
        return np.zeros((m, m), dtype=np.int64)


class FixedDelay(DelaySchedule):
    kind = "fixed"

    def __init__(self, a, B):
        super().__init__(B)
        if a < 0 or a > self.B:
            raise ConfigurationError(f"fixed age {a} must lie in [0, B={self.B}]")
        self.a = int(a)

    def _raw_ages(self, k, side, m):
        return np.full((m, m), self.a, dtype=np.int64)

    def describe(self):
        return {"kind": self.kind, "B": self.B, "a": self.a}


class AdversarialMaxDelay(DelaySchedule):
    """Always the stalest legal value: age ``min(k, B)``."""

    kind = "adversarial_max"

    def _raw_ages(self, k, side, m):
        return np.full((m, m), min(k, self.B), dtype=np.int64)


class UniformRandomDelay(DelaySchedule):
    """Ages i.i.d. uniform on ``{0, ..., B}``.

    Tables are generated in chunks of ``chunk`` iterations from a stream keyed
    on ``(seed, side, chunk index, m)``, so any age can be recomputed without
    storing the history of draws.
    """

    kind = "uniform_random"
    chunk = 256

    def __init__(self, B, seed=0):
        super().__init__(B)
        self.seed = int(seed)
        self._cache = {}

    def _raw_ages(self, k, side, m):
        c, pos = divmod(k, self.chunk)
        key = (side, c, m)
        table = self._cache.get(key)
        if table is None:
            rng = np.random.default_rng([self.seed, side, c, m])
            table = rng.integers(0, self.B + 1, size=(self.chunk, m, m))
            # keep one chunk per side
            self._cache = {kk: v for kk, v in self._cache.items() if kk[0] != side}
            self._cache[key] = table
        return table[pos]

    def describe(self):
        return {"kind": self.kind, "B": self.B, "seed": self.seed}


class CustomDelay(DelaySchedule):
    """Ages from an explicit table ``{(k, i, j, side): age}``; missing
    entries mean age 0."""

    kind = "custom"

    def __init__(self, table, B):
        super().__init__(B)
        self.table = {}
        for (k, i, j, side), age in table.items():
            k, i, j, age = int(k), int(i), int(j), int(age)
            s = _side_index(side)
            _validate_age(age, self.B, i, j, k, SIDES[s])
            self.table[(k, i, j, s)] = age
        self._by_k = {}
        for (k, i, j, s), age in self.table.items():
            self._by_k.setdefault((k, s), []).append((i, j, age))

    def _raw_ages(self, k, side, m):
        a = np.zeros((m, m), dtype=np.int64)
        for i, j, age in self._by_k.get((k, side), ()):
            if not (0 <= i < m and 0 <= j < m):
                raise ProtocolError(f"schedule entry (i={i}, j={j}, k={k}) outside m={m}")
            a[i, j] = age
        return a


def _validate_age(age, B, i, j, k, side):
    if i == j and age != 0:
        raise ProtocolError(
            f"own-block age must be 0 (tau_i^i(k) = k); got {age} at i=j={i}, k={k}, {side}")
    if not 0 <= age <= B:
        raise ProtocolError(
            f"age {age} violates the delay bound B={B} at i={i}, j={j}, k={k}, {side}")


class MonotoneSchedule(DelaySchedule):
    """Clamp a base schedule so that ``tau_j^i(k)`` never decreases in ``k``.

    Queries must come in nondecreasing ``k`` per side.
    """

    def __init__(self, base):
        super().__init__(base.B)
        self.base = base
        self.kind = base.kind
        self._last = {}

    def _raw_ages(self, k, side, m):
        prev = self._last.get(side)
        if prev is not None and prev[0] == k:
            return prev[2]
        if prev is not None and prev[0] > k:
            raise ProtocolError("monotone schedule queried out of order")
        raw = np.array(self.base._raw_ages(k, side, m), dtype=np.int64)
        np.fill_diagonal(raw, 0)
        tau = np.maximum(k - raw, 0)
        if prev is not None:
            tau = np.maximum(tau, prev[1])
        ages = k - tau
        self._last[side] = (k, tau, ages)
        return ages

    def describe(self):
        return dict(self.base.describe(), monotone=True)


def make_schedule(kind, B=0, seed=0, a=None, table=None, monotone=False):
    """Build a delay schedule.

    Parameters
    ----------
    kind : {'none', 'fixed', 'uniform_random', 'adversarial_max', 'custom'}
    B : int
        Delay bound; forced to 0 for ``'none'``.
    seed : int
        Seed of ``'uniform_random'``.
    a : int
        Constant age of ``'fixed'``.
    table : dict
        Entries of ``'custom'``.
    monotone : bool
        Wrap the result in :class:`MonotoneSchedule`.
    """
    if kind == "none":
        sched = NoDelay()
    elif kind == "fixed":
        sched = FixedDelay(B if a is None else a, B)
    elif kind == "uniform_random":
        sched = UniformRandomDelay(B, seed)
    elif kind == "adversarial_max":
        sched = AdversarialMaxDelay(B)
    elif kind == "custom":
        if table is None:
            raise ConfigurationError("custom schedule needs a table")
        sched = CustomDelay(table, B)
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    return MonotoneSchedule(sched) if monotone else sched


def load_schedule_table(path, B=None):
    """Read a custom schedule from a text file.

    One entry per line: ``k i j side age`` (0-based agents, side ``primal``
    or ``dual``); blank lines and ``#`` comments are ignored. ``B`` defaults
    to the largest age in the file.
    """
    table = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ConfigurationError(f"{path}:{lineno}: expected 'k i j side age'")
            k, i, j, side, age = parts
            try:
                key = (int(k), int(i), int(j), SIDES[_side_index(side)])
                table[key] = int(age)
            except ValueError as exc:
                raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
            if min(key[0], key[1], key[2], table[key]) < 0:
                raise ConfigurationError(f"{path}:{lineno}: negative entry")
    if B is None:
        B = max(table.values(), default=0)
    return CustomDelay(table, B)


class HistoryBuffer:
    """Ring buffers holding the last ``B + 1`` primal and dual iterates."""

    def __init__(self, dims, B):
        self.dims = dims
        self.B = int(B)
        self.x = np.zeros((self.B + 1, dims.n))
        self.u = np.zeros((self.B + 1, dims.r))
        self.k = -1

    @property
    def size(self):
        """Number of stored reals."""
        return self.x.size + self.u.size

    def record(self, x, u):
        self.k += 1
        s = self.k % (self.B + 1)
        self.x[s] = x
        self.u[s] = u

    def slots(self, ages):
        """Ring slots for the given ages at the current iteration (clamped at 0)."""
        ages = np.minimum(ages, self.k)
        return (self.k - ages) % (self.B + 1)

    def get_x(self, age=0):
        return self.x[self.slots(age)].copy()

    def get_u(self, age=0):
        return self.u[self.slots(age)].copy()

    def views(self, ages_x, ages_u):
        """Outdated vectors of every agent at once.

        Returns two arrays of shapes ``(m, n)`` and ``(m, r)`` whose row
        ``i`` is ``x^k[i]`` resp. ``u^k[i]``.
        """
        dims = self.dims
        sx = self.slots(ages_x)[:, dims.primal_owner]
        su = self.slots(ages_u)[:, dims.dual_owner]
        return (self.x[sx, np.arange(dims.n)[None, :]],
                self.u[su, np.arange(dims.r)[None, :]])


def record_iterate(buf, z):
    """Append iterate ``z`` (a PrimalDualPoint) to the history."""
    buf.record(z.x.data, z.u.data)


@dataclass
class LocalView:
    """Agent ``i``'s outdated copies ``x^k[i]`` and ``u^k[i]``."""

    i: int
    k: int
    x: BlockVector
    u: BlockVector
    x_ages: np.ndarray
    u_ages: np.ndarray
    populated: frozenset

    def x_block(self, j):
        self._check(j)
        return self.x.block(j)

    def u_block(self, j):
        self._check(j)
        return self.u.block(j)

    def _check(self, j):
        if j not in self.populated:
            raise ProtocolError(f"agent {self.i} read block {j} it never receives")


def check_ages(ages, B, k, side):
    """Raise :class:`ProtocolError` unless every age respects the delay bound."""
    m = ages.shape[0]
    # cheap scalar tests first; the trace vanishes iff the diagonal does once ages >= 0
    if ages.min() < 0 or ages.max() > B or ages.trace() != 0:
        for i in range(m):
            for j in range(m):
                _validate_age(int(ages[i, j]), B, i, j, k, side)


def populated_blocks(coupling, i):
    return frozenset({i} | coupling.n_in[i] | coupling.m_p[i] | coupling.m_d[i])


def local_view(buf, schedule, coupling, i, k=None, fill=0.0):
    """Assemble agent ``i``'s view of iterate ``k`` (the latest recorded).

    Blocks outside ``N_i^in | M_i^p | M_i^d | {i}`` are filled with
    ``fill`` and flagged as unpopulated.
    """
    dims = buf.dims
    dims.check_agent(i)
    if k is None:
        k = buf.k
    if k != buf.k or k < 0:
        raise StructuralError(f"view requested for iterate {k}, latest recorded is {buf.k}")
    m = dims.m
    ax = schedule.ages(k, "primal", m)
    au = schedule.ages(k, "dual", m)
    if schedule.B > buf.B:
        raise ConfigurationError("history buffer is shorter than the schedule's delay bound")
    check_ages(ax, schedule.B, k, "primal")
    check_ages(au, schedule.B, k, "dual")
    sx = buf.slots(ax[i])
    su = buf.slots(au[i])
    x = buf.x[sx[dims.primal_owner], np.arange(dims.n)]
    u = buf.u[su[dims.dual_owner], np.arange(dims.r)]
    pop = populated_blocks(coupling, i)
    if len(pop) < m:
        x[~np.isin(dims.primal_owner, list(pop))] = fill
        u[~np.isin(dims.dual_owner, list(pop))] = fill
    return LocalView(i, k, BlockVector(dims.primal_dims, x), BlockVector(dims.dual_dims, u),
                     np.minimum(ax[i], k), np.minimum(au[i], k), pop)


def staleness_bound(trajectory, k, B):
    """``sum_{t=[k-B]_+}^{k-1} ||w^{t+1} - w^t||`` for a recorded trajectory.

    Bounds the distance between ``w^k`` and any outdated copy of it whose
    blocks are at most ``B`` iterations old.
    """
    total = 0.0
    for t in range(max(k - B, 0), k):
        total += float(np.linalg.norm(np.asarray(trajectory[t + 1]) - np.asarray(trajectory[t])))
    return total
