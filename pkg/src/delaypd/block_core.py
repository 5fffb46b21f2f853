"""
Block-partitioned vectors, block linear maps and weighted metrics.

Vectors are stored flat (one contiguous ``ndarray``) together with the list of
block sizes, so that whole-vector arithmetic stays cheap while agents can
still address their own block through a slice.
"""

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError, StructuralError

__all__ = [
    "BlockDims",
    "BlockVector",
    "PrimalDualPoint",
    "BlockLinearMap",
    "DiagonalBlockMetric",
    "SaddleMetricP",
    "apply_map",
    "apply_row",
    "apply_col_adjoint",
    "metric_norm_sq",
    "operator_norm",
]


def _offsets(sizes):
    return np.concatenate(([0], np.cumsum(sizes))).astype(int)


@dataclass(frozen=True)
class BlockDims:
    """Primal sizes ``n_i`` and dual sizes ``r_i`` of the ``m`` agents."""

    primal_dims: tuple
    dual_dims: tuple

    def __post_init__(self):
        p = tuple(int(d) for d in self.primal_dims)
        d = tuple(int(d) for d in self.dual_dims)
        if len(p) < 1 or len(p) != len(d):
            raise StructuralError(
                f"need m >= 1 agents with one primal and one dual size each, "
                f"got {len(p)} primal and {len(d)} dual sizes")
        if min(p) < 1 or min(d) < 1:
            raise StructuralError("all block sizes must be >= 1")
        object.__setattr__(self, "primal_dims", p)
        object.__setattr__(self, "dual_dims", d)

    @property
    def m(self):
        return len(self.primal_dims)

    @property
    def n(self):
        return sum(self.primal_dims)

    @property
    def r(self):
        return sum(self.dual_dims)

    @cached_property
    def primal_offsets(self):
        return _offsets(self.primal_dims)

    @cached_property
    def dual_offsets(self):
        return _offsets(self.dual_dims)

    def primal_slice(self, i):
        self.check_agent(i)
        return slice(self.primal_offsets[i], self.primal_offsets[i + 1])

    def dual_slice(self, i):
        self.check_agent(i)
        return slice(self.dual_offsets[i], self.dual_offsets[i + 1])

    @cached_property
    def primal_owner(self):
        """Block index of every primal coordinate."""
        return np.repeat(np.arange(self.m), self.primal_dims)

    @cached_property
    def dual_owner(self):
        return np.repeat(np.arange(self.m), self.dual_dims)

    def check_agent(self, i):
        if not 0 <= i < self.m:
            raise StructuralError(f"agent index {i} out of range for m={self.m}")


class BlockVector:
    """A dense real vector split into consecutive blocks.

    Parameters
    ----------
    sizes : sequence of int
        Block lengths.
    data : array_like, optional
        Flat contents; zeros if omitted.
    """

    def __init__(self, sizes, data=None):
        self.sizes = tuple(int(s) for s in sizes)
        self.offsets = _offsets(self.sizes)
        total = int(self.offsets[-1])
        if data is None:
            data = np.zeros(total)
        data = np.asarray(data, dtype=float)
        if data.shape != (total,):
            raise StructuralError(
                f"flat data of shape {data.shape} does not match total length {total}")
        self.data = data

    @classmethod
    def from_blocks(cls, blocks):
        blocks = [np.atleast_1d(np.asarray(b, dtype=float)).ravel() for b in blocks]
        return cls([b.size for b in blocks], np.concatenate(blocks))

    @property
    def m(self):
        return len(self.sizes)

    def block(self, i):
        if not 0 <= i < self.m:
            raise StructuralError(f"block index {i} out of range for m={self.m}")
        return self.data[self.offsets[i]:self.offsets[i + 1]]

    @property
    def blocks(self):
        return [self.block(i) for i in range(self.m)]

    def copy(self):
        return BlockVector(self.sizes, self.data.copy())

    def __len__(self):
        return self.data.size

    def __repr__(self):
        return f"BlockVector(sizes={self.sizes})"


@dataclass
class PrimalDualPoint:
    """Stacked primal-dual pair ``z = (x, u)``."""

    x: BlockVector
    u: BlockVector

    @classmethod
    def zeros(cls, dims):
        return cls(BlockVector(dims.primal_dims), BlockVector(dims.dual_dims))

    @classmethod
    def from_arrays(cls, dims, x, u):
        return cls(BlockVector(dims.primal_dims, np.array(x, dtype=float)),
                   BlockVector(dims.dual_dims, np.array(u, dtype=float)))

    def stack(self):
        return np.concatenate((self.x.data, self.u.data))

    def copy(self):
        return PrimalDualPoint(self.x.copy(), self.u.copy())


class BlockLinearMap:
    """Block operator ``L`` with ``L_ij : R^{n_j} -> R^{r_i}``.

    Parameters
    ----------
    dims : BlockDims
    blocks : dict
        Maps ``(i, j)`` to a dense ``r_i x n_j`` matrix. Missing entries and
        entries that are identically zero are treated as absent blocks.
    """

    def __init__(self, dims, blocks):
        self.dims = dims
        self.blocks = {}
        for (i, j), mat in blocks.items():
            dims.check_agent(i)
            dims.check_agent(j)
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            shape = (dims.dual_dims[i], dims.primal_dims[j])
            if mat.shape != shape:
                raise StructuralError(
                    f"block ({i},{j}) has shape {mat.shape}, expected {shape}")
            if np.any(mat != 0):
                self.blocks[(i, j)] = mat

    @classmethod
    def from_dense(cls, dims, matrix):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (dims.r, dims.n):
            raise StructuralError(
                f"dense matrix of shape {matrix.shape}, expected {(dims.r, dims.n)}")
        blocks = {}
        for i in range(dims.m):
            for j in range(dims.m):
                blocks[(i, j)] = matrix[dims.dual_slice(i), dims.primal_slice(j)]
        return cls(dims, blocks)

    @classmethod
    def block_diagonal(cls, dims, diag_blocks):
        return cls(dims, {(i, i): b for i, b in enumerate(diag_blocks)})

    def block(self, i, j):
        """Block ``(i, j)`` or ``None`` when absent."""
        return self.blocks.get((i, j))

    @cached_property
    def dense(self):
        out = np.zeros((self.dims.r, self.dims.n))
        for (i, j), mat in self.blocks.items():
            out[self.dims.dual_slice(i), self.dims.primal_slice(j)] = mat
        return out

    def row(self, i):
        """Dense block row ``L_{i.}`` of shape ``r_i x n``."""
        return self.dense[self.dims.dual_slice(i), :]

    def col(self, i):
        """Dense block column ``L_{.i}`` of shape ``r x n_i``."""
        return self.dense[:, self.dims.primal_slice(i)]

    def diag(self, i):
        b = self.block(i, i)
        if b is None:
            b = np.zeros((self.dims.dual_dims[i], self.dims.primal_dims[i]))
        return b

    @property
    def pattern(self):
        """Boolean ``m x m`` matrix of present blocks."""
        pat = np.zeros((self.dims.m, self.dims.m), dtype=bool)
        for (i, j) in self.blocks:
            pat[i, j] = True
        return pat

    def is_block_diagonal(self):
        return all(i == j for (i, j) in self.blocks)


def _flat(v, expected, what):
    data = v.data if isinstance(v, BlockVector) else np.asarray(v, dtype=float)
    if data.shape != (expected,):
        raise StructuralError(f"{what} has shape {data.shape}, expected ({expected},)")
    return data


def apply_map(L, x):
    """Return ``Lx`` as a dual ``BlockVector``."""
    dims = L.dims
    xd = _flat(x, dims.n, "primal vector")
    out = np.zeros(dims.r)
    for (i, j), mat in L.blocks.items():
        out[dims.dual_slice(i)] += mat @ xd[dims.primal_slice(j)]
    return BlockVector(dims.dual_dims, out)


def apply_row(L, i, x):
    """Return ``L_{i.} x = sum_j L_ij x_j``."""
    dims = L.dims
    dims.check_agent(i)
    xd = _flat(x, dims.n, "primal vector")
    out = np.zeros(dims.dual_dims[i])
    for j in range(dims.m):
        mat = L.block(i, j)
        if mat is not None:
            out += mat @ xd[dims.primal_slice(j)]
    return out


def apply_col_adjoint(L, i, u):
    """Return ``L_{.i}^T u = sum_j L_ji^T u_j``."""
    dims = L.dims
    dims.check_agent(i)
    ud = _flat(u, dims.r, "dual vector")
    out = np.zeros(dims.primal_dims[i])
    for j in range(dims.m):
        mat = L.block(j, i)
        if mat is not None:
            out += mat.T @ ud[dims.dual_slice(j)]
    return out


@dataclass
class DiagonalBlockMetric:
    """Block-diagonal metric with one positive scalar weight per block.

    ``weights`` has one entry per block of the vector the metric is applied
    to; for a :class:`PrimalDualPoint` the first ``m`` weights act on the
    primal blocks and the last ``m`` on the dual blocks.
    """

    weights: np.ndarray
    kind: str = "custom"
    sizes: tuple = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size == 0 or np.any(~(self.weights > 0)):
            raise ConfigurationError(f"metric '{self.kind}' needs strictly positive weights")

    @classmethod
    def D(cls, dims, gamma, sigma):
        w = np.concatenate((1.0 / np.asarray(gamma, float), 1.0 / np.asarray(sigma, float)))
        return cls(w, "D", dims.primal_dims + dims.dual_dims)

    @classmethod
    def M(cls, dims, mu_g, mu_h):
        return cls(np.concatenate((mu_g, mu_h)), "M", dims.primal_dims + dims.dual_dims)

    @classmethod
    def M_g(cls, dims, mu_g):
        return cls(mu_g, "M_g", dims.primal_dims)

    @classmethod
    def M_h(cls, dims, mu_h):
        return cls(mu_h, "M_h", dims.dual_dims)

    @classmethod
    def Pi_inv_D(cls, dims, p, gamma, sigma):
        p = np.asarray(p, dtype=float)
        w = np.concatenate((1.0 / (p * gamma), 1.0 / (p * sigma)))
        return cls(w, "Pi_inv_D", dims.primal_dims + dims.dual_dims)

    def coordinate_weights(self, sizes=None):
        sizes = self.sizes if sizes is None else sizes
        if sizes is None or len(sizes) != self.weights.size:
            raise StructuralError("metric weights do not match the block structure")
        return np.repeat(self.weights, sizes)

    def norm_sq(self, z):
        if isinstance(z, PrimalDualPoint):
            sizes = z.x.sizes + z.u.sizes
            flat = z.stack()
        elif isinstance(z, BlockVector):
            sizes, flat = z.sizes, z.data
        else:
            raise StructuralError("metric_norm_sq expects a BlockVector or PrimalDualPoint")
        w = self.coordinate_weights(sizes)
        return float(np.dot(w * flat, flat))


class SaddleMetricP:
    """The saddle metric ``P = [[G^-1, -L^T], [-L, S^-1]]``.

    ``G`` and ``S`` are the diagonal primal and dual stepsize matrices.
    """

    def __init__(self, gamma, sigma, L):
        self.gamma = np.asarray(gamma, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.L = L
        if np.any(~(self.gamma > 0)) or np.any(~(self.sigma > 0)):
            raise ConfigurationError("stepsizes defining P must be positive")
        dims = L.dims
        self._gx = np.repeat(1.0 / self.gamma, dims.primal_dims)
        self._su = np.repeat(1.0 / self.sigma, dims.dual_dims)

    def norm_sq_flat(self, x, u):
        Lx = self.L.dense @ x
        return float(np.dot(self._gx * x, x) + np.dot(self._su * u, u) - 2.0 * np.dot(Lx, u))

    def norm_sq(self, z):
        return self.norm_sq_flat(z.x.data, z.u.data)

    def schur_complement(self):
        Ld = self.L.dense
        s = np.repeat(self.sigma, self.L.dims.dual_dims)
        return np.diag(self._gx) - Ld.T @ (s[:, None] * Ld)

    def is_positive_definite(self, max_dim=2000):
        """Cholesky test on ``G^-1 - L^T S L``.

        Returns ``None`` when the problem is larger than ``max_dim`` and the
        test is skipped.
        """
        if self.L.dims.n > max_dim:
            return None
        try:
            np.linalg.cholesky(self.schur_complement())
        except np.linalg.LinAlgError:
            return False
        return True


def metric_norm_sq(z, metric):
    """Squared norm of ``z`` induced by ``metric``."""
    return metric.norm_sq(z)


def operator_norm(A, tol=1e-10, max_iter=10_000, seed=0):
    """Spectral norm of a dense matrix by power iteration on ``A^T A``.

    ``A A^T`` is used instead when it is the smaller of the two.

    The start vector is drawn from a generator with a fixed seed, so the
    result is reproducible. A warning is issued when ``max_iter`` is reached;
    the best estimate is returned in that case.

    Parameters
    ----------
    A : array_like
        Dense matrix (a block, block row or block column of ``L``).
    tol : float
        Relative-change stopping tolerance on the eigenvalue estimate.

    Returns
    -------
    float
    """
    if tol <= 0:
        raise ConfigurationError("operator_norm needs tol > 0")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0 or not np.any(A):
        return 0.0
    # same nonzero spectrum, smaller Gram matrix
    AtA = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    v = np.random.default_rng(seed).standard_normal(AtA.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = AtA @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        warnings.warn(f"operator_norm hit the iteration cap ({max_iter}); "
                      "returning the best estimate", RuntimeWarning, stacklevel=2)
    lam = max(lam, float(v @ AtA @ v))
    return float(np.sqrt(lam))
