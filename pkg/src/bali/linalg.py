"""Dense linear-algebra substrate.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 stored in C
(row-major) order throughout the package. ``vec`` is defined mathematically
as column stacking and does not depend on the storage order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

JITTER_BASE = 1e-9
JITTER_CAP = 1e-3
JITTER_GROWTH = 10.0
SYMMETRY_TOL = 1e-8


class LinAlgError(ValueError):
    pass


class NotPositiveDefinite(LinAlgError):
    pass


class NotSymmetric(LinAlgError):
    pass


class DimensionMismatch(ValueError):
    pass


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    ra, ca = a.shape
    rb, cb = b.shape
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(ra * rb, ca * cb)


def vec(a: np.ndarray) -> np.ndarray:
    """Stack the columns of ``a`` into a vector."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return a.reshape(-1, order="F").copy()


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != rows * cols:
        raise DimensionMismatch(f"cannot unvec length {v.size} into {rows}x{cols}")
    return np.ascontiguousarray(v.reshape(rows, cols, order="F"))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.abs(a).max(initial=0.0), 1e-300)
    if np.abs(a - a.T).max(initial=0.0) > tol * scale:
        raise NotSymmetric("matrix is not symmetric within relative tolerance %g" % tol)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor with ``lower @ lower.T == source + jitter * I``."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.lower, True), b, check_finite=False)

    def inverse(self) -> np.ndarray:
        if self.dim == 0:
            return np.zeros((0, 0))
        inv, info = lapack.dpotri(self.lower, lower=1)
        if info != 0:
            raise NotPositiveDefinite(f"potri failed with info={info}")
        lo = np.tril(inv)
        return lo + np.tril(inv, -1).T

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """``lower^{-1} b``."""
        return sla.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def solve_upper(self, b: np.ndarray) -> np.ndarray:
        """``lower^{-T} b``."""
        return sla.solve_triangular(self.lower, b, lower=True, trans="T", check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def cholesky(
    a: np.ndarray,
    jitter: float | None = None,
    cap: float | None = None,
) -> CholeskyFactor:
    """Cholesky factorization with geometric jitter escalation.

    The bare factorization is tried first. On failure, ``jitter * I`` is added
    starting from ``jitter`` (default ``1e-9 * mean(diag)``) and growing by a
    factor of ten up to ``cap`` (default ``1e-3 * mean(diag)``).
    """
    a = np.asarray(a, dtype=float)
    check_symmetric(a)
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    a = symmetrize(a)
    n = a.shape[0]
    if n == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    scale = float(np.mean(np.diag(a)))
    if not scale > 0:
        raise NotPositiveDefinite("matrix has non-positive mean diagonal")
    base = JITTER_BASE * scale if jitter is None else jitter
    top = JITTER_CAP * scale if cap is None else cap

    try:
        return CholeskyFactor(np.linalg.cholesky(a), 0.0)
    except np.linalg.LinAlgError:
        pass
    eps = base
    eye = np.eye(n)
    while eps <= top * (1 + 1e-12):
        try:
            return CholeskyFactor(np.linalg.cholesky(a + eps * eye), eps)
        except np.linalg.LinAlgError:
            eps *= JITTER_GROWTH
    raise NotPositiveDefinite(f"factorization failed up to jitter {top:.3g}")


def spd_inverse(a: np.ndarray) -> np.ndarray:
    return cholesky(a).inverse()


@dataclass
class RngStream:
    """A reproducible Gaussian stream identified by ``(seed, stream_id)``.

    ``draws`` counts consumed values; together with ``get_state`` it lets a
    checkpoint resume the stream exactly where it stopped.
    """

    seed: int
    stream_id: int = 0
    draws: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape) -> np.ndarray:
        out = self._gen.standard_normal(shape)
        self.draws += int(np.prod(shape))
        return out

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        out = self._gen.uniform(low, high, shape)
        self.draws += int(np.prod(shape))
        return out

    def permutation(self, n: int) -> np.ndarray:
        self.draws += n
        return self._gen.permutation(n)

    def bernoulli(self, p_keep: float, shape) -> np.ndarray:
        return self.uniform(shape) < p_keep

    def get_state(self) -> dict:
        return {
            "seed": int(self.seed),
            "stream_id": int(self.stream_id),
            "draws": int(self.draws),
            "bit_generator": self._gen.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        rng = cls(state["seed"], state["stream_id"])
        rng._gen.bit_generator.state = state["bit_generator"]
        rng.draws = int(state["draws"])
        return rng


def sample_gaussian(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    return rng.normal((rows, cols))
