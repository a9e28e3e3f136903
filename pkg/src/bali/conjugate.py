"""Exact conjugate inference for Gaussian linear models.

Three models are covered: the univariate-output Gaussian linear model, the
multivariate Bayesian linear regression with a known noise covariance, and
the matrix-normal inverse-Wishart (MNIW) model with unknown noise covariance.

Weight matrices are ``Dx x Dy`` (inputs by outputs) and ``vec`` stacks
columns, so a matrix-normal ``MN(M, R, S)`` has ``cov(vec W) = S kron R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    CholeskyFactor,
    DimensionMismatch,
    NotPositiveDefinite,
    RngStream,
    cholesky,
    kron,
    sample_gaussian,
    symmetrize,
)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class GlmPosterior:
    m: np.ndarray
    V: np.ndarray

    @property
    def precision_mean(self) -> np.ndarray:
        return cholesky(self.V).solve(self.m)


@dataclass(frozen=True)
class MatrixNormal:
    M: np.ndarray
    R: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        dx, dy = self.M.shape
        if self.R.shape != (dx, dx) or self.S.shape != (dy, dy):
            raise DimensionMismatch(
                f"scale shapes {self.R.shape}, {self.S.shape} do not match mean {self.M.shape}"
            )

    @classmethod
    def conjugate(cls, M0, R0, sigma) -> "MatrixNormal":
        """Weight prior whose column scale is the noise covariance itself."""
        return cls(_as_matrix(M0, "M0"), _as_matrix(R0, "R0"), _as_matrix(sigma, "sigma"))

    @property
    def cov(self) -> np.ndarray:
        """Covariance of ``vec(W)``, i.e. ``S kron R``."""
        return kron(self.S, self.R)


@dataclass(frozen=True)
class InverseWishart:
    U: np.ndarray
    u: float

    def __post_init__(self):
        dy = self.U.shape[0]
        if self.U.shape != (dy, dy):
            raise DimensionMismatch(f"U must be square, got {self.U.shape}")
        if not self.u > dy - 1:
            raise ValueError(f"degrees of freedom u={self.u} must exceed Dy-1={dy - 1}")


@dataclass(frozen=True)
class MniwParams:
    """Matrix-normal inverse-Wishart parameters ``(M, R, U, u)``.

    Used for both priors and posteriors: ``W | Sigma ~ MN(M, R, Sigma)`` and
    ``Sigma ~ IW(U, u)``.
    """

    M: np.ndarray
    R: np.ndarray
    U: np.ndarray
    u: float

    def __post_init__(self):
        dx, dy = self.M.shape
        if self.R.shape != (dx, dx) or self.U.shape != (dy, dy):
            raise DimensionMismatch(
                f"R {self.R.shape} / U {self.U.shape} inconsistent with M {self.M.shape}"
            )
        if not self.u > dy - 1:
            raise ValueError(f"degrees of freedom u={self.u} must exceed Dy-1={dy - 1}")

    @property
    def dx(self) -> int:
        return self.M.shape[0]

    @property
    def dy(self) -> int:
        return self.M.shape[1]

    @property
    def inverse_wishart(self) -> InverseWishart:
        return InverseWishart(self.U, self.u)

    @classmethod
    def isotropic(cls, dx: int, dy: int, sigma_r2: float, sigma_u2: float, u0: float):
        return cls(np.zeros((dx, dy)), sigma_r2 * np.eye(dx), sigma_u2 * np.eye(dy), float(u0))


# MniwPrior and MniwPosterior share one representation.
MniwPrior = MniwParams
MniwPosterior = MniwParams


def glm_posterior(X, y, m0, V0, sigma) -> GlmPosterior:
    """Posterior of ``y = X w + e``, ``e ~ N(0, sigma)``, ``w ~ N(m0, V0)``.

    Natural parameters add: ``V^-1 = V0^-1 + X' sigma^-1 X`` and
    ``eta = V0^-1 m0 + X' sigma^-1 y``.
    """
    m0 = np.asarray(m0, dtype=float).ravel()
    d = m0.size
    V0 = _as_matrix(V0, "V0")
    X = np.asarray(X, dtype=float).reshape(-1, d)
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if y.size != n or V0.shape != (d, d):
        raise DimensionMismatch("inconsistent shapes in glm_posterior")
    v0_chol = cholesky(V0)
    prec = v0_chol.inverse()
    eta = v0_chol.solve(m0)
    if n:
        sigma = _as_matrix(sigma, "sigma")
        if sigma.shape != (n, n):
            raise DimensionMismatch(f"sigma must be {n}x{n}")
        s_chol = cholesky(sigma)
        prec = prec + X.T @ s_chol.solve(X)
        eta = eta + X.T @ s_chol.solve(y)
    p_chol = cholesky(symmetrize(prec))
    return GlmPosterior(p_chol.solve(eta), p_chol.inverse())


def glm_predictive(post: GlmPosterior, x_star, noise_var: float) -> tuple[float, float]:
    x = np.asarray(x_star, dtype=float).ravel()
    if x.size != post.m.size:
        raise DimensionMismatch("test input has wrong dimension")
    return float(x @ post.m), float(x @ post.V @ x + noise_var)


def mvblr_posterior(X, Y, prior: MatrixNormal, sigma) -> MatrixNormal:
    """Matrix-normal posterior with known noise covariance ``sigma``.

    The prior must be conjugate, i.e. its column scale equals ``sigma``; the
    posterior mean is then independent of ``sigma``.
    """
    sigma = _as_matrix(sigma, "sigma")
    if prior.S.shape != sigma.shape or not np.allclose(prior.S, sigma, rtol=1e-12, atol=0):
        raise ValueError("prior column scale must equal the noise covariance")
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    dx, dy = prior.M.shape
    if X.shape[1] != dx or Y.shape[1] != dy or X.shape[0] != Y.shape[0]:
        raise DimensionMismatch("X/Y shapes inconsistent with the prior")
    cholesky(sigma)
    r0 = cholesky(prior.R)
    p_chol = cholesky(symmetrize(r0.inverse() + X.T @ X))
    M = p_chol.solve(r0.solve(prior.M) + X.T @ Y)
    return MatrixNormal(M, p_chol.inverse(), sigma.copy())


@dataclass(frozen=True)
class MniwFit:
    """Posterior parameters with the Cholesky factors of ``R^-1`` and ``U``."""

    post: MniwParams
    prec_chol: CholeskyFactor
    u_chol: CholeskyFactor


@dataclass(frozen=True)
class PriorTerms:
    """Data-independent pieces of the posterior update, computed once per prior."""

    r0_inv: np.ndarray
    h0: np.ndarray  # R0^-1 M0
    quad0: np.ndarray  # M0' R0^-1 M0

    @classmethod
    def of(cls, prior: MniwParams) -> "PriorTerms":
        r0 = cholesky(prior.R)
        q0 = r0.solve_lower(prior.M)
        return cls(r0.inverse(), r0.solve(prior.M), q0.T @ q0)


def mniw_from_stats(
    prior: MniwParams, xx, xy, yy, n: float, terms: PriorTerms | None = None
) -> MniwFit:
    """MNIW posterior from sufficient statistics ``X'X, X'Y, Y'Y`` and count ``n``.

    Quadratic forms are evaluated through triangular solves against the
    precision factor so ``U`` never involves an explicit inverse of ``R``.
    """
    terms = terms or PriorTerms.of(prior)
    p_chol = cholesky(symmetrize(terms.r0_inv + xx))
    q = p_chol.solve_lower(terms.h0 + xy)
    M = p_chol.solve_upper(q)
    U = symmetrize(prior.U + terms.quad0 - q.T @ q + yy)
    try:
        u_chol = cholesky(U)
    except NotPositiveDefinite as err:
        raise NotPositiveDefinite(f"posterior scale U is not SPD: {err}") from None
    if u_chol.jitter:
        U = U + u_chol.jitter * np.eye(U.shape[0])
    return MniwFit(MniwParams(M, p_chol.inverse(), U, prior.u + n), p_chol, u_chol)


def mniw_posterior(X, Y, prior: MniwParams) -> MniwParams:
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0] or X.shape[1] != prior.dx or Y.shape[1] != prior.dy:
        raise DimensionMismatch("X/Y shapes inconsistent with the prior")
    return mniw_from_stats(prior, X.T @ X, X.T @ Y, Y.T @ Y, X.shape[0]).post


# Natural-parameter representation of the MNIW family.


@dataclass(frozen=True)
class MniwNatural:
    theta1: np.ndarray  # -1/2 R^-1
    theta2: np.ndarray  # R^-1 M
    theta3: np.ndarray  # -1/2 (U + M' R^-1 M)
    theta4: float  # -1/2 (u + Dy + Dx + 1)

    def __add__(self, other: "MniwNatural") -> "MniwNatural":
        return MniwNatural(
            self.theta1 + other.theta1,
            self.theta2 + other.theta2,
            self.theta3 + other.theta3,
            self.theta4 + other.theta4,
        )


def mniw_to_natural(p: MniwParams) -> MniwNatural:
    r_inv = np.linalg.inv(p.R)
    return MniwNatural(
        -0.5 * r_inv,
        r_inv @ p.M,
        -0.5 * (p.U + p.M.T @ r_inv @ p.M),
        -0.5 * (p.u + p.dy + p.dx + 1),
    )


def likelihood_natural(X, Y) -> MniwNatural:
    """Natural-parameter contribution of ``N`` observations."""
    X = _as_matrix(X, "X")
    Y = _as_matrix(Y, "Y")
    return MniwNatural(-0.5 * X.T @ X, X.T @ Y, -0.5 * Y.T @ Y, -0.5 * X.shape[0])


def mniw_from_natural(theta: MniwNatural) -> MniwParams:
    dx, dy = theta.theta2.shape
    R = np.linalg.inv(-2.0 * theta.theta1)
    M = R @ theta.theta2
    U = -2.0 * theta.theta3 - M.T @ np.linalg.inv(R) @ M
    u = -2.0 * theta.theta4 - (dy + dx + 1)
    return MniwParams(M, symmetrize(R), symmetrize(U), u)


def iw_mode(iw, dy: int | None = None) -> np.ndarray:
    """Most likely noise covariance ``U / (u + Dy + 1)``.

    ``iw`` is an ``InverseWishart`` or a plain ``(U, u)`` pair; the formula
    only needs a positive denominator.
    """
    U, u = (iw.U, iw.u) if isinstance(iw, InverseWishart) else iw
    U = _as_matrix(U, "U")
    dy = U.shape[0] if dy is None else dy
    denom = u + dy + 1
    if not denom > 0:
        raise ValueError(f"inverse-Wishart mode undefined for u={u}, Dy={dy}")
    return U / denom


def sample_matrix_normal(mn: MatrixNormal, rng: RngStream, size: int | None = None) -> np.ndarray:
    """Draw ``W = M + L_R A L_S'`` with ``A`` standard normal.

    With ``size`` the result stacks that many independent draws.
    """
    lr = cholesky(mn.R).lower
    ls = cholesky(mn.S).lower
    if size is None:
        a = sample_gaussian(rng, *mn.M.shape)
    else:
        a = rng.normal((size, *mn.M.shape))
    return mn.M + lr @ a @ ls.T
