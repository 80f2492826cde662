"""
Quadratic-model analysis at a single critical point.

The algebraic Riccati equation

    X^2 - 1/2 B^T X - 1/2 X B - K = 0

is solved for its maximal symmetric solution through the anti-stable
invariant subspace of the block matrix [[-B/2, I], [K, B^T/2]]. The trace of
that solution gives the local leading-eigenvalue curve e_j(alpha).
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from app.config import settings
from core.errors import InvalidParams, NumericalGuardError
from utils.logging import get_logger

logger = get_logger(__name__)


class RiccatiError(NumericalGuardError):
    pass


class SpectralSplitFailure(RiccatiError):
    pass


class SingularBasis(RiccatiError):
    pass


class AsymmetricSolution(RiccatiError):
    pass


class ResidualTooLarge(RiccatiError):
    pass


class NotMaximal(RiccatiError):
    pass


@dataclass(frozen=True)
class LocalLinearization:
    C: np.ndarray
    Bm: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        Bm = np.atleast_2d(np.asarray(self.Bm, dtype=float))
        if C.shape != Bm.shape or C.shape[0] != C.shape[1]:
            raise InvalidParams(f"Linearization blocks must be square and equal in size, got {C.shape}, {Bm.shape}")
        if abs(np.linalg.det(C)) < settings.DEGENERATE_DET_TOL:
            raise InvalidParams("Linearization has a singular Hessian")
        object.__setattr__(self, "C", 0.5 * (C + C.T))
        object.__setattr__(self, "Bm", Bm)

    @property
    def dim(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class AreCoefficients:
    B_alpha: np.ndarray
    K_alpha: np.ndarray
    alpha: float

    @property
    def dim(self) -> int:
        return self.B_alpha.shape[0]


@dataclass(frozen=True)
class AreSolution:
    X: np.ndarray
    residual: float
    stability_margin: float
    alpha: float
    newton_steps: int = 0


def linearize(point) -> LocalLinearization:
    """Quadratic data (D2V, Db) at a critical point."""
    return LocalLinearization(C=point.hess, Bm=point.jac)


def build_coeffs(lin: LocalLinearization, alpha: float) -> AreCoefficients:
    C, Bm = lin.C, lin.Bm
    alpha = float(alpha)
    K = 0.25 * C @ C - 0.25 * (Bm.T @ C + C @ Bm) + alpha * (1.0 - alpha) * (Bm.T @ Bm)
    return AreCoefficients(
        B_alpha=(1.0 - 2.0 * alpha) * Bm,
        K_alpha=0.5 * (K + K.T),
        alpha=alpha,
    )


def hamiltonian(coeffs: AreCoefficients) -> np.ndarray:
    B, K = coeffs.B_alpha, coeffs.K_alpha
    n = coeffs.dim
    return np.block([
        [-0.5 * B, np.eye(n)],
        [K, 0.5 * B.T],
    ])


def are_residual(X: np.ndarray, coeffs: AreCoefficients) -> np.ndarray:
    B, K = coeffs.B_alpha, coeffs.K_alpha
    return X @ X - 0.5 * B.T @ X - 0.5 * X @ B - K


def _check_split(eigenvalues: np.ndarray, coeffs: AreCoefficients) -> None:
    gap = float(np.min(np.abs(eigenvalues.real)))
    if gap < settings.SPLIT_TOL:
        raise SpectralSplitFailure(
            f"Hamiltonian at alpha={coeffs.alpha:.6g} has an eigenvalue with |Re| = {gap:.3e}; "
            f"alpha is at or beyond the edge of the admissible interval"
        )


def solve_are(coeffs: AreCoefficients, refine: bool = True) -> AreSolution:
    """
    Maximal symmetric solution of the Riccati equation.

    The ordered real Schur form puts the N anti-stable eigenvalues first;
    with [U1; U2] spanning that subspace, X = U2 U1^-1. Optional Newton
    steps (one Lyapunov solve each) polish the residual before the
    solution is certified.

    Args:
        coeffs: Riccati coefficients at a fixed alpha
        refine: Run Newton refinement when the residual exceeds 1e-12

    Returns:
        AreSolution with residual and stability certificates
    """
    n = coeffs.dim
    H = hamiltonian(coeffs)
    _check_split(linalg.eigvals(H), coeffs)

    _, Z, sdim = linalg.schur(H, output='real', sort='rhp')
    if sdim != n:
        raise SpectralSplitFailure(
            f"Expected {n} anti-stable eigenvalues at alpha={coeffs.alpha:.6g}, found {sdim}"
        )
    U1, U2 = Z[:n, :n], Z[n:, :n]
    cond = np.linalg.cond(U1)
    if not np.isfinite(cond) or cond > settings.BASIS_COND_MAX:
        raise SingularBasis(f"Invariant subspace basis has condition number {cond:.3e}")

    X = linalg.solve(U1.T, U2.T).T
    asymmetry = np.linalg.norm(X - X.T) / max(1.0, np.linalg.norm(X))
    if asymmetry > settings.ASYMMETRY_TOL:
        raise AsymmetricSolution(f"Solution asymmetry {asymmetry:.3e} exceeds {settings.ASYMMETRY_TOL:g}")
    X = 0.5 * (X + X.T)

    residual = np.linalg.norm(are_residual(X, coeffs))
    steps = 0
    while refine and residual > 1e-12 and steps < 3:
        M = X - 0.5 * coeffs.B_alpha
        delta = linalg.solve_continuous_lyapunov(M.T, -are_residual(X, coeffs))
        candidate = X + 0.5 * (delta + delta.T)
        candidate_residual = np.linalg.norm(are_residual(candidate, coeffs))
        if candidate_residual >= residual:
            break
        X, residual = candidate, candidate_residual
        steps += 1

    if residual > settings.RESIDUAL_TOL:
        raise ResidualTooLarge(f"Riccati residual {residual:.3e} at alpha={coeffs.alpha:.6g}")
    margin = float(np.max(np.linalg.eigvals(-X + 0.5 * coeffs.B_alpha).real))
    if margin >= 0.0:
        raise NotMaximal(f"-X + B/2 is not stable (max Re = {margin:.3e})")

    logger.debug(
        f"ARE alpha={coeffs.alpha:.6g}: tr X={np.trace(X):.12g}, residual={residual:.2e}, "
        f"margin={margin:.4g}, newton steps={steps}"
    )
    return AreSolution(X=X, residual=float(residual), stability_margin=margin,
                       alpha=coeffs.alpha, newton_steps=steps)


def leading_eig_linear(lin: LocalLinearization, alpha: float) -> float:
    """e_j(alpha) = -tr X + 1/2 tr C - alpha tr Bm."""
    solution = solve_are(build_coeffs(lin, alpha))
    return float(-np.trace(solution.X) + 0.5 * np.trace(lin.C) - alpha * np.trace(lin.Bm))


def trace_via_hamiltonian(coeffs: AreCoefficients) -> float:
    """
    tr X of the maximal solution from the block-matrix spectrum alone.

    The spectrum is symmetric under lambda -> -conj(lambda) and its
    anti-stable half is the spectrum of X - B/2, so
    tr X = 1/2 (tr B + sum |Re lambda|).
    """
    eigenvalues = linalg.eigvals(hamiltonian(coeffs))
    _check_split(eigenvalues, coeffs)
    return float(0.5 * (np.trace(coeffs.B_alpha) + np.sum(np.abs(eigenvalues.real))))


def equilibrium_test(lin: LocalLinearization, tol: float = 1e-10) -> bool:
    """
    Whether the linearization is in equilibrium (e_j vanishes identically).

    With A = C - Bm, e_j(1/2) = 1/2 (tr A - ||A||_*) where ||.||_* is the
    nuclear norm; it vanishes exactly when A is symmetric positive
    semidefinite.
    """
    A = lin.C - lin.Bm
    nuclear = np.linalg.norm(A, 'nuc')
    return bool(nuclear - np.trace(A) <= tol * max(1.0, nuclear))


def mean_ep_lyapunov(lin: LocalLinearization) -> float:
    """
    Mean entropy production rate of the linear diffusion at this point.

    Uses the stationary covariance S of dX = -(C - Bm) X dt + sqrt(2) dW:
    m = tr((Bm^T Bm - Bm^T C) S) + tr Bm, independent of the noise level.
    """
    A = lin.C - lin.Bm
    if np.max(np.linalg.eigvals(-A).real) >= 0.0:
        raise InvalidParams("C - Bm is not stable; the linear diffusion has no stationary law")
    cov = linalg.solve_continuous_lyapunov(A, 2.0 * np.eye(lin.dim))
    Bm, C = lin.Bm, lin.C
    return float(np.trace((Bm.T @ Bm - Bm.T @ C) @ cov) + np.trace(Bm))
