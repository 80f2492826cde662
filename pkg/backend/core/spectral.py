"""
Grid-spectral route to e^eps(alpha).

The deformed generator is conjugated by exp(-V / 2 eps) into

    A = eps Lap + <F, grad> - W0 / eps - W1,
    F  = (1 - 2 alpha) b,
    W0 = 1/4 |grad V|^2 - 1/2 <b, grad V> + alpha (1 - alpha) |b|^2,
    W1 = -1/2 Lap V + alpha div b,

and discretized by second-order central differences on a Dirichlet box.
The advection term is written in skew-symmetric form
1/2 (F.D + D.F) - 1/2 div F, so the matrix at alpha is the exact transpose
of the matrix at 1 - alpha.
"""

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from app.config import settings
from core.errors import ConfigError, EpflowWarning, NumericalGuardError
from core.model import CriticalPoint, DriftModel, find_critical_points
from core.riccati import RiccatiError, build_coeffs, leading_eig_linear, linearize, solve_are
from utils.logging import get_logger, log_eigensolve

logger = get_logger(__name__)


class GridTooCoarse(NumericalGuardError):
    pass


class NoConvergence(NumericalGuardError):
    pass


class SignFlip(NumericalGuardError):
    pass


class PositivityLoss(NumericalGuardError):
    pass


class NegativePotential(EpflowWarning):
    pass


class CflWarning(EpflowWarning):
    pass


class MemoryWarning(EpflowWarning):
    pass


class ShortMargin(EpflowWarning):
    pass


Box = Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class GridSpec:
    box: Box
    n_per_dim: int
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.n_per_dim < settings.MIN_POINTS_PER_DIM:
            raise ConfigError(f"n_per_dim must be at least {settings.MIN_POINTS_PER_DIM}, got {self.n_per_dim}")
        if any(hi <= lo for lo, hi in self.box):
            raise ConfigError(f"Empty grid box {self.box}")
        if self.boundary != "dirichlet":
            raise ConfigError("Only Dirichlet boundaries are supported")

    @classmethod
    def cube(cls, lo: float, hi: float, n_per_dim: int, dim: int = 2) -> "GridSpec":
        return cls(box=tuple((float(lo), float(hi)) for _ in range(dim)), n_per_dim=int(n_per_dim))

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (self.n_per_dim - 1) for lo, hi in self.box])

    @property
    def h(self) -> float:
        return float(self.spacing.max())

    @property
    def interior_shape(self) -> Tuple[int, ...]:
        return (self.n_per_dim - 2,) * self.dim

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.interior_shape))

    def interior_axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, self.n_per_dim)[1:-1] for lo, hi in self.box]

    def interior_points(self) -> np.ndarray:
        """Interior nodes, first coordinate slowest."""
        mesh = np.meshgrid(*self.interior_axes(), indexing='ij')
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def nearest_node(self, x) -> int:
        x = np.asarray(x, dtype=float)
        idx = [
            int(np.clip(np.argmin(np.abs(axis - xi)), 0, len(axis) - 1))
            for axis, xi in zip(self.interior_axes(), x)
        ]
        return int(np.ravel_multi_index(idx, self.interior_shape))


@dataclass(frozen=True)
class DeformedOperator:
    alpha: float
    eps: float
    grid: GridSpec
    entries: sparse.csr_matrix
    W0: np.ndarray
    W1: np.ndarray
    V: np.ndarray
    # semiclassical prediction max_j e_j(alpha), None when no Riccati solution exists
    prediction: Optional[float] = None
    critical_nodes: Tuple[int, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class SpectralResult:
    eigenvalue: float
    eigvec: np.ndarray
    residual: float
    grid: GridSpec
    alpha: float
    eps: float
    iterations: int


@dataclass(frozen=True)
class SweepPoint:
    eps: float
    result: SpectralResult
    reference: Optional[float]

    @property
    def error(self) -> Optional[float]:
        if self.reference is None:
            return None
        return abs(self.result.eigenvalue - self.reference)


@dataclass(frozen=True)
class InitialMeasure:
    """Initial law of the Feynman-Kac average: a point mass or mu0."""
    kind: str
    x0: Optional[Tuple[float, ...]] = None

    @classmethod
    def point(cls, x0) -> "InitialMeasure":
        return cls(kind="point", x0=tuple(float(v) for v in x0))

    @classmethod
    def mu0(cls) -> "InitialMeasure":
        return cls(kind="mu0")


# ---------------------------------------------------------------------------
# Grid policy
# ---------------------------------------------------------------------------

def _local_widths(points: Sequence[CriticalPoint], alpha: float, eps: float) -> Tuple[List[float], bool]:
    """Gaussian widths sqrt(eps / lambda_min(X_j)) of the local ground states."""
    widths = []
    exact = True
    for p in points:
        try:
            X = solve_are(build_coeffs(linearize(p), alpha)).X
            lam_min = float(np.linalg.eigvalsh(X).min())
        except RiccatiError:
            lam_min = -1.0
        if lam_min <= 0.0:
            exact = False
            lam_min = 0.5 * float(np.abs(np.linalg.eigvalsh(p.hess)).min())
        widths.append(math.sqrt(eps / lam_min))
    return widths, exact


def grid_for(model: DriftModel, alpha: float, eps: float,
             points_per_width: Optional[int] = None,
             critical_points: Optional[List[CriticalPoint]] = None) -> GridSpec:
    """
    Box and spacing for (alpha, eps).

    The cube covers every critical point with a margin of BOX_MARGIN_WIDTHS
    times the widest local ground state. The spacing resolves the narrowest
    ground state with points_per_width nodes and keeps h |F| <= 1.9 eps so
    that every off-diagonal entry stays nonnegative.
    """
    points = find_critical_points(model) if critical_points is None else critical_points
    if not points:
        raise ConfigError(f"Model {model.name} has no critical points to centre a grid on")
    ppw = points_per_width or settings.POINTS_PER_WIDTH
    widths, _ = _local_widths(points, alpha, eps)
    margin = settings.BOX_MARGIN_WIDTHS * max(widths)
    locations = np.array([p.location for p in points])
    lo = float(locations.min() - margin)
    hi = float(locations.max() + margin)

    h = min(widths) / ppw
    nodes = GridSpec.cube(lo, hi, 101, model.dim).interior_points()
    f_max = abs(1.0 - 2.0 * alpha) * float(np.max(np.abs(model.b(nodes))))
    if f_max > 0.0:
        h = min(h, 1.9 * eps / f_max)

    n = max(settings.MIN_POINTS_PER_DIM, int(math.ceil((hi - lo) / h)) + 1)
    if n > settings.MAX_POINTS_PER_DIM:
        logger.warning(
            f"Grid policy asks for {n} points per dimension at eps={eps:g}; capped at {settings.MAX_POINTS_PER_DIM}"
        )
        n = settings.MAX_POINTS_PER_DIM
    grid = GridSpec.cube(lo, hi, n, model.dim)
    logger.debug(f"Grid for alpha={alpha:g}, eps={eps:g}: box [{lo:.4g}, {hi:.4g}]^{model.dim}, n={n}")
    return grid


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _kron_along(op: sparse.spmatrix, axis: int, sizes: Sequence[int]) -> sparse.csr_matrix:
    factors = [op if d == axis else sparse.identity(m, format='csr') for d, m in enumerate(sizes)]
    return reduce(lambda a, b: sparse.kron(a, b, format='csr'), factors)


def box_margin(grid: GridSpec, points: Sequence[CriticalPoint]) -> float:
    """Smallest distance from a critical point to a face of the box (negative when outside)."""
    locations = np.array([p.location for p in points])
    lo = np.array([b[0] for b in grid.box])
    hi = np.array([b[1] for b in grid.box])
    return float(min((locations - lo).min(), (hi - locations).min()))


def assemble(model: DriftModel, alpha: float, eps: float, grid: GridSpec,
             critical_points: Optional[List[CriticalPoint]] = None) -> DeformedOperator:
    """
    Discretize the conjugated deformed generator.

    Args:
        model: Drift model (N <= 3)
        alpha: Deformation parameter
        eps: Noise strength
        grid: Dirichlet grid; boundary rows are eliminated
        critical_points: Precomputed critical points

    Returns:
        DeformedOperator with the sparse matrix and the nodal potentials
    """
    if eps <= 0.0:
        raise ConfigError("eps must be positive")
    if grid.dim != model.dim:
        raise ConfigError(f"Grid dimension {grid.dim} does not match model dimension {model.dim}")
    if model.dim > 3:
        raise ConfigError("The grid route supports N <= 3")
    if model.dim == 3:
        message = f"3D grid with {grid.n_nodes} unknowns; sparse factorization memory grows quickly"
        logger.warning(message)
        warnings.warn(message, MemoryWarning, stacklevel=2)

    points = find_critical_points(model) if critical_points is None else critical_points
    widths, exact = _local_widths(points, alpha, eps) if points else ([], False)
    if widths and grid.h > min(widths) / 6.0:
        raise GridTooCoarse(
            f"Grid spacing {grid.h:.4g} exceeds width/6 = {min(widths) / 6.0:.4g} at eps={eps:g}"
        )
    if widths:
        margin = box_margin(grid, points)
        wanted = settings.BOX_MARGIN_WIDTHS * max(widths)
        if margin < wanted * (1.0 - 1e-9):
            message = (f"Box leaves {margin:.4g} around the critical points, less than "
                       f"{settings.BOX_MARGIN_WIDTHS:g} widths ({wanted:.4g}); Dirichlet truncation may dominate")
            logger.warning(message)
            warnings.warn(message, ShortMargin, stacklevel=2)

    prediction = None
    if points and exact:
        try:
            prediction = max(leading_eig_linear(linearize(p), alpha) for p in points)
        except RiccatiError:
            prediction = None

    x = grid.interior_points()
    sizes = grid.interior_shape
    grad = model.grad_V(x)
    bx = model.b(x)
    lap_V = np.trace(model.hess_V(x), axis1=-2, axis2=-1)
    div_b = model.div_b(x)

    W0 = (0.25 * np.einsum('ij,ij->i', grad, grad)
          - 0.5 * np.einsum('ij,ij->i', bx, grad)
          + alpha * (1.0 - alpha) * np.einsum('ij,ij->i', bx, bx))
    W1 = -0.5 * lap_V + alpha * div_b
    if W0.min() < -1e-9:
        message = f"W0 reaches {W0.min():.3e} on the grid at alpha={alpha:g}; alpha may lie outside the admissible interval"
        logger.warning(message)
        warnings.warn(message, NegativePotential, stacklevel=2)

    F = (1.0 - 2.0 * alpha) * bx
    div_F = (1.0 - 2.0 * alpha) * div_b

    matrix = sparse.csr_matrix((grid.n_nodes, grid.n_nodes))
    for d, (m, h) in enumerate(zip(sizes, grid.spacing)):
        second = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(m, m)) / h ** 2
        first = sparse.diags([-1.0, 1.0], [-1, 1], shape=(m, m)) / (2.0 * h)
        D = _kron_along(first, d, sizes)
        Fd = sparse.diags(F[:, d])
        matrix = matrix + eps * _kron_along(second, d, sizes) + 0.5 * (Fd @ D + D @ Fd)
    matrix = matrix - sparse.diags(W0 / eps + W1 + 0.5 * div_F)

    critical_nodes = tuple(grid.nearest_node(p.location) for p in points)
    logger.debug(f"Assembled operator alpha={alpha:g}, eps={eps:g}: {grid.n_nodes} nodes, nnz={matrix.nnz}")
    return DeformedOperator(
        alpha=float(alpha), eps=float(eps), grid=grid, entries=matrix.tocsr(),
        W0=W0, W1=W1, V=model.V(x), prediction=prediction, critical_nodes=critical_nodes,
    )


# ---------------------------------------------------------------------------
# Leading eigenpair
# ---------------------------------------------------------------------------

def default_shift(op: DeformedOperator) -> float:
    """Semiclassical prediction + 1, else 1 + max of -W0/eps - W1 at critical nodes."""
    if op.prediction is not None:
        return op.prediction + 1.0
    nodes = list(op.critical_nodes) or [int(np.argmin(op.W0))]
    return 1.0 + float(np.max(-op.W0[nodes] / op.eps - op.W1[nodes]))


def leading_eigpair(op: DeformedOperator, tol: Optional[float] = None,
                    max_iter: Optional[int] = None,
                    shift: Optional[float] = None) -> SpectralResult:
    """
    Rightmost eigenpair by shift-inverted iteration from a positive vector.

    Args:
        op: Assembled operator
        tol: Residual tolerance ||A psi - lambda psi|| / ||psi||
        max_iter: Iteration cap
        shift: Real shift right of the spectrum (default_shift when omitted)

    Returns:
        SpectralResult with the eigenvector normalized to max 1
    """
    tol = tol or settings.EIG_TOL
    max_iter = max_iter or settings.EIG_MAX_ITER
    sigma = default_shift(op) if shift is None else float(shift)
    A = op.entries
    n = A.shape[0]

    start = time.perf_counter()
    lu = splu((A - sigma * sparse.identity(n, format='csr')).tocsc())
    psi = np.ones(n) / math.sqrt(n)
    lam, residual = float("nan"), float("inf")
    for iteration in range(1, max_iter + 1):
        psi = lu.solve(psi)
        psi /= np.linalg.norm(psi)
        Apsi = A @ psi
        lam = float(psi @ Apsi)
        residual = float(np.linalg.norm(Apsi - lam * psi))
        if residual <= tol:
            break
    else:
        raise NoConvergence(
            f"Shift-inverted iteration did not reach residual {tol:g} in {max_iter} steps "
            f"(last residual {residual:.3e}, shift {sigma:.6g})"
        )

    if psi.sum() < 0.0:
        psi = -psi
    psi = psi / psi.max()
    if psi.min() < -1e-8:
        raise SignFlip(
            f"Converged eigenvector changes sign (min {psi.min():.3e}); enlarge the box or refine the grid"
        )
    # entries at roundoff level are clamped to the smallest positive float
    clamped = int(np.count_nonzero(psi <= 0.0))
    if clamped:
        logger.debug(f"Clamped {clamped} eigenvector entries in [{psi.min():.3e}, 0] to the smallest positive float")
    psi = np.maximum(psi, np.finfo(float).tiny)

    log_eigensolve(logger, op.alpha, op.eps, lam, residual, iteration, n)
    logger.debug(f"Eigensolve took {time.perf_counter() - start:.2f}s with shift {sigma:.6g}")
    return SpectralResult(eigenvalue=lam, eigvec=psi, residual=residual, grid=op.grid,
                          alpha=op.alpha, eps=op.eps, iterations=iteration)


def eigvec_rows(result: SpectralResult) -> List[Tuple[float, ...]]:
    """(x1, ..., xN, psi) per interior node."""
    x = result.grid.interior_points()
    return [tuple(row) + (float(v),) for row, v in zip(x.tolist(), result.eigvec)]


def e_eps_sweep(model: DriftModel, alpha: float, eps_list: Sequence[float],
                points_per_width: Optional[int] = None, threads: int = 1,
                critical_points: Optional[List[CriticalPoint]] = None) -> List[SweepPoint]:
    """
    Leading eigenvalue for a decreasing list of eps, each on its own grid.

    The reference value is the semiclassical limit max_j e_j(alpha).
    """
    eps_values = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
        raise ConfigError("eps_list must be strictly decreasing")
    points = find_critical_points(model) if critical_points is None else critical_points

    def job(eps: float) -> SweepPoint:
        grid = grid_for(model, alpha, eps, points_per_width, points)
        op = assemble(model, alpha, eps, grid, points)
        return SweepPoint(eps=eps, result=leading_eigpair(op), reference=op.prediction)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        sweep = list(pool.map(job, eps_values))
    for point in sweep:
        if point.error is not None:
            logger.info(f"eps={point.eps:g}: lambda={point.result.eigenvalue:.8g}, error to limit {point.error:.3e}")
    if not errors_nonincreasing(sweep):
        logger.warning("Sweep errors are not nonincreasing within 20% slack")
    return sweep


def errors_nonincreasing(sweep: Sequence[SweepPoint], slack: float = 0.2) -> bool:
    errors = [p.error for p in sweep if p.error is not None]
    return all(b <= a * (1.0 + slack) for a, b in zip(errors, errors[1:]))


# ---------------------------------------------------------------------------
# Finite-time Feynman-Kac propagation
# ---------------------------------------------------------------------------

GridFunction = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, None]


def _node_weights(model: DriftModel, grid: GridSpec, lam: InitialMeasure, V: np.ndarray, eps: float) -> np.ndarray:
    if lam.kind == "point":
        weights = np.zeros(grid.n_nodes)
        weights[grid.nearest_node(lam.x0)] = 1.0
        return weights
    if lam.kind == "mu0":
        if not model.is_quadratic:
            raise ConfigError("The Gaussian reference measure needs a quadratic potential")
        log_w = -V / eps
        weights = np.exp(log_w - log_w.max())
        return weights / weights.sum()
    raise ConfigError(f"Unknown initial measure '{lam.kind}'")


def fk_propagate(model: DriftModel, alpha: float, eps: float, grid: GridSpec,
                 g: GridFunction = None, lam: Optional[InitialMeasure] = None,
                 t: float = 1.0, dt: Optional[float] = None,
                 critical_points: Optional[List[CriticalPoint]] = None) -> float:
    """
    Finite-time moment generating function chi_t(alpha).

    u = exp(-V / 2 eps) g^alpha is evolved under the conjugated operator with
    Crank-Nicolson steps; the result is averaged against the initial
    measure after undoing the conjugation and the g^alpha factor.

    Args:
        model: Drift model
        alpha: Deformation parameter
        eps: Noise strength
        grid: Dirichlet grid
        g: Positive boundary-term function (evaluator or node values), g = 1 if omitted
        lam: Initial measure (point mass at the origin if omitted)
        t: Horizon
        dt: Time step (settings.FK_DT if omitted)

    Returns:
        chi_t(alpha)
    """
    dt = dt or settings.FK_DT
    if t < 0.0:
        raise ConfigError("Horizon must be nonnegative")
    if dt > 1e-2:
        message = f"Time step {dt:g} > 1e-2; Crank-Nicolson stays stable but loses accuracy"
        logger.warning(message)
        warnings.warn(message, CflWarning, stacklevel=2)
    lam = lam or InitialMeasure.point(np.zeros(model.dim))

    op = assemble(model, alpha, eps, grid, critical_points)
    x = grid.interior_points()
    if g is None:
        g_nodes = np.ones(grid.n_nodes)
    elif callable(g):
        g_nodes = np.asarray(g(x), dtype=float)
    else:
        g_nodes = np.asarray(g, dtype=float)
    if g_nodes.shape != (grid.n_nodes,) or np.any(g_nodes <= 0.0):
        raise ConfigError("g must be strictly positive on the grid")
    weights = _node_weights(model, grid, lam, op.V, eps)

    log_g = np.log(g_nodes)
    u = np.exp(-op.V / (2.0 * eps) + alpha * log_g)

    n_steps = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    if n_steps:
        step = t / n_steps
        eye = sparse.identity(grid.n_nodes, format='csr')
        lhs = splu((eye - 0.5 * step * op.entries).tocsc())
        rhs = (eye + 0.5 * step * op.entries).tocsr()
        for k in range(n_steps):
            u = lhs.solve(rhs @ u)
            if u.min() < -1e-10 * u.max():
                raise PositivityLoss(
                    f"Evolved field turned negative at step {k + 1} (t={(k + 1) * step:.4g}); reduce dt"
                )

    support = weights > 0.0
    factor = np.zeros(grid.n_nodes)
    factor[support] = np.exp(np.log(weights[support]) - alpha * log_g[support] + op.V[support] / (2.0 * eps))
    chi = float(factor @ u)
    logger.debug(f"chi_t(alpha={alpha:g}) at t={t:g}, eps={eps:g}: {chi:.12g}")
    return chi
